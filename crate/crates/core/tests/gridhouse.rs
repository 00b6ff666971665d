use std::collections::{HashSet, VecDeque};

use mindqa::gridhouse::{
    encode_ppm, generate_house, geodesic_dist, render, shortest_path, spawn_at_distance, step,
    topdown, ActionType, AgentPose, Cell, DistanceField, Heading, HouseMap, RenderConfig, Tile,
};
use proptest::prelude::*;

fn bfs(house: &HouseMap, start: AgentPose, goal: Cell) -> Option<usize> {
    let mut seen = HashSet::from([start]);
    let mut q = VecDeque::from([(start, 0)]);
    while let Some((p, d)) = q.pop_front() {
        if p.cell == goal {
            return Some(d);
        }
        for a in [
            ActionType::Forward,
            ActionType::TurnLeft,
            ActionType::TurnRight,
        ] {
            let n = step(house, p, a);
            if seen.insert(n) {
                q.push_back((n, d + 1));
            }
        }
    }
    None
}

fn pose_in(house: &HouseMap, i: usize, h: usize) -> AgentPose {
    let cells = house.walkable_cells();
    AgentPose {
        cell: cells[i % cells.len()],
        heading: Heading::from_index(h % 4),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_houses_are_valid(seed in 0u64..10_000, rooms in 2usize..=4, size in 9usize..=14) {
        let h = generate_house(seed, rooms, size).unwrap();
        prop_assert!(h.validate().is_ok());
        prop_assert!(h.is_connected());
        let reach = h.flood_fill(h.walkable_cells()[0]);
        prop_assert_eq!(reach.iter().filter(|&&b| b).count(), h.walkable_cells().len());
        prop_assert!(!h.door_cells().is_empty());
        for o in &h.objects {
            prop_assert_eq!(h.tile(o.cell), Tile::Floor);
        }
    }

    #[test]
    fn shortest_path_matches_bfs(seed in 0u64..5_000, a in 0usize..400, b in 0usize..400, hd in 0usize..4) {
        let h = generate_house(seed, 3, 11).unwrap();
        let start = pose_in(&h, a, hd);
        let goal = h.walkable_cells()[b % h.walkable_cells().len()];
        let want = bfs(&h, start, goal).unwrap();
        let path = shortest_path(&h, start, goal).unwrap();
        prop_assert_eq!(path.last(), Some(&ActionType::Stop));
        prop_assert_eq!(path.len() - 1, want);
        prop_assert_eq!(geodesic_dist(&h, start, goal).unwrap() as usize, want);
        let end = path.iter().fold(start, |p, &a| step(&h, p, a));
        prop_assert_eq!(end.cell, goal);
    }

    #[test]
    fn turns_and_blocked_moves(seed in 0u64..5_000, a in 0usize..400, hd in 0usize..4) {
        let h = generate_house(seed, 2, 9).unwrap();
        let p = pose_in(&h, a, hd);
        let spun = (0..4).fold(p, |q, _| step(&h, q, ActionType::TurnLeft));
        prop_assert_eq!(spun, p);
        prop_assert_eq!(step(&h, step(&h, p, ActionType::TurnLeft), ActionType::TurnRight), p);
        prop_assert_eq!(step(&h, p, ActionType::Stop), p);
        let f = step(&h, p, ActionType::Forward);
        match p.cell.offset(p.heading) {
            Some(c) if h.walkable(c) => prop_assert_eq!(f.cell, c),
            _ => prop_assert_eq!(f, p),
        }
    }

    #[test]
    fn spawns_sit_at_their_distance(seed in 0u64..5_000, k in 1u32..15, s in any::<u64>()) {
        let h = generate_house(seed, 2, 9).unwrap();
        let target = h.approach_cells(0)[0].0;
        let sp = spawn_at_distance(&h, target, k, s).unwrap();
        prop_assert_eq!(geodesic_dist(&h, sp.pose, target).unwrap(), sp.distance);
        prop_assert!(sp.distance <= k);
        prop_assert_eq!(sp.fallback, sp.distance != k);
    }

    #[test]
    fn frames_are_pure_and_bounded(seed in 0u64..2_000, a in 0usize..400, hd in 0usize..4) {
        let h = generate_house(seed, 2, 9).unwrap();
        let p = pose_in(&h, a, hd);
        let cfg = RenderConfig::default();
        let o1 = render(&h, p, &cfg);
        let o2 = render(&h, p, &cfg);
        prop_assert_eq!(&o1, &o2);
        prop_assert!(o1.frame.to_chw().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(o1.frame.to_chw().len(), 3 * cfg.height * cfg.width);
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(
        generate_house(1, 2, 9).unwrap(),
        generate_house(1, 2, 9).unwrap()
    );
    assert_ne!(
        generate_house(1, 2, 9).unwrap(),
        generate_house(2, 2, 9).unwrap()
    );
}

#[test]
fn infeasible_sizes_fail() {
    assert!(generate_house(0, 1, 9).is_err());
    assert!(generate_house(0, 2, 5).is_err());
}

#[test]
fn house_json_round_trip() {
    let h = generate_house(7, 3, 11).unwrap();
    let back = HouseMap::from_json(&h.to_json()).unwrap();
    assert_eq!(back, h);
    assert!(HouseMap::from_json("{\"id\": 1}").is_err());
}

#[test]
fn distance_field_agrees_with_geodesic() {
    let h = generate_house(12, 3, 11).unwrap();
    let target = h.walkable_cells()[5];
    let field = DistanceField::new(&h, target).unwrap();
    for (p, d) in field.poses() {
        assert_eq!(geodesic_dist(&h, p, target).unwrap(), d);
    }
    assert_eq!(
        field.get(AgentPose {
            cell: target,
            heading: Heading::North
        }),
        Some(0)
    );
}

#[test]
fn ppm_and_topdown_shapes() {
    let h = generate_house(3, 2, 9).unwrap();
    let f = topdown(&h, 4);
    assert_eq!((f.height, f.width), (36, 36));
    let bytes = encode_ppm(&f);
    let header = b"P6\n36 36\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 36 * 36 * 3);
}
