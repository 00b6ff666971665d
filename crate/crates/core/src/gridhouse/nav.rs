use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ActionType, AgentPose, Cell, GridError, Heading, HouseMap, Result};

/// Pose dynamics. Blocked `Forward` (wall or object ahead) leaves the pose unchanged.
pub fn step(house: &HouseMap, pose: AgentPose, action: ActionType) -> AgentPose {
    match action {
        ActionType::Forward => match pose.cell.offset(pose.heading) {
            Some(next) if house.walkable(next) => AgentPose { cell: next, ..pose },
            _ => pose,
        },
        ActionType::TurnLeft => AgentPose {
            heading: pose.heading.left(),
            ..pose
        },
        ActionType::TurnRight => AgentPose {
            heading: pose.heading.right(),
            ..pose
        },
        ActionType::Stop => pose,
    }
}

const MOVES: [ActionType; 3] = [
    ActionType::Forward,
    ActionType::TurnLeft,
    ActionType::TurnRight,
];

fn pose_index(house: &HouseMap, pose: AgentPose) -> usize {
    house.index(pose.cell).expect("pose inside grid") * 4 + pose.heading.index()
}

fn pose_at(house: &HouseMap, idx: usize) -> AgentPose {
    let cell = idx / 4;
    AgentPose {
        cell: Cell::new(cell / house.cols, cell % house.cols),
        heading: Heading::from_index(idx % 4),
    }
}

/// Minimal action sequence from `start` to any pose on `goal`, ending in `Stop`.
///
/// Breadth-first over (cell, heading); successors are expanded in the order
/// Forward, TurnLeft, TurnRight, so among equal-length paths the one that
/// prefers earlier actions at the earliest divergence wins.
pub fn shortest_path(house: &HouseMap, start: AgentPose, goal: Cell) -> Result<Vec<ActionType>> {
    if !house.valid_pose(start) {
        return Err(GridError::InvalidPose(start));
    }
    if !house.walkable(goal) {
        return Err(GridError::InvalidGoal(goal));
    }
    let n = house.rows * house.cols * 4;
    let mut parent: Vec<Option<(usize, ActionType)>> = vec![None; n];
    let mut seen = vec![false; n];
    let s = pose_index(house, start);
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(i) = queue.pop_front() {
        let pose = pose_at(house, i);
        if pose.cell == goal {
            let mut actions = vec![ActionType::Stop];
            let mut cur = i;
            while let Some((prev, a)) = parent[cur] {
                actions.push(a);
                cur = prev;
            }
            actions.reverse();
            return Ok(actions);
        }
        for a in MOVES {
            let j = pose_index(house, step(house, pose, a));
            if !seen[j] {
                seen[j] = true;
                parent[j] = Some((i, a));
                queue.push_back(j);
            }
        }
    }
    Err(GridError::Unreachable(goal, start))
}

/// Distances (in primitive actions) from every pose to a fixed target cell.
#[derive(Clone, Debug)]
pub struct DistanceField {
    target: Cell,
    cols: usize,
    dist: Vec<Option<u32>>,
}

impl DistanceField {
    /// Reverse breadth-first search from all four poses on `target`.
    pub fn new(house: &HouseMap, target: Cell) -> Result<Self> {
        if !house.walkable(target) {
            return Err(GridError::InvalidGoal(target));
        }
        let n = house.rows * house.cols * 4;
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for h in Heading::ALL {
            let i = pose_index(
                house,
                AgentPose {
                    cell: target,
                    heading: h,
                },
            );
            dist[i] = Some(0);
            queue.push_back(i);
        }
        while let Some(i) = queue.pop_front() {
            let pose = pose_at(house, i);
            let d = dist[i].unwrap();
            let mut preds: Vec<AgentPose> = vec![
                AgentPose {
                    heading: pose.heading.right(),
                    ..pose
                },
                AgentPose {
                    heading: pose.heading.left(),
                    ..pose
                },
            ];
            if let Some(back) = pose.cell.offset(pose.heading.opposite()) {
                if house.walkable(back) {
                    preds.push(AgentPose {
                        cell: back,
                        heading: pose.heading,
                    });
                }
            }
            for p in preds {
                let j = pose_index(house, p);
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        Ok(Self {
            target,
            cols: house.cols,
            dist,
        })
    }

    pub fn target(&self) -> Cell {
        self.target
    }

    pub fn get(&self, pose: AgentPose) -> Option<u32> {
        if pose.cell.col >= self.cols {
            return None;
        }
        let i = (pose.cell.row * self.cols + pose.cell.col) * 4 + pose.heading.index();
        self.dist.get(i).copied().flatten()
    }

    /// All reachable poses with their distance, in pose-index order.
    pub fn poses(&self) -> impl Iterator<Item = (AgentPose, u32)> + '_ {
        let cols = self.cols;
        self.dist.iter().enumerate().filter_map(move |(i, d)| {
            d.map(|d| {
                let cell = i / 4;
                (
                    AgentPose {
                        cell: Cell::new(cell / cols, cell % cols),
                        heading: Heading::from_index(i % 4),
                    },
                    d,
                )
            })
        })
    }

    pub fn max_distance(&self) -> u32 {
        self.dist.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Minimal number of pre-`Stop` primitive actions from `pose` to `target`.
pub fn geodesic_dist(house: &HouseMap, pose: AgentPose, target: Cell) -> Result<u32> {
    if !house.valid_pose(pose) {
        return Err(GridError::InvalidPose(pose));
    }
    DistanceField::new(house, target)?
        .get(pose)
        .ok_or(GridError::Unreachable(target, pose))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Spawn {
    pub pose: AgentPose,
    pub distance: u32,
    /// Requested distance was not attainable; `distance` is the largest one below it.
    pub fallback: bool,
}

/// Uniformly picks a pose exactly `k` actions from `target`, falling back to
/// the largest attainable distance below `k`.
pub fn spawn_at_distance(house: &HouseMap, target: Cell, k: u32, seed: u64) -> Result<Spawn> {
    let field = DistanceField::new(house, target)?;
    spawn_from_field(&field, k, seed)
}

fn spawn_from_field(field: &DistanceField, k: u32, seed: u64) -> Result<Spawn> {
    let best = field
        .poses()
        .map(|(_, d)| d)
        .filter(|&d| d >= 1 && d <= k)
        .max();
    let Some(d) = best else {
        return Err(GridError::NoSpawn(field.target()));
    };
    let candidates: Vec<AgentPose> = field
        .poses()
        .filter(|&(_, e)| e == d)
        .map(|(p, _)| p)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = *candidates.choose(&mut rng).expect("nonempty candidates");
    Ok(Spawn {
        pose,
        distance: d,
        fallback: d != k,
    })
}

#[cfg(test)]
mod tests {
    use super::super::generate_house;
    use super::*;

    #[test]
    fn turning_four_times_is_identity() {
        let h = generate_house(3, 2, 9).unwrap();
        let p = AgentPose {
            cell: h.walkable_cells()[0],
            heading: Heading::East,
        };
        let mut q = p;
        for _ in 0..4 {
            q = step(&h, q, ActionType::TurnLeft);
        }
        assert_eq!(p, q);
        assert_eq!(step(&h, p, ActionType::Stop), p);
    }

    #[test]
    fn path_to_own_cell_is_just_stop() {
        let h = generate_house(4, 2, 9).unwrap();
        let c = h.walkable_cells()[3];
        let p = AgentPose {
            cell: c,
            heading: Heading::South,
        };
        assert_eq!(shortest_path(&h, p, c).unwrap(), vec![ActionType::Stop]);
        assert_eq!(geodesic_dist(&h, p, c).unwrap(), 0);
    }
}
