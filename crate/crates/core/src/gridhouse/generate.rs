use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{COLORS, OBJECTS_PER_ROOM_KIND, OBJECT_KINDS, ROOM_KINDS};
use super::{Cell, GridError, HouseMap, HouseObject, Result, Tile};

const MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn height(&self) -> usize {
        self.r1 - self.r0 + 1
    }
    fn width(&self) -> usize {
        self.c1 - self.c0 + 1
    }
    fn area(&self) -> usize {
        self.height() * self.width()
    }
}

/// Procedural house on a `size`×`size` grid with `rooms` rectangular rooms.
///
/// Rooms come from recursive binary splits of the interior; every split wall
/// gets exactly one door, so the room graph is a tree and connected.
pub fn generate_house(seed: u64, rooms: usize, size: usize) -> Result<HouseMap> {
    if rooms < 2 {
        return Err(GridError::Infeasible(format!(
            "need at least 2 rooms, got {rooms}"
        )));
    }
    if rooms > ROOM_KINDS.len() {
        return Err(GridError::Infeasible(format!(
            "at most {} rooms supported, got {rooms}",
            ROOM_KINDS.len()
        )));
    }
    if size < 7 {
        return Err(GridError::Infeasible(format!(
            "grid size must be >= 7, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        match attempt(&mut rng, seed, rooms, size) {
            Ok(map) => return Ok(map),
            Err(e) => last = e,
        }
    }
    Err(GridError::Infeasible(format!(
        "{rooms} rooms on a {size}x{size} grid after {MAX_ATTEMPTS} attempts ({last})"
    )))
}

fn attempt(
    rng: &mut ChaCha8Rng,
    seed: u64,
    n_rooms: usize,
    size: usize,
) -> Result<HouseMap, String> {
    let mut tiles = vec![Tile::Wall; size * size];
    let at = |r: usize, c: usize| r * size + c;
    for r in 1..size - 1 {
        for c in 1..size - 1 {
            tiles[at(r, c)] = Tile::Floor;
        }
    }
    let mut rects = vec![Rect {
        r0: 1,
        c0: 1,
        r1: size - 2,
        c1: size - 2,
    }];
    while rects.len() < n_rooms {
        let mut order: Vec<usize> = (0..rects.len()).collect();
        order.shuffle(rng);
        order.sort_by_key(|&i| std::cmp::Reverse(rects[i].area()));
        let mut done = false;
        for i in order {
            if let Some((a, b)) = split(rng, &mut tiles, size, rects[i]) {
                rects[i] = a;
                rects.push(b);
                done = true;
                break;
            }
        }
        if !done {
            return Err("no splittable room left".into());
        }
    }

    let mut room_of = vec![None; size * size];
    for (k, rect) in rects.iter().enumerate() {
        for r in rect.r0..=rect.r1 {
            for c in rect.c0..=rect.c1 {
                room_of[at(r, c)] = Some(k);
            }
        }
    }
    let mut kinds: Vec<usize> = (0..ROOM_KINDS.len()).collect();
    kinds.shuffle(rng);
    kinds.truncate(n_rooms);

    let objects = place_objects(rng, &tiles, &room_of, &rects, &kinds, size);
    HouseMap::from_parts(seed as usize, size, size, tiles, room_of, kinds, objects)
        .map_err(|e| e.to_string())
}

/// Cuts `rect` with a one-cell wall that leaves both halves at least two
/// cells wide, and opens one door in it. Walls whose ends would butt against
/// an existing door are not allowed.
fn split(
    rng: &mut ChaCha8Rng,
    tiles: &mut [Tile],
    size: usize,
    rect: Rect,
) -> Option<(Rect, Rect)> {
    let at = |r: usize, c: usize| r * size + c;
    let can_v = rect.width() >= 5;
    let can_h = rect.height() >= 5;
    let vertical = match (can_v, can_h) {
        (false, false) => return None,
        (true, false) => true,
        (false, true) => false,
        (true, true) if rect.width() != rect.height() => rect.width() > rect.height(),
        _ => rng.gen_bool(0.5),
    };
    if vertical {
        let mut cols: Vec<usize> = (rect.c0 + 2..=rect.c1 - 2)
            .filter(|&c| {
                tiles[at(rect.r0 - 1, c)] != Tile::Door && tiles[at(rect.r1 + 1, c)] != Tile::Door
            })
            .collect();
        if cols.is_empty() {
            return None;
        }
        cols.shuffle(rng);
        let c = cols[0];
        for r in rect.r0..=rect.r1 {
            tiles[at(r, c)] = Tile::Wall;
        }
        let door = rng.gen_range(rect.r0..=rect.r1);
        tiles[at(door, c)] = Tile::Door;
        Some((Rect { c1: c - 1, ..rect }, Rect { c0: c + 1, ..rect }))
    } else {
        let mut rows: Vec<usize> = (rect.r0 + 2..=rect.r1 - 2)
            .filter(|&r| {
                tiles[at(r, rect.c0 - 1)] != Tile::Door && tiles[at(r, rect.c1 + 1)] != Tile::Door
            })
            .collect();
        if rows.is_empty() {
            return None;
        }
        rows.shuffle(rng);
        let r = rows[0];
        for c in rect.c0..=rect.c1 {
            tiles[at(r, c)] = Tile::Wall;
        }
        let door = rng.gen_range(rect.c0..=rect.c1);
        tiles[at(r, door)] = Tile::Door;
        Some((Rect { r1: r - 1, ..rect }, Rect { r0: r + 1, ..rect }))
    }
}

fn place_objects(
    rng: &mut ChaCha8Rng,
    tiles: &[Tile],
    room_of: &[Option<usize>],
    rects: &[Rect],
    kinds: &[usize],
    size: usize,
) -> Vec<HouseObject> {
    let at = |c: Cell| c.row * size + c.col;
    let mut occupied = vec![false; size * size];
    let mut objects: Vec<HouseObject> = Vec::new();
    let mut used_kinds: Vec<usize> = Vec::new();

    let near_door = |c: Cell| c.neighbors4().any(|n| tiles[at(n)] == Tile::Door);
    let against_wall = |c: Cell| c.neighbors4().any(|n| tiles[at(n)] == Tile::Wall);

    for (room, rect) in rects.iter().enumerate() {
        let cap = (rect.area() / 4).clamp(1, 4);
        let target = rng.gen_range(1..=cap);
        let mut placed_here: Vec<Cell> = Vec::new();
        let mut tries = 0;
        while placed_here.len() < target && tries < 40 {
            tries += 1;
            let free = |c: &Cell| {
                tiles[at(*c)] == Tile::Floor
                    && room_of[at(*c)] == Some(room)
                    && !occupied[at(*c)]
                    && !near_door(*c)
            };
            let cells: Vec<Cell> = (rect.r0..=rect.r1)
                .flat_map(|r| (rect.c0..=rect.c1).map(move |c| Cell::new(r, c)))
                .filter(free)
                .collect();
            let pair = !placed_here.is_empty() && rng.gen_bool(0.35);
            let pool: Vec<Cell> = if pair {
                cells
                    .iter()
                    .copied()
                    .filter(|c| c.neighbors4().any(|n| placed_here.contains(&n)))
                    .collect()
            } else {
                cells.iter().copied().filter(|&c| against_wall(c)).collect()
            };
            let Some(&cell) = pool.choose(rng) else {
                continue;
            };
            occupied[at(cell)] = true;
            if !walkable_ok(tiles, &occupied, size, &objects, cell) {
                occupied[at(cell)] = false;
                continue;
            }
            let kind = pick_kind(rng, kinds[room], &used_kinds);
            used_kinds.push(kind);
            objects.push(HouseObject {
                id: objects.len(),
                kind,
                color: rng.gen_range(0..COLORS.len()),
                cell,
                room,
                next_to: Vec::new(),
            });
            placed_here.push(cell);
        }
    }
    objects
}

fn pick_kind(rng: &mut ChaCha8Rng, room_kind: usize, used: &[usize]) -> usize {
    let share = rng.gen_bool(0.1);
    let group = room_kind * OBJECTS_PER_ROOM_KIND..(room_kind + 1) * OBJECTS_PER_ROOM_KIND;
    let mut pool: Vec<usize> = if rng.gen_bool(0.8) {
        group.collect()
    } else {
        (0..OBJECT_KINDS.len()).collect()
    };
    if !share {
        let fresh: Vec<usize> = pool.iter().copied().filter(|k| !used.contains(k)).collect();
        if !fresh.is_empty() {
            pool = fresh;
        }
    }
    *pool.choose(rng).expect("nonempty kind pool")
}

/// Walkable cells stay connected and every object keeps a free neighbor.
fn walkable_ok(
    tiles: &[Tile],
    occupied: &[bool],
    size: usize,
    objects: &[HouseObject],
    new: Cell,
) -> bool {
    let at = |c: Cell| c.row * size + c.col;
    let walk = |c: Cell| tiles[at(c)] != Tile::Wall && !occupied[at(c)];
    let all: Vec<Cell> = (0..size)
        .flat_map(|r| (0..size).map(move |c| Cell::new(r, c)))
        .filter(|&c| walk(c))
        .collect();
    let Some(&start) = all.first() else {
        return false;
    };
    let mut seen = vec![false; size * size];
    seen[at(start)] = true;
    let mut stack = vec![start];
    let mut count = 1;
    while let Some(c) = stack.pop() {
        for n in c.neighbors4() {
            if walk(n) && !seen[at(n)] {
                seen[at(n)] = true;
                count += 1;
                stack.push(n);
            }
        }
    }
    count == all.len()
        && objects
            .iter()
            .map(|o| o.cell)
            .chain(std::iter::once(new))
            .all(|c| c.neighbors4().any(walk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_requests() {
        assert!(generate_house(0, 1, 9).is_err());
        assert!(generate_house(0, 2, 6).is_err());
        assert!(generate_house(0, 11, 30).is_err());
        // 5x5 interior holds two rooms but never five
        assert!(generate_house(0, 5, 7).is_err());
    }

    #[test]
    fn smallest_house_splits_once() {
        for seed in 0..20 {
            let h = generate_house(seed, 2, 7).unwrap();
            assert_eq!(h.rooms.len(), 2);
            assert_eq!(h.door_cells().len(), 1);
        }
    }
}
