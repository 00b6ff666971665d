//! Deterministic multi-room house simulator.
//!
//! Houses are grids of wall, floor and door cells split into rectangular
//! rooms. Objects occupy floor cells and block motion. The agent moves one
//! cell per `Forward` and turns in 90° steps, so the pose space is finite and
//! shortest paths are exact breadth-first searches.

mod generate;
mod io;
mod nav;
mod render;
pub mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::generate_house;
pub use io::{encode_ppm, write_ppm, HouseDoc, ObjectDoc};
pub use nav::{geodesic_dist, shortest_path, spawn_at_distance, step, DistanceField, Spawn};
pub use render::{render, topdown, Frame, Observation, RenderConfig};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot generate house: {0}")]
    Infeasible(String),
    #[error("goal {0:?} unreachable from {1:?}")]
    Unreachable(Cell, AgentPose),
    #[error("invalid pose {0:?}")]
    InvalidPose(AgentPose),
    #[error("invalid goal cell {0:?}")]
    InvalidGoal(Cell),
    #[error("no spawn pose with distance >= 1 from {0:?}")]
    NoSpawn(Cell),
    #[error("malformed house document: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Neighbor one step along `heading`, if it stays non-negative.
    pub fn offset(self, heading: Heading) -> Option<Cell> {
        let (dr, dc) = heading.delta();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        Some(Cell { row, col })
    }

    pub fn neighbors4(self) -> impl Iterator<Item = Cell> {
        Heading::ALL.into_iter().filter_map(move |h| self.offset(h))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    /// (row, col) step.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    pub fn opposite(self) -> Heading {
        Self::from_index(self.index() + 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentPose {
    pub cell: Cell,
    pub heading: Heading,
}

impl AgentPose {
    pub const fn new(row: usize, col: usize, heading: Heading) -> Self {
        Self {
            cell: Cell { row, col },
            heading,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl ActionType {
    pub const ALL: [ActionType; 4] = [
        ActionType::Forward,
        ActionType::TurnLeft,
        ActionType::TurnRight,
        ActionType::Stop,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ActionType> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ActionType::Forward => "forward",
            ActionType::TurnLeft => "turn_left",
            ActionType::TurnRight => "turn_right",
            ActionType::Stop => "stop",
        }
    }

    pub fn from_symbol(s: &str) -> Option<ActionType> {
        Self::ALL.into_iter().find(|a| a.symbol() == s)
    }

    pub fn one_hot(self) -> [f32; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tile {
    Wall,
    Floor,
    Door,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HouseObject {
    pub id: usize,
    /// Index into [`vocab::OBJECT_KINDS`].
    pub kind: usize,
    /// Index into [`vocab::COLORS`].
    pub color: usize,
    pub cell: Cell,
    /// Index into [`HouseMap::rooms`].
    pub room: usize,
    /// Ids of objects in 4-adjacent cells.
    pub next_to: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HouseMap {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    tiles: Vec<Tile>,
    room_of: Vec<Option<usize>>,
    /// Room kind (index into [`vocab::ROOM_KINDS`]) of each room.
    pub rooms: Vec<usize>,
    pub objects: Vec<HouseObject>,
    occupied: Vec<Option<usize>>,
}

impl HouseMap {
    /// Builds a map from its parts, recomputing derived tables and checking
    /// every invariant.
    pub fn from_parts(
        id: usize,
        rows: usize,
        cols: usize,
        tiles: Vec<Tile>,
        room_of: Vec<Option<usize>>,
        rooms: Vec<usize>,
        mut objects: Vec<HouseObject>,
    ) -> Result<Self> {
        if tiles.len() != rows * cols || room_of.len() != rows * cols {
            return Err(GridError::Parse("grid size mismatch".into()));
        }
        let mut occupied = vec![None; rows * cols];
        for (i, o) in objects.iter_mut().enumerate() {
            o.id = i;
            if o.cell.row >= rows || o.cell.col >= cols {
                return Err(GridError::Parse(format!("object {i} outside grid")));
            }
            let idx = o.cell.row * cols + o.cell.col;
            if tiles[idx] != Tile::Floor {
                return Err(GridError::Parse(format!("object {i} not on a floor cell")));
            }
            if occupied[idx].is_some() {
                return Err(GridError::Parse(format!("object {i} shares a cell")));
            }
            occupied[idx] = Some(i);
            o.room = room_of[idx]
                .ok_or_else(|| GridError::Parse(format!("object {i} outside rooms")))?;
        }
        let mut map = HouseMap {
            id,
            rows,
            cols,
            tiles,
            room_of,
            rooms,
            objects,
            occupied,
        };
        map.recompute_adjacency();
        map.validate()?;
        Ok(map)
    }

    fn recompute_adjacency(&mut self) {
        let adj: Vec<Vec<usize>> = self
            .objects
            .iter()
            .map(|o| {
                let mut v: Vec<usize> = o
                    .cell
                    .neighbors4()
                    .filter_map(|n| self.object_at(n))
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        for (o, a) in self.objects.iter_mut().zip(adj) {
            o.next_to = a;
        }
    }

    pub(crate) fn index(&self, c: Cell) -> Option<usize> {
        (c.row < self.rows && c.col < self.cols).then(|| c.row * self.cols + c.col)
    }

    pub fn tile(&self, c: Cell) -> Tile {
        self.index(c).map_or(Tile::Wall, |i| self.tiles[i])
    }

    pub fn room_at(&self, c: Cell) -> Option<usize> {
        self.index(c).and_then(|i| self.room_of[i])
    }

    pub fn object_at(&self, c: Cell) -> Option<usize> {
        self.index(c).and_then(|i| self.occupied[i])
    }

    /// Floor or door without an object.
    pub fn walkable(&self, c: Cell) -> bool {
        match self.index(c) {
            Some(i) => self.tiles[i] != Tile::Wall && self.occupied[i].is_none(),
            None => false,
        }
    }

    pub fn walkable_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| Cell::new(r, c)))
            .filter(|&c| self.walkable(c))
            .collect()
    }

    pub fn door_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| Cell::new(r, c)))
            .filter(|&c| self.tile(c) == Tile::Door)
            .collect()
    }

    pub fn valid_pose(&self, pose: AgentPose) -> bool {
        self.walkable(pose.cell)
    }

    /// Walkable cells reachable from `start` by 4-connected moves.
    pub fn flood_fill(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.rows * self.cols];
        if !self.walkable(start) {
            return seen;
        }
        let mut stack = vec![start];
        seen[self.index(start).unwrap()] = true;
        while let Some(c) = stack.pop() {
            for n in c.neighbors4() {
                if let Some(i) = self.index(n) {
                    if !seen[i] && self.walkable(n) {
                        seen[i] = true;
                        stack.push(n);
                    }
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        let cells = self.walkable_cells();
        let Some(&first) = cells.first() else {
            return false;
        };
        let seen = self.flood_fill(first);
        cells.iter().all(|&c| seen[self.index(c).unwrap()])
    }

    /// Walkable cells 4-adjacent to an object, in heading order.
    pub fn approach_cells(&self, object: usize) -> Vec<(Cell, Heading)> {
        let o = &self.objects[object];
        Heading::ALL
            .into_iter()
            .filter_map(|h| {
                let c = o.cell.offset(h)?;
                self.walkable(c).then_some((c, h.opposite()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GridError::Parse(m));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cell = Cell::new(r, c);
                let border = r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols;
                let t = self.tile(cell);
                if border && t != Tile::Wall {
                    return bad(format!("border cell {cell:?} is not a wall"));
                }
                match t {
                    Tile::Floor => match self.room_at(cell) {
                        Some(room) if room < self.rooms.len() => {}
                        _ => return bad(format!("floor cell {cell:?} has no room")),
                    },
                    Tile::Door => {
                        let rooms_ns = (
                            cell.offset(Heading::North).and_then(|n| self.room_at(n)),
                            cell.offset(Heading::South).and_then(|n| self.room_at(n)),
                        );
                        let rooms_ew = (
                            cell.offset(Heading::West).and_then(|n| self.room_at(n)),
                            cell.offset(Heading::East).and_then(|n| self.room_at(n)),
                        );
                        let joins = |p: (Option<usize>, Option<usize>)| matches!(p, (Some(a), Some(b)) if a != b);
                        if !(joins(rooms_ns) ^ joins(rooms_ew)) {
                            return bad(format!("door {cell:?} does not join exactly two rooms"));
                        }
                    }
                    Tile::Wall => {}
                }
            }
        }
        for o in &self.objects {
            if self.approach_cells(o.id).is_empty() {
                return bad(format!("object {} cannot be approached", o.id));
            }
        }
        if !self.is_connected() {
            return bad("walkable cells are not connected".into());
        }
        Ok(())
    }

    pub fn room_name(&self, room: usize) -> &'static str {
        vocab::ROOM_KINDS[self.rooms[room]]
    }

    pub fn object_name(&self, object: usize) -> &'static str {
        vocab::OBJECT_KINDS[self.objects[object].kind]
    }

    pub fn color_name(&self, object: usize) -> &'static str {
        vocab::COLORS[self.objects[object].color]
    }
}
