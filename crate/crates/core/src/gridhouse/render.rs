use serde::{Deserialize, Serialize};

use super::vocab::{
    object_body_slot, object_marker_slot, palette_rgb, wall_slot, CEILING_SLOT, DOOR_SLOT,
    FLOOR_SLOT, NEUTRAL_WALL_SLOT,
};
use super::{AgentPose, Cell, HouseMap, Tile};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub fov_degrees: f64,
    pub max_depth: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            fov_degrees: 90.0,
            max_depth: 10.0,
        }
    }
}

/// RGB image, row-major `[H, W, 3]`, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` copy for convolution input.
    pub fn to_chw(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for ch in 0..3 {
                out[ch * hw + p] = self.data[p * 3 + ch];
            }
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, chw: &[f32]) -> Self {
        let hw = height * width;
        assert_eq!(chw.len(), 3 * hw, "from_chw: length");
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for ch in 0..3 {
                data[p * 3 + ch] = chw[ch * hw + p];
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn mse(&self, other: &Frame) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "mse: frame sizes differ");
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        s / self.data.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frame: Frame,
    pub pose: AgentPose,
}

struct Hit {
    /// Perpendicular distance from the camera to the struck face.
    dist: f64,
    slot: usize,
    marker: Option<usize>,
    /// Nearest door cell crossed on the way, as a perpendicular distance.
    door: Option<f64>,
}

/// Column raycaster. One ray per image column through a pinhole camera at
/// the center of the agent's cell; walls take the tint of the room the ray
/// was travelling through, objects their color attribute with a kind marker
/// band on top, and door openings get a lintel.
pub fn render(house: &HouseMap, pose: AgentPose, cfg: &RenderConfig) -> Observation {
    let mut frame = Frame::filled(cfg.height, cfg.width, [0.0; 3]);
    let (dr, dc) = pose.heading.delta();
    let dir = (dc as f64, dr as f64);
    let half = (cfg.fov_degrees.to_radians() / 2.0).tan();
    let plane = (-dir.1 * half, dir.0 * half);
    let pos = (pose.cell.col as f64 + 0.5, pose.cell.row as f64 + 0.5);
    let ceiling = palette_rgb(CEILING_SLOT);
    let floor = palette_rgb(FLOOR_SLOT);
    let h = cfg.height as f64;

    for x in 0..cfg.width {
        let cam = 2.0 * (x as f64 + 0.5) / cfg.width as f64 - 1.0;
        let ray = (dir.0 + plane.0 * cam, dir.1 + plane.1 * cam);
        let hit = cast(house, pos, ray, cfg.max_depth);

        let (top, bottom) = match &hit {
            Some(hit) => span(h, hit.dist),
            None => (h / 2.0, h / 2.0),
        };
        let door_span = hit.as_ref().and_then(|hit| hit.door).map(|d| span(h, d));
        for y in 0..cfg.height {
            let yc = y as f64 + 0.5;
            let mut rgb = if yc < top {
                ceiling
            } else if yc >= bottom {
                floor
            } else {
                let hit = hit.as_ref().unwrap();
                let shade = (1.0 / (1.0 + hit.dist)) as f32;
                let slot = match hit.marker {
                    Some(m) if yc < top + 0.25 * (bottom - top) => m,
                    _ => hit.slot,
                };
                let c = palette_rgb(slot);
                [c[0] * shade, c[1] * shade, c[2] * shade]
            };
            if let (Some((dt, db)), Some(hit)) = (door_span, hit.as_ref()) {
                let d = hit.door.unwrap();
                if yc >= dt && yc < dt + 0.2 * (db - dt) && yc < h / 2.0 {
                    let c = palette_rgb(DOOR_SLOT);
                    let shade = (1.0 / (1.0 + d)) as f32;
                    rgb = [c[0] * shade, c[1] * shade, c[2] * shade];
                }
            }
            frame.set_pixel(y, x, rgb);
        }
    }
    Observation { frame, pose }
}

fn span(h: f64, dist: f64) -> (f64, f64) {
    let line = h / dist.max(1e-6);
    ((h - line) / 2.0, (h + line) / 2.0)
}

fn cast(house: &HouseMap, pos: (f64, f64), ray: (f64, f64), max_depth: f64) -> Option<Hit> {
    let mut map = (pos.0.floor() as isize, pos.1.floor() as isize);
    let delta = (
        if ray.0 == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / ray.0).abs()
        },
        if ray.1 == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / ray.1).abs()
        },
    );
    let (step_x, mut side_x) = if ray.0 < 0.0 {
        (-1, (pos.0 - map.0 as f64) * delta.0)
    } else {
        (1, (map.0 as f64 + 1.0 - pos.0) * delta.0)
    };
    let (step_y, mut side_y) = if ray.1 < 0.0 {
        (-1, (pos.1 - map.1 as f64) * delta.1)
    } else {
        (1, (map.1 as f64 + 1.0 - pos.1) * delta.1)
    };
    let mut last_room = house.room_at(Cell::new(map.1 as usize, map.0 as usize));
    let mut door = None;
    loop {
        let dist = if side_x < side_y {
            let d = side_x;
            side_x += delta.0;
            map.0 += step_x;
            d
        } else {
            let d = side_y;
            side_y += delta.1;
            map.1 += step_y;
            d
        };
        if dist > max_depth || map.0 < 0 || map.1 < 0 {
            return None;
        }
        let cell = Cell::new(map.1 as usize, map.0 as usize);
        if let Some(o) = house.object_at(cell) {
            let obj = &house.objects[o];
            return Some(Hit {
                dist,
                slot: object_body_slot(obj.color),
                marker: Some(object_marker_slot(obj.kind)),
                door,
            });
        }
        match house.tile(cell) {
            Tile::Wall => {
                let slot = last_room.map_or(NEUTRAL_WALL_SLOT, |r| wall_slot(house.rooms[r]));
                return Some(Hit {
                    dist,
                    slot,
                    marker: None,
                    door,
                });
            }
            Tile::Door => {
                door.get_or_insert(dist);
                last_room = None;
            }
            Tile::Floor => last_room = house.room_at(cell),
        }
    }
}

/// Top-down map image: walls black, floor white, doors brown, objects in
/// their body color, `scale` pixels per cell.
pub fn topdown(house: &HouseMap, scale: usize) -> Frame {
    let mut f = Frame::filled(house.rows * scale, house.cols * scale, [1.0; 3]);
    for r in 0..house.rows {
        for c in 0..house.cols {
            let cell = Cell::new(r, c);
            let rgb = match (house.object_at(cell), house.tile(cell)) {
                (Some(o), _) => palette_rgb(object_body_slot(house.objects[o].color)),
                (None, Tile::Wall) => [0.0; 3],
                (None, Tile::Door) => palette_rgb(DOOR_SLOT),
                (None, Tile::Floor) => [1.0; 3],
            };
            fill_cell(&mut f, cell, scale, rgb);
        }
    }
    f
}

pub(crate) fn fill_cell(f: &mut Frame, cell: Cell, scale: usize, rgb: [f32; 3]) {
    for y in cell.row * scale..(cell.row + 1) * scale {
        for x in cell.col * scale..(cell.col + 1) * scale {
            f.set_pixel(y, x, rgb);
        }
    }
}
