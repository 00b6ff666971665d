use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{
    color_index, object_kind_index, room_kind_index, COLORS, OBJECT_KINDS, ROOM_KINDS,
};
use super::{Cell, Frame, GridError, HouseMap, HouseObject, Result, Tile};

/// JSON form of a [`HouseMap`]. Grid rows use `#` for wall, `+` for door and
/// the room index digit for floor cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseDoc {
    pub id: usize,
    pub grid: Vec<String>,
    pub rooms: Vec<String>,
    pub objects: Vec<ObjectDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDoc {
    pub id: usize,
    pub kind: String,
    pub color: String,
    pub row: usize,
    pub col: usize,
    pub room: usize,
    pub next_to: Vec<usize>,
}

impl From<&HouseMap> for HouseDoc {
    fn from(h: &HouseMap) -> Self {
        let grid = (0..h.rows)
            .map(|r| {
                (0..h.cols)
                    .map(|c| {
                        let cell = Cell::new(r, c);
                        match h.tile(cell) {
                            Tile::Wall => '#',
                            Tile::Door => '+',
                            Tile::Floor => {
                                char::from_digit(h.room_at(cell).unwrap() as u32, 10).unwrap()
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        HouseDoc {
            id: h.id,
            grid,
            rooms: h.rooms.iter().map(|&k| ROOM_KINDS[k].to_string()).collect(),
            objects: h
                .objects
                .iter()
                .map(|o| ObjectDoc {
                    id: o.id,
                    kind: OBJECT_KINDS[o.kind].to_string(),
                    color: COLORS[o.color].to_string(),
                    row: o.cell.row,
                    col: o.cell.col,
                    room: o.room,
                    next_to: o.next_to.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<HouseDoc> for HouseMap {
    type Error = GridError;

    fn try_from(doc: HouseDoc) -> Result<Self> {
        let bad = |m: String| GridError::Parse(m);
        let rows = doc.grid.len();
        let cols = doc.grid.first().map_or(0, |r| r.chars().count());
        let mut tiles = Vec::with_capacity(rows * cols);
        let mut room_of = Vec::with_capacity(rows * cols);
        for (r, line) in doc.grid.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(bad(format!("grid row {r} has the wrong length")));
            }
            for ch in line.chars() {
                let (t, room) = match ch {
                    '#' => (Tile::Wall, None),
                    '+' => (Tile::Door, None),
                    d if d.is_ascii_digit() => {
                        (Tile::Floor, Some(d.to_digit(10).unwrap() as usize))
                    }
                    other => return Err(bad(format!("grid row {r}: unexpected {other:?}"))),
                };
                tiles.push(t);
                room_of.push(room);
            }
        }
        let rooms = doc
            .rooms
            .iter()
            .map(|n| room_kind_index(n).ok_or_else(|| bad(format!("unknown room kind {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let objects = doc
            .objects
            .iter()
            .map(|o| {
                Ok(HouseObject {
                    id: o.id,
                    kind: object_kind_index(&o.kind)
                        .ok_or_else(|| bad(format!("unknown object kind {:?}", o.kind)))?,
                    color: color_index(&o.color)
                        .ok_or_else(|| bad(format!("unknown color {:?}", o.color)))?,
                    cell: Cell::new(o.row, o.col),
                    room: o.room,
                    next_to: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        HouseMap::from_parts(doc.id, rows, cols, tiles, room_of, rooms, objects)
    }
}

impl HouseMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&HouseDoc::from(self)).expect("house doc serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: HouseDoc = serde_json::from_str(s).map_err(|e| GridError::Parse(e.to_string()))?;
        HouseMap::try_from(doc)
    }

    pub fn ascii(&self) -> String {
        let doc = HouseDoc::from(self);
        let mut grid: Vec<Vec<char>> = doc.grid.iter().map(|r| r.chars().collect()).collect();
        for o in &self.objects {
            grid[o.cell.row][o.cell.col] = '*';
        }
        grid.into_iter()
            .map(|r| r.into_iter().collect::<String>() + "\n")
            .collect()
    }
}

/// Binary PPM (P6, maxval 255). Intensities are clamped to `[0, 1]` and rounded.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(
        frame
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_ppm(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_ppm(frame))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::generate_house;
    use super::*;

    #[test]
    fn json_round_trip() {
        let h = generate_house(11, 3, 11).unwrap();
        let back = HouseMap::from_json(&h.to_json()).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_cells() {
        let h = generate_house(11, 2, 9).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&h.to_json()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(HouseMap::from_json(&v.to_string()).is_err());
        let mut doc = HouseDoc::from(&h);
        doc.grid[0] = doc.grid[0].replace('#', "0");
        assert!(HouseMap::try_from(doc).is_err());
    }

    #[test]
    fn ppm_header_and_size() {
        let f = Frame::filled(2, 3, [1.0, 0.0, 0.5]);
        let bytes = encode_ppm(&f);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P6\n3 2\n255\n".len() + 18);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 128]);
    }
}
