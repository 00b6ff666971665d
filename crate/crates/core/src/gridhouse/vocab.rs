//! Fixed room, object and color inventories plus the 64-entry render palette.

pub const ROOM_KINDS: [&str; 10] = [
    "kitchen",
    "living room",
    "bedroom",
    "bathroom",
    "dining room",
    "office",
    "garage",
    "gym",
    "laundry room",
    "music room",
];

/// Fifty object kinds, five per room kind in `ROOM_KINDS` order; the group an
/// object belongs to is the room it is usually found in.
pub const OBJECT_KINDS: [&str; 50] = [
    "refrigerator",
    "stove",
    "microwave",
    "dishwasher",
    "coffee machine",
    "sofa",
    "television",
    "coffee table",
    "bookshelf",
    "fireplace",
    "bed",
    "wardrobe",
    "dresser",
    "nightstand",
    "mirror",
    "toilet",
    "bathtub",
    "sink",
    "shower",
    "towel rack",
    "dining table",
    "chair",
    "cabinet",
    "chandelier",
    "sideboard",
    "desk",
    "computer",
    "office chair",
    "printer",
    "filing cabinet",
    "car",
    "workbench",
    "toolbox",
    "bicycle",
    "shelving",
    "treadmill",
    "dumbbell",
    "exercise bike",
    "yoga mat",
    "punching bag",
    "washing machine",
    "dryer",
    "ironing board",
    "laundry basket",
    "drying rack",
    "piano",
    "guitar",
    "drum",
    "speaker",
    "music stand",
];

pub const COLORS: [&str; 8] = [
    "red", "orange", "yellow", "green", "blue", "purple", "white", "black",
];

pub const OBJECTS_PER_ROOM_KIND: usize = 5;

pub fn room_kind_index(name: &str) -> Option<usize> {
    ROOM_KINDS.iter().position(|&n| n == name)
}

pub fn object_kind_index(name: &str) -> Option<usize> {
    OBJECT_KINDS.iter().position(|&n| n == name)
}

pub fn color_index(name: &str) -> Option<usize> {
    COLORS.iter().position(|&n| n == name)
}

/// Palette slots:
///
/// | slots  | use                                  |
/// |--------|--------------------------------------|
/// | 0..10  | wall tint per room kind              |
/// | 10     | door lintel                          |
/// | 11     | floor band                           |
/// | 12     | ceiling band                         |
/// | 13     | wall seen from a door cell           |
/// | 14..16 | unused (black)                       |
/// | 16..24 | object body per color attribute      |
/// | 24..64 | object marker band, `24 + kind % 40` |
pub const PALETTE: [[u8; 3]; 64] = build_palette();

pub const fn wall_slot(room_kind: usize) -> usize {
    room_kind
}
pub const DOOR_SLOT: usize = 10;
pub const FLOOR_SLOT: usize = 11;
pub const CEILING_SLOT: usize = 12;
pub const NEUTRAL_WALL_SLOT: usize = 13;
pub const fn object_body_slot(color: usize) -> usize {
    16 + color
}
pub const fn object_marker_slot(kind: usize) -> usize {
    24 + kind % 40
}

const fn build_palette() -> [[u8; 3]; 64] {
    let mut p = [[0u8; 3]; 64];
    let walls: [[u8; 3]; 10] = [
        [230, 200, 120],
        [200, 140, 110],
        [150, 170, 230],
        [120, 220, 220],
        [210, 120, 180],
        [170, 210, 130],
        [160, 160, 160],
        [240, 150, 90],
        [130, 120, 220],
        [220, 220, 180],
    ];
    let mut i = 0;
    while i < 10 {
        p[i] = walls[i];
        i += 1;
    }
    p[DOOR_SLOT] = [120, 60, 20];
    p[FLOOR_SLOT] = [90, 80, 70];
    p[CEILING_SLOT] = [200, 200, 210];
    p[NEUTRAL_WALL_SLOT] = [180, 180, 170];
    let bodies: [[u8; 3]; 8] = [
        [230, 30, 30],
        [250, 140, 20],
        [250, 230, 30],
        [30, 200, 60],
        [30, 80, 240],
        [150, 40, 200],
        [250, 250, 250],
        [15, 15, 15],
    ];
    let mut c = 0;
    while c < 8 {
        p[16 + c] = bodies[c];
        c += 1;
    }
    // marker band: deterministic hue walk
    let mut k = 0;
    while k < 40 {
        let r = (37 * k + 50) % 256;
        let g = (91 * k + 120) % 256;
        let b = (53 * k + 200) % 256;
        p[24 + k] = [r as u8, g as u8, b as u8];
        k += 1;
    }
    p
}

pub fn palette_rgb(slot: usize) -> [f32; 3] {
    let c = PALETTE[slot];
    [
        c[0] as f32 / 255.0,
        c[1] as f32 / 255.0,
        c[2] as f32 / 255.0,
    ]
}
