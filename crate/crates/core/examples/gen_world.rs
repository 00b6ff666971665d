//! Generates a three-room house, prints it and writes a top-down map.
//!
//!     cargo run --release --example gen_world [out_dir]

mod common;

use mindqa::gridhouse::vocab::{COLORS, ROOM_KINDS};
use mindqa::gridhouse::{generate_house, topdown, write_ppm};

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let house = generate_house(7, 3, 12)?;
    print!("{}", house.ascii());
    let rooms: Vec<&str> = house.rooms.iter().map(|&k| ROOM_KINDS[k]).collect();
    println!("rooms: {}", rooms.join(", "));
    for (i, o) in house.objects.iter().enumerate() {
        println!(
            "{} {} at {:?}",
            COLORS[o.color],
            house.object_name(i),
            o.cell
        );
    }
    let path = out.join("house_7.ppm");
    write_ppm(&path, &topdown(&house, 8))?;
    println!("wrote {}", path.display());
    Ok(())
}
