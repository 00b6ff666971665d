//! Renders the egocentric 32×32 view in all four headings from one cell and
//! walks the expert path to an object, writing every frame.

mod common;

use mindqa::gridhouse::{
    generate_house, render, shortest_path, step, AgentPose, Heading, RenderConfig,
};
use mindqa::harness::write_frames;

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let house = generate_house(3, 2, 9)?;
    let cfg = RenderConfig::default();
    let cell = house.walkable_cells()[4];

    let views: Vec<_> = Heading::ALL
        .iter()
        .map(|&heading| render(&house, AgentPose { cell, heading }, &cfg).frame)
        .collect();
    let paths = write_frames(out.join("views"), "heading", &views)?;
    println!(
        "{} headings from {cell:?} -> {}",
        views.len(),
        paths[0].parent().unwrap().display()
    );

    let (goal, _) = house.approach_cells(0)[0];
    let start = AgentPose {
        cell,
        heading: Heading::North,
    };
    let actions = shortest_path(&house, start, goal)?;
    let mut pose = start;
    let mut walk = vec![render(&house, pose, &cfg).frame];
    for &a in &actions {
        pose = step(&house, pose, a);
        walk.push(render(&house, pose, &cfg).frame);
    }
    write_frames(out.join("walk"), "step", &walk)?;
    println!(
        "walked {} actions to the {} ({:?})",
        actions.len() - 1,
        house.object_name(0),
        actions
    );
    Ok(())
}
