//! Fine-tunes the cloned agent with actor-critic updates, with and without
//! the planned reward from imagined frames.

mod common;

use mindqa::harness::DeskWorld;
use mindqa::trainer::Stage;

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let mut world = DeskWorld::standard()?;
    let bc = common::desk_models(&world, Stage::Bc, &out)?;
    println!("cloned: {:.2}", world.suite_d_delta(&bc, 10)?);

    for planned in [true, false] {
        world.config.train.rl.planned_reward = planned;
        let mut m = bc.clone();
        let rep = world.train(&mut m, Stage::Rl, 100)?;
        let last = rep.metrics.last().expect("rl logs every epoch");
        println!(
            "planned reward {planned:>5}: d_delta {:.2}, final epoch return {:.2}, r_m {:+.4}, {:.0}s",
            world.suite_d_delta(&m, 10)?,
            last.extra["mean_return"],
            last.extra["mean_r_m"],
            rep.seconds
        );
    }
    Ok(())
}
