//! Greedy evaluation at three spawn distances, then a top-down map of one
//! episode with the expert and agent paths.

mod common;

use mindqa::gridhouse::write_ppm;
use mindqa::harness::{dump_topdown, evaluate, DeskWorld};
use mindqa::trainer::Stage;

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let world = DeskWorld::standard()?;
    let models = common::desk_models(&world, Stage::Bc, &out)?;
    let cfg = &world.config;
    let (report, trajs) = evaluate(
        &models,
        world.houses(),
        &world.corpus.val,
        &[5, 10, 15],
        &cfg.render,
        &cfg.rewards,
        &cfg.hash(),
        cfg.seed,
    )?;
    for t in &report.tiers {
        println!(
            "T-{:<2} {} episodes: d_delta {:+.2}, answers {:.2}, forced stops {}",
            t.tier, t.episodes, t.mean_d_delta, t.qa_accuracy, t.forced_stops
        );
    }
    std::fs::write(out.join("eval.json"), report.to_json())?;

    let t = &trajs[0];
    let e = world
        .corpus
        .val
        .iter()
        .find(|e| e.id == t.episode_id)
        .expect("episode");
    let expert = e.expert_poses(world.house());
    let img = dump_topdown(world.house(), &[expert, t.poses()], 8)?;
    write_ppm(out.join("eval_topdown.ppm"), &img)?;
    Ok(())
}
