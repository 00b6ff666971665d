//! Trains the autoencoder and imagery model, then imagines the next few
//! planner actions of a demonstration and decodes them to frames.

mod common;

use mindqa::agent::{run_episode, FeatureCache, Mode, RolloutOptions};
use mindqa::harness::{dump_mental_rollout, latent_trace, write_frames, DeskWorld};
use mindqa::trainer::{imagery_nll, macro_sequences, marginal_nll, Stage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let world = DeskWorld::standard()?;
    let models = common::desk_models(&world, Stage::Imagery, &out)?;
    let cfg = &world.config;

    let mut cache = FeatureCache::new(cfg.render);
    let train = macro_sequences(&models.mind, &mut cache, &world.corpus, &world.corpus.train)?;
    let val = macro_sequences(&models.mind, &mut cache, &world.corpus, &world.corpus.val)?;
    println!(
        "held-out nll per macro-step: imagery {:.2}, marginal mixture {:.2}",
        imagery_nll(&models.mind, &val)?,
        marginal_nll(&train, &val, cfg.imagery.mixtures, cfg.seed)?
    );

    let e = &world.corpus.val[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = run_episode(
        &models.agent,
        &models.mind,
        &mut cache,
        world.corpus.env(e, e.spawn)?,
        &Mode::DemoForced(e.actions.clone()),
        &RolloutOptions::default(),
        &mut rng,
    )?;
    let (frames, latents) = dump_mental_rollout(
        &models.mind,
        world.house(),
        &traj,
        0,
        4,
        &cfg.render,
        &mut rng,
    )?;
    let dir = out.join("imagery");
    write_frames(&dir, "frame", &frames)?;
    std::fs::write(dir.join("latents.json"), latent_trace(&latents))?;
    println!(
        "real frame + {} imagined frames in {}",
        frames.len() - 1,
        dir.display()
    );
    Ok(())
}
