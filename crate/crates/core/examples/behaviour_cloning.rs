//! Runs the autoencoder, imagery and behaviour-cloning stages on the desk
//! world and scores greedy navigation on held-out questions. Takes a few
//! minutes on one core; stages are cached in the output directory.

mod common;

use mindqa::agent::FeatureCache;
use mindqa::harness::DeskWorld;
use mindqa::trainer::{qa_accuracy, Stage};

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let world = DeskWorld::standard()?;
    let untrained = world.models()?;
    let models = common::desk_models(&world, Stage::Bc, &out)?;

    for (name, m) in [("untrained", &untrained), ("cloned", &models)] {
        let mut cache = FeatureCache::new(world.config.render);
        let qa = qa_accuracy(
            &m.agent,
            &m.mind,
            &mut cache,
            &world.corpus,
            &world.corpus.val,
        )?;
        println!(
            "{name:>9}: mean distance closed from 10 away {:.2}, answer accuracy {:.2}",
            world.suite_d_delta(m, 10)?,
            qa
        );
    }
    Ok(())
}
