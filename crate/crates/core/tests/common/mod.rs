#![allow(dead_code)]

use mindqa::harness::{desk_config, DeskWorld, RunConfig};

/// Small networks and a handful of epochs, for tests that only need the
/// pipeline to run.
pub fn tiny_config() -> RunConfig {
    let mut c = desk_config();
    c.vae.latent_dim = 6;
    c.vae.channels = vec![4, 8, 8, 8];
    c.imagery.latent_dim = 6;
    c.imagery.hidden = 12;
    c.imagery.mixtures = 2;
    c.agent.embed_dim = 8;
    c.agent.question_dim = 12;
    c.agent.planner_hidden = 16;
    c.agent.controller_hidden = 8;
    c.agent.qa_dim = 8;
    c.train.vae.epochs = 1;
    c.train.vae.max_frames = 24;
    c.train.imagery.epochs = 2;
    c.train.bc.epochs = 2;
    c.train.bc.qa_epochs = 1;
    c.train.rl.epochs = 2;
    c.train.rl.episodes_per_epoch = 4;
    c
}

pub fn tiny_world() -> DeskWorld {
    DeskWorld::new(tiny_config(), 3, 2, 9, 8, 4).unwrap()
}
