//! Trains the frame autoencoder on the desk world's demonstration frames and
//! writes a few reconstructions next to their originals.

mod common;

use mindqa::harness::{write_frames, DeskWorld};
use mindqa::trainer::{demo_frames, vae_eval, Stage};

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let world = DeskWorld::standard()?;
    let mut models = world.models()?;
    let frames = demo_frames(&world.corpus, &world.config.render, 500)?;
    let before = vae_eval(&models.mind, &frames)?;
    let report = world.train(&mut models, Stage::Vae, 0)?;
    let after = vae_eval(&models.mind, &frames)?;
    println!(
        "{} frames, recon {:.1} -> {:.1}, kl {:.2}, {:.0}s",
        frames.len(),
        before.recon,
        after.recon,
        after.kl,
        report.seconds
    );

    let vae = &models.mind.vae;
    let mut pairs = Vec::new();
    for chw in frames.iter().step_by(frames.len() / 4).take(4) {
        let (mu, _) = vae.encode_chw(&models.mind.vae_params, chw)?;
        let h = world.config.render.height;
        let w = world.config.render.width;
        pairs.push(mindqa::gridhouse::Frame::from_chw(h, w, chw));
        pairs.push(vae.decode(&models.mind.vae_params, &mu)?);
    }
    write_frames(out.join("reconstructions"), "pair", &pairs)?;
    Ok(())
}
