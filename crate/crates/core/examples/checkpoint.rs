//! Saves a model, reloads it into a fresh one and confirms the tensors
//! match bit for bit.

mod common;

use mindqa::harness::{load_checkpoint, save_checkpoint, Checkpoint, DeskWorld};
use mindqa::trainer::Stage;

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let mut world = DeskWorld::standard()?;
    world.config.train.vae.epochs = 1;
    let mut models = world.models()?;
    world.train(&mut models, Stage::Vae, 0)?;

    let path = out.join("vae_only.ckpt");
    let hash = world.config.hash();
    save_checkpoint(&models, &hash, &path)?;
    let ck = Checkpoint::read(&path)?;
    println!(
        "{}: {} tensors, stages {:?}, {} bytes",
        path.display(),
        ck.manifest.tensors.len(),
        ck.manifest.stages,
        std::fs::metadata(&path)?.len()
    );

    let mut fresh = world.models()?;
    for w in load_checkpoint(&mut fresh, "some other config", &path)? {
        println!("warning: {w}");
    }
    let same = fresh.mind.vae_params.flatten() == models.mind.vae_params.flatten();
    println!("reloaded parameters identical: {same}");
    Ok(())
}
