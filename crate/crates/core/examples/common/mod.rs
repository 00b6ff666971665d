#![allow(dead_code)]

use std::path::PathBuf;

/// First CLI argument, or `out/examples`.
pub fn out_dir() -> PathBuf {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out/examples"));
    std::fs::create_dir_all(&dir).expect("create output directory");
    dir
}

use mindqa::harness::{load_checkpoint, save_checkpoint, DeskWorld};
use mindqa::trainer::{Models, Stage};

/// Models trained through `upto` on the desk world. Each stage is cached as
/// `desk_<stage>.ckpt` in `out` so later examples reuse earlier ones.
pub fn desk_models(
    world: &DeskWorld,
    upto: Stage,
    out: &std::path::Path,
) -> anyhow::Result<Models> {
    let hash = world.config.hash();
    let mut models = world.models()?;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= upto) {
        let path = out.join(format!("desk_{stage}.ckpt"));
        if path.exists() {
            let mut cached = world.models()?;
            if load_checkpoint(&mut cached, &hash, &path).is_ok_and(|w| w.is_empty()) {
                models = cached;
                continue;
            }
        }
        let rep = world.train(&mut models, stage, 7)?;
        println!("trained {stage} in {:.0}s", rep.seconds);
        save_checkpoint(&models, &hash, &path)?;
    }
    Ok(models)
}
