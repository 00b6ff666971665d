//! Builds a small question dataset, saves it and prints a few episodes.

mod common;

use mindqa::eqagen::{max_answer_share, Dataset, DatasetConfig, Split};

fn main() -> anyhow::Result<()> {
    let out = common::out_dir();
    let cfg = DatasetConfig {
        houses: 12,
        episodes_per_house: 6,
        ..DatasetConfig::default()
    };
    let ds = Dataset::generate(&cfg, 1)?;
    ds.save(out.join("dataset"))?;
    println!(
        "{} houses, {} episodes, {} words, answers: {}",
        ds.houses.len(),
        ds.episodes.len(),
        ds.vocab.words.len(),
        ds.vocab.answers.join(" ")
    );
    for split in [Split::Train, Split::Val, Split::Test] {
        let eps: Vec<_> = ds.split(split).into_iter().cloned().collect();
        println!(
            "{split:?}: {} episodes, top answer share {:.2}",
            eps.len(),
            max_answer_share(&eps)
        );
    }
    for e in ds.episodes.iter().take(4) {
        println!(
            "#{} house {} | {} -> {} | {} actions from {} away",
            e.id,
            e.house_id,
            e.question,
            ds.vocab.answers[e.answer],
            e.actions.len(),
            e.spawn_k
        );
    }
    let back = Dataset::load(out.join("dataset"))?;
    assert_eq!(back.episodes, ds.episodes);
    Ok(())
}
