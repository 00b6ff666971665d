use std::collections::BTreeMap;

use crate::eqagen::{generate_episode, Episode, Vocabulary};
use crate::gridhouse::{generate_house, HouseMap};
use crate::trainer::{train_stage, Corpus, Models, Stage, StageIo, StageReport};

use super::{evaluate, Result, RunConfig};

/// Settings that train the whole pipeline on one small house in a few
/// minutes of a single core. Learning rates are well above the defaults.
pub fn desk_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.vae.beta = 1.0;
    c.train.vae.lr = 1e-3;
    c.train.vae.epochs = 20;
    c.train.vae.batch = 8;
    c.train.imagery.lr = 3e-4;
    c.train.imagery.epochs = 300;
    c.train.bc.lr = 1e-3;
    c.train.bc.epochs = 300;
    c.train.bc.qa_epochs = 10;
    c.train.rl.lr = 1e-4;
    c.train.rl.epochs = 20;
    c.train.rl.episodes_per_epoch = 20;
    c
}

/// One generated house, its demonstrations and a held-out question suite.
#[derive(Clone, Debug)]
pub struct DeskWorld {
    pub config: RunConfig,
    /// Demonstrations in `train`, the held-out suite in `val`.
    pub corpus: Corpus,
}

impl DeskWorld {
    /// `train` demonstrations then `suite` held-out questions, all in house
    /// `house_seed`, spawned 12 actions from their targets.
    pub fn new(
        config: RunConfig,
        house_seed: u64,
        rooms: usize,
        size: usize,
        train: usize,
        suite: usize,
    ) -> Result<Self> {
        let h = generate_house(house_seed, rooms, size)?;
        let vocab = Vocabulary::build(std::slice::from_ref(&h))?;
        let mut eps = (0..train + suite)
            .map(|i| {
                let mut e = generate_episode(&h, &vocab, 100 + i as u64, 12)?;
                e.id = i;
                Ok(e)
            })
            .collect::<Result<Vec<Episode>>>()?;
        let val = eps.split_off(train);
        let corpus = Corpus::new(vec![h], vocab, eps, val)?;
        Ok(Self { config, corpus })
    }

    /// The two-room 9×9 world with 50 demonstrations and 20 held-out questions.
    pub fn standard() -> Result<Self> {
        Self::new(desk_config(), 3, 2, 9, 50, 20)
    }

    pub fn houses(&self) -> &BTreeMap<usize, HouseMap> {
        &self.corpus.houses
    }

    pub fn house(&self) -> &HouseMap {
        self.corpus.houses.values().next().expect("one house")
    }

    pub fn models(&self) -> Result<Models> {
        self.config.build_models(&self.corpus.vocab)
    }

    pub fn train(&self, models: &mut Models, stage: Stage, seed: u64) -> Result<StageReport> {
        Ok(train_stage(
            stage,
            models,
            &self.corpus,
            &self.config.train,
            &self.config.render,
            &self.config.rewards,
            seed,
            &StageIo::default(),
        )?)
    }

    /// Greedy mean distance reduction on the held-out suite, spawned `k`
    /// actions from each target.
    pub fn suite_d_delta(&self, models: &Models, k: u32) -> Result<f64> {
        let (rep, _) = evaluate(
            models,
            self.houses(),
            &self.corpus.val,
            &[k],
            &self.config.render,
            &self.config.rewards,
            &self.config.hash(),
            self.config.seed,
        )?;
        Ok(rep.tiers[0].mean_d_delta)
    }
}
