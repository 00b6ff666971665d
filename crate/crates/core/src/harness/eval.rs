use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, EpisodeEnv, FeatureCache, Mode, RolloutOptions, TrajectoryRecord};
use crate::eqagen::Episode;
use crate::gridhouse::{spawn_at_distance, DistanceField, HouseMap, RenderConfig};
use crate::rewards::RewardConfig;
use crate::trainer::Models;

use super::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub tier: u32,
    pub episodes: usize,
    pub mean_d_delta: f64,
    pub qa_accuracy: f64,
    /// Episodes whose house has no pose this far from the target.
    pub excluded: usize,
    pub forced_stops: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub tiers: Vec<TierReport>,
    pub deviations: Vec<String>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn tier(&self, k: u32) -> Option<&TierReport> {
        self.tiers.iter().find(|t| t.tier == k)
    }
}

/// Greedy evaluation of every episode re-spawned exactly `k` primitive
/// actions from its target, for each `k` in `tiers`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    models: &Models,
    houses: &BTreeMap<usize, HouseMap>,
    episodes: &[Episode],
    tiers: &[u32],
    render_cfg: &RenderConfig,
    rewards: &RewardConfig,
    config_hash: &str,
    seed: u64,
) -> Result<(EvalReport, Vec<TrajectoryRecord>)> {
    if episodes.is_empty() {
        return Err(HarnessError::Input("no episodes to evaluate".into()));
    }
    let opts = RolloutOptions {
        rewards: *rewards,
        planned_reward: false,
    };
    let mut cache = FeatureCache::new(*render_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_tiers = Vec::new();
    let mut deviations = Vec::new();
    let mut trajectories = Vec::new();
    for &k in tiers {
        let (mut n, mut dd, mut hits, mut excluded, mut forced) =
            (0usize, 0i64, 0usize, 0usize, 0usize);
        for e in episodes {
            let h = houses.get(&e.house_id).ok_or_else(|| {
                HarnessError::Input(format!(
                    "episode {} names unknown house {}",
                    e.id, e.house_id
                ))
            })?;
            let field = DistanceField::new(h, e.target)?;
            let s = seed ^ ((e.id as u64) << 20) ^ k as u64;
            let spawn = spawn_at_distance(h, e.target, k, s)?;
            if spawn.fallback {
                excluded += 1;
                deviations.push(format!(
                    "episode {} tier {k}: farthest spawn is {}",
                    e.id, spawn.distance
                ));
                continue;
            }
            let env = EpisodeEnv {
                house: h,
                field: &field,
                episode: e,
                start: spawn.pose,
            };
            let tr = run_episode(
                &models.agent,
                &models.mind,
                &mut cache,
                env,
                &Mode::Greedy,
                &opts,
                &mut rng,
            )?;
            n += 1;
            dd += tr.d_delta();
            hits += usize::from(tr.correct);
            forced += usize::from(tr.forced_stop);
            trajectories.push(tr);
        }
        let div = n.max(1) as f64;
        out_tiers.push(TierReport {
            tier: k,
            episodes: n,
            mean_d_delta: dd as f64 / div,
            qa_accuracy: hits as f64 / div,
            excluded,
            forced_stops: forced,
        });
    }
    let report = EvalReport {
        config_hash: config_hash.to_string(),
        tiers: out_tiers,
        deviations,
        notes: vec!["greedy actions; a stop forced by the action budget ends the episode and counts toward d_delta".into()],
    };
    Ok((report, trajectories))
}
