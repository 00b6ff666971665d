use ndnet::{Real, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::agent::StepVars;
use crate::gridhouse::ActionType;

use super::{Result, RlConfig, TrainError};

/// Mean negative log-likelihood of every demonstrated decision: planner
/// actions against `planner_log_probs`, then controller repeat/return
/// choices against `controller_log_probs`.
pub fn bc_loss_t<T: Real>(
    t: &mut Tape<'_, T>,
    planner_log_probs: &[Var],
    demo_actions: &[ActionType],
    controller_log_probs: &[Var],
    controller_targets: &[u8],
) -> Result<Var> {
    if planner_log_probs.len() != demo_actions.len()
        || controller_log_probs.len() != controller_targets.len()
    {
        return Err(TrainError::Length(format!(
            "{} planner outputs for {} actions, {} controller outputs for {} targets",
            planner_log_probs.len(),
            demo_actions.len(),
            controller_log_probs.len(),
            controller_targets.len()
        )));
    }
    let n = demo_actions.len() + controller_targets.len();
    if n == 0 {
        return Err(TrainError::Length("no decisions to imitate".into()));
    }
    let mut terms = Vec::with_capacity(n);
    for (&lp, a) in planner_log_probs.iter().zip(demo_actions) {
        terms.push(t.pick(lp, a.index())?);
    }
    for (&lc, &d) in controller_log_probs.iter().zip(controller_targets) {
        if d > 1 {
            return Err(TrainError::Length(format!(
                "controller target {d} is not 0 or 1"
            )));
        }
        terms.push(t.pick(lc, d as usize)?);
    }
    let s = t.concat(&terms)?;
    let m = t.mean(s)?;
    Ok(t.neg(m)?)
}

/// [`bc_loss_t`] over the decisions recorded by a demo-forced rollout.
pub fn bc_loss_from_steps<T: Real>(t: &mut Tape<'_, T>, steps: &[StepVars]) -> Result<Var> {
    let lp: Vec<Var> = steps.iter().map(|s| s.log_probs).collect();
    let acts: Vec<ActionType> = steps.iter().map(|s| s.action).collect();
    let (lc, dc): (Vec<Var>, Vec<u8>) = steps
        .iter()
        .flat_map(|s| s.controller.iter().copied())
        .unzip();
    bc_loss_t(t, &lp, &acts, &lc, &dc)
}

/// Spawn offset for curriculum phase `phase`: five more primitive actions
/// per phase, never past the start of the demonstration.
pub fn curriculum_spawn(phase: usize, demo_len: usize, step: usize, initial: usize) -> usize {
    (initial + step * phase).min(demo_len)
}

/// Advantages by the backward recursion `A_t = δ_t + γλ·A_{t+1}`, where
/// `δ_t = R_t + γ·V_{t+1} − V_t`. `values` carries one trailing bootstrap.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(TrainError::Length(format!(
            "{} rewards need {} values, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for i in (0..rewards.len()).rev() {
        let delta = rewards[i] + gamma * values[i + 1] - values[i];
        next = delta + gamma * lambda * next;
        adv[i] = next;
    }
    Ok(adv)
}

/// Discounted return-to-go with `bootstrap` after the last reward.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for i in (0..rewards.len()).rev() {
        g = rewards[i] + gamma * g;
        out[i] = g;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueTarget {
    /// Discounted return-to-go.
    #[default]
    Return,
    /// The step's own reward.
    OneStep,
}

/// One episode of planner steps with its rewards and value estimates.
#[derive(Clone, Debug)]
pub struct RolloutEpisode {
    pub steps: Vec<StepVars>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
}

impl RolloutEpisode {
    pub fn new(steps: Vec<StepVars>, rewards: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if steps.len() != rewards.len() || steps.len() != values.len() || steps.is_empty() {
            return Err(TrainError::Length(format!(
                "{} steps, {} rewards, {} values",
                steps.len(),
                rewards.len(),
                values.len()
            )));
        }
        let stops = steps
            .iter()
            .filter(|s| s.action == ActionType::Stop)
            .count();
        if stops != 1 || steps.last().unwrap().action != ActionType::Stop {
            return Err(TrainError::Length(
                "episode must end in exactly one stop".into(),
            ));
        }
        Ok(Self {
            steps,
            rewards,
            values,
            advantages: None,
            targets: None,
        })
    }

    /// Fills advantages and value targets; the terminal bootstrap is 0.
    pub fn prepare(&mut self, cfg: &RlConfig) -> Result<()> {
        let mut v = self.values.clone();
        v.push(0.0);
        self.advantages = Some(gae_advantages(
            &self.rewards,
            &v,
            cfg.gamma,
            cfg.gae_lambda,
        )?);
        self.targets = Some(match cfg.value_target {
            ValueTarget::Return => discounted_returns(&self.rewards, cfg.gamma, 0.0),
            ValueTarget::OneStep => self.rewards.clone(),
        });
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AcLosses {
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub total: Var,
}

/// Policy, value and entropy terms over a batch. Advantages enter as
/// constants. Controller decisions share the advantage of their planner
/// step; a stop forced by the action budget is not the policy's choice and
/// contributes only to the value loss.
pub fn actor_critic_losses_t<T: Real>(
    t: &mut Tape<'_, T>,
    batch: &[RolloutEpisode],
    cfg: &RlConfig,
) -> Result<AcLosses> {
    let mut pol = Vec::new();
    let mut val = Vec::new();
    let mut ent = Vec::new();
    for ep in batch {
        let adv = ep.advantages.as_ref().ok_or(TrainError::MissingAdvantage)?;
        let tgt = ep.targets.as_ref().ok_or(TrainError::MissingAdvantage)?;
        if adv.len() != ep.steps.len() || tgt.len() != ep.steps.len() {
            return Err(TrainError::Length("advantages do not match steps".into()));
        }
        for (i, s) in ep.steps.iter().enumerate() {
            let v = t.pick(s.value, 0)?;
            let d = t.add_scalar(v, -tgt[i])?;
            val.push(t.square(d)?);
            if s.forced {
                continue;
            }
            let lp = t.pick(s.log_probs, s.action.index())?;
            pol.push(t.scale(lp, -adv[i])?);
            for &(lc, dec) in &s.controller {
                let l = t.pick(lc, dec as usize)?;
                pol.push(t.scale(l, -adv[i])?);
            }
            let p = t.exp(s.log_probs)?;
            let plogp = t.mul(p, s.log_probs)?;
            let h = t.sum(plogp)?;
            ent.push(t.neg(h)?);
        }
    }
    if val.is_empty() {
        return Err(TrainError::Length("empty batch".into()));
    }
    let mean_of = |t: &mut Tape<'_, T>, xs: &[Var]| -> Result<Var> {
        if xs.is_empty() {
            return Ok(t.constant_scalar(T::zero())?);
        }
        let c = t.concat(xs)?;
        Ok(t.mean(c)?)
    };
    let policy = mean_of(t, &pol)?;
    let value = mean_of(t, &val)?;
    let entropy = mean_of(t, &ent)?;
    let wv = t.scale(value, cfg.value_weight)?;
    let we = t.scale(entropy, -cfg.entropy_weight)?;
    let a = t.add(policy, wv)?;
    let total = t.add(a, we)?;
    Ok(AcLosses {
        policy,
        value,
        entropy,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curriculum_examples() {
        assert_eq!(curriculum_spawn(0, 100, 5, 5), 5);
        assert_eq!(curriculum_spawn(3, 100, 5, 5), 20);
        assert_eq!(curriculum_spawn(9, 12, 5, 5), 12);
    }

    #[test]
    fn gae_single_step() {
        let a = gae_advantages(&[2.0], &[0.5, 0.0], 0.99, 1.0).unwrap();
        assert!((a[0] - 1.5).abs() < 1e-12);
        assert!(gae_advantages(&[1.0, 2.0], &[0.0, 0.0], 0.9, 0.9).is_err());
    }
}
