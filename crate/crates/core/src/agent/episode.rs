use std::collections::HashMap;

use ndnet::{ParamStore, Tape, Var};
use rand::distributions::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::eqagen::{Episode, Vocabulary};
use crate::gridhouse::{
    self, render, ActionType, AgentPose, Cell, DistanceField, HouseMap, RenderConfig,
};
use crate::mind::{macro_steps, ImageryState, Mind, MAX_REPEAT};
use crate::rewards::{self, RewardConfig};

use super::net::{AgentConfig, FrameBuffer, Navigator, QaModel};
use super::{AgentError, Result};

/// Navigator and answerer with their parameters.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub nav: Navigator,
    pub nav_params: ParamStore<f32>,
    pub qa: QaModel,
    pub qa_params: ParamStore<f32>,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        cfg: AgentConfig,
        vocab: &Vocabulary,
        mind: &Mind,
        rng: &mut R,
    ) -> Result<Self> {
        let mut nav_params = ParamStore::new();
        let nav = Navigator::new(
            cfg.clone(),
            vocab.words.len(),
            mind.latent_dim(),
            mind.imagery_hidden(),
            &mut nav_params,
            rng,
        )?;
        let mut qa_params = ParamStore::new();
        let qa = QaModel::new(
            &cfg,
            vocab.words.len(),
            vocab.answers.len(),
            mind.latent_dim(),
            &mut qa_params,
            rng,
        )?;
        Ok(Self {
            cfg,
            nav,
            nav_params,
            qa,
            qa_params,
        })
    }
}

/// Encoder posterior means keyed by (house, pose). Rendering and encoding
/// are pure, so entries never go stale while the encoder is frozen.
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    pub render: RenderConfig,
    map: HashMap<(usize, AgentPose), Vec<f32>>,
}

impl FeatureCache {
    pub fn new(render: RenderConfig) -> Self {
        Self {
            render,
            map: HashMap::new(),
        }
    }

    pub fn feature(&mut self, mind: &Mind, house: &HouseMap, pose: AgentPose) -> Result<Vec<f32>> {
        if let Some(f) = self.map.get(&(house.id, pose)) {
            return Ok(f.clone());
        }
        let obs = render(house, pose, &self.render);
        let (mu, _) = mind.vae.encode(&mind.vae_params, &obs.frame)?;
        self.map.insert((house.id, pose), mu.clone());
        Ok(mu)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Greedy,
    Sample,
    /// Replays the given actions (ending in `Stop`) through the policy.
    DemoForced(Vec<ActionType>),
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RolloutOptions {
    pub rewards: RewardConfig,
    /// Query the answerer twice per planner step for the planned reward.
    pub planned_reward: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerRecord {
    /// Pose after the execution the decision follows.
    pub pose: AgentPose,
    /// Executions of the action so far in this macro-step.
    pub count: usize,
    /// 1 repeats the action, 0 returns control.
    pub decision: u8,
    /// Set when the cap decided, not the network.
    pub forced: bool,
    pub log_prob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub pose: AgentPose,
    pub action: ActionType,
    /// Stop imposed by the action budget.
    pub forced: bool,
    pub log_prob: f64,
    pub value: f64,
    pub feature: Vec<f32>,
    pub mental: Option<Vec<f32>>,
    pub controller: Vec<ControllerRecord>,
    /// Pose after each primitive execution.
    pub path: Vec<AgentPose>,
    pub primitives: usize,
    pub d_before: u32,
    pub d_after: u32,
    pub r_p: f64,
    pub r_m: Option<f64>,
    pub r_f: Option<f64>,
}

impl StepRecord {
    pub fn total_reward(&self) -> f64 {
        let terminal = self.action == ActionType::Stop;
        rewards::total_reward(
            self.r_p,
            self.r_m.unwrap_or(0.0),
            self.r_f.unwrap_or(0.0),
            terminal,
        )
        .expect("final reward only on the stop step")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: usize,
    pub house_id: usize,
    pub start: AgentPose,
    pub target: Cell,
    pub d0: u32,
    pub d_t: u32,
    pub n_actions: usize,
    pub steps: Vec<StepRecord>,
    pub answer: usize,
    pub answer_prob: f64,
    pub correct: bool,
    pub forced_stop: bool,
}

impl TrajectoryRecord {
    pub fn d_delta(&self) -> i64 {
        self.d0 as i64 - self.d_t as i64
    }

    /// Every primitive action, in order, ending with `Stop`.
    pub fn primitive_actions(&self) -> Vec<ActionType> {
        let mut out = Vec::with_capacity(self.n_actions + 1);
        for s in &self.steps {
            out.extend(std::iter::repeat_n(s.action, s.primitives));
        }
        out.push(ActionType::Stop);
        out
    }

    pub fn poses(&self) -> Vec<AgentPose> {
        let mut out = vec![self.start];
        for s in &self.steps {
            out.extend_from_slice(&s.path);
        }
        out
    }

    /// Longest run of primitive executions attributed to one planner step.
    pub fn max_macro_len(&self) -> usize {
        self.steps.iter().map(|s| s.primitives).max().unwrap_or(0)
    }
}

/// Tape handles for one planner step, for losses built after the rollout.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub log_probs: Var,
    pub value: Var,
    pub action: ActionType,
    pub forced: bool,
    /// Network-made controller decisions: log-probabilities and the choice.
    pub controller: Vec<(Var, u8)>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn choose<R: Rng + ?Sized>(log_probs: &[f32], sample: bool, rng: &mut R) -> usize {
    if sample {
        let w: Vec<f64> = log_probs.iter().map(|&l| (l as f64).exp()).collect();
        WeightedIndex::new(&w)
            .expect("valid distribution")
            .sample(rng)
    } else {
        argmax(&log_probs.iter().map(|&l| l as f64).collect::<Vec<_>>())
    }
}

/// Everything a rollout needs to know about the world.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeEnv<'a> {
    pub house: &'a HouseMap,
    pub field: &'a DistanceField,
    pub episode: &'a Episode,
    pub start: AgentPose,
}

impl<'a> EpisodeEnv<'a> {
    pub fn check(&self) -> Result<()> {
        if self.episode.house_id != self.house.id {
            return Err(AgentError::Mismatch(format!(
                "episode {} belongs to house {}, not {}",
                self.episode.id, self.episode.house_id, self.house.id
            )));
        }
        if self.field.target() != self.episode.target {
            return Err(AgentError::Mismatch(
                "distance field is for a different target".into(),
            ));
        }
        if !self.house.valid_pose(self.start) {
            return Err(AgentError::Mismatch(format!(
                "start pose {:?} is not walkable",
                self.start
            )));
        }
        Ok(())
    }

    fn dist(&self, pose: AgentPose) -> Result<u32> {
        self.field
            .get(pose)
            .ok_or_else(|| AgentError::Mismatch(format!("pose {pose:?} cannot reach the target")))
    }
}

/// Runs one episode on `t`, whose parameters must be `agent.nav_params`.
///
/// Each planner step: encode the current frame, run the planner on it with
/// the imagery state from the previous step, pick an action, advance the
/// imagery model with that action (its most likely next latent is the
/// mental image), then execute the action and let the controller repeat it
/// up to [`MAX_REPEAT`] executions in total. The answerer is queried once,
/// after the stop.
#[allow(clippy::too_many_arguments)]
pub fn rollout_t<R: Rng + ?Sized>(
    t: &mut Tape<'_, f32>,
    agent: &Agent,
    mind: &Mind,
    cache: &mut FeatureCache,
    env: EpisodeEnv<'_>,
    mode: &Mode,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<(TrajectoryRecord, Vec<StepVars>)> {
    env.check()?;
    let nav = &agent.nav;
    let n_max = agent.cfg.n_max.min(opts.rewards.n_max);
    let tokens = &env.episode.tokens;
    let q = nav.question_t(t, tokens)?;
    let mut pstate = nav.planner_zero_t(t)?;
    let mut prev = ActionType::Stop;
    let mut img = ImageryState::zeros(mind.imagery_hidden());
    let mut pose = env.start;
    let d0 = env.dist(pose)?;
    let mut buffer = FrameBuffer::new();
    let mut feature = cache.feature(mind, env.house, pose)?;
    buffer.push(feature.clone());

    let demo = match mode {
        Mode::DemoForced(actions) => {
            if actions.last() != Some(&ActionType::Stop) {
                return Err(AgentError::Input(
                    "forced actions must end with stop".into(),
                ));
            }
            Some(macro_steps(actions))
        }
        _ => None,
    };
    let sample = matches!(mode, Mode::Sample);
    let mut n = 0usize;
    let mut steps = Vec::new();
    let mut vars = Vec::new();
    let mut forced_stop = false;

    loop {
        let out = nav.planner_step_t(t, pstate, &feature, q, prev, &img.h)?;
        let lp = t.value(out.log_probs).data().to_vec();
        let value = t.value(out.value).data()[0] as f64;
        let (action, forced) = if n >= n_max {
            (ActionType::Stop, true)
        } else if let Some(m) = &demo {
            let i = steps.len();
            let a = m
                .get(i)
                .ok_or_else(|| AgentError::Input("forced actions ended without stop".into()))?
                .action;
            (a, false)
        } else {
            (
                ActionType::from_index(choose(&lp, sample, rng)).unwrap(),
                false,
            )
        };
        forced_stop |= forced;
        let d_before = env.dist(pose)?;
        let mut rec = StepRecord {
            pose,
            action,
            forced,
            log_prob: lp[action.index()] as f64,
            value,
            feature: feature.clone(),
            mental: None,
            controller: Vec::new(),
            path: Vec::new(),
            primitives: 0,
            d_before,
            d_after: d_before,
            r_p: 0.0,
            r_m: None,
            r_f: None,
        };
        let mut sv = StepVars {
            log_probs: out.log_probs,
            value: out.value,
            action,
            forced,
            controller: Vec::new(),
        };

        if action == ActionType::Stop {
            let slots = buffer.slots()?;
            let probs = agent.qa.answer(&agent.qa_params, tokens, &slots)?;
            let answer = argmax(&probs);
            let correct = answer == env.episode.answer;
            rec.r_f = Some(rewards::final_reward(correct, n, &opts.rewards));
            steps.push(rec);
            vars.push(sv);
            return Ok((
                TrajectoryRecord {
                    episode_id: env.episode.id,
                    house_id: env.house.id,
                    start: env.start,
                    target: env.episode.target,
                    d0,
                    d_t: d_before,
                    n_actions: n,
                    steps,
                    answer,
                    answer_prob: probs[env.episode.answer],
                    correct,
                    forced_stop,
                },
                vars,
            ));
        }

        let (mix, next_img) =
            mind.imagery
                .imagery_step(&mind.imagery_params, &feature, &img, action)?;
        let mental = mix.mode_mean();
        if opts.planned_reward {
            let with = agent.qa.answer(
                &agent.qa_params,
                tokens,
                &buffer.slots_with_mental(&mental)?,
            )?;
            let without = agent
                .qa
                .answer(&agent.qa_params, tokens, &buffer.slots()?)?;
            let a = env.episode.answer;
            rec.r_m = Some(rewards::planned_reward(
                with[a].clamp(0.0, 1.0),
                without[a].clamp(0.0, 1.0),
            )?);
        }
        rec.mental = Some(mental);
        img = next_img;

        let demo_len = demo.as_ref().map(|m| m[steps.len()].len);
        let mut count = 0;
        loop {
            let next = gridhouse::step(env.house, pose, action);
            let d_prev = env.dist(pose)?;
            let d_next = env.dist(next)?;
            rec.r_p += rewards::progressive_reward(d_prev, d_next);
            pose = next;
            rec.path.push(pose);
            n += 1;
            count += 1;
            feature = cache.feature(mind, env.house, pose)?;
            buffer.push(feature.clone());
            if n >= n_max {
                break;
            }
            if count >= MAX_REPEAT {
                rec.controller.push(ControllerRecord {
                    pose,
                    count,
                    decision: 0,
                    forced: true,
                    log_prob: None,
                });
                break;
            }
            let lc = nav.controller_t(t, out.state.h, &feature, q, action, count)?;
            let lcv = t.value(lc).data().to_vec();
            let decision = match demo_len {
                Some(len) => u8::from(count < len),
                None => choose(&lcv, sample, rng) as u8,
            };
            rec.controller.push(ControllerRecord {
                pose,
                count,
                decision,
                forced: false,
                log_prob: Some(lcv[decision as usize] as f64),
            });
            sv.controller.push((lc, decision));
            if decision == 0 {
                break;
            }
        }
        rec.primitives = count;
        rec.d_after = env.dist(pose)?;
        steps.push(rec);
        vars.push(sv);
        prev = action;
        pstate = out.state;
    }
}

/// [`rollout_t`] on a throwaway tape.
pub fn run_episode<R: Rng + ?Sized>(
    agent: &Agent,
    mind: &Mind,
    cache: &mut FeatureCache,
    env: EpisodeEnv<'_>,
    mode: &Mode,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let mut t = Tape::new(&agent.nav_params);
    Ok(rollout_t(&mut t, agent, mind, cache, env, mode, opts, rng)?.0)
}
