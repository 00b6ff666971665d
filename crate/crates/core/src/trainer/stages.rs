use std::collections::{HashSet, VecDeque};
use std::sync::{mpsc, RwLock};
use std::time::Instant;

use ndnet::{clip_global_norm, AdamConfig, AdamState, GradSet, ParamStore, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent::{
    rollout_t, run_episode, Agent, FeatureCache, FrameBuffer, Mode, RolloutOptions,
    TrajectoryRecord,
};
use crate::eqagen::Episode;
use crate::gridhouse::{render, spawn_at_distance, ActionType, RenderConfig};
use crate::mind::{
    fit_marginal_mixture, macro_steps, mdn_nll, mdn_nll_t, ImageryState, Mind, VaeLossValue,
};
use crate::rewards::RewardConfig;

use super::losses::{actor_critic_losses_t, bc_loss_from_steps, curriculum_spawn, RolloutEpisode};
use super::{
    BcConfig, Corpus, ImageryTrainConfig, MetricsRecord, Models, Result, RlConfig, Stage, StageIo,
    SyncMode, TrainConfig, TrainError, VaeTrainConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub metrics: Vec<MetricsRecord>,
    pub seconds: f64,
}

/// Runs one stage on `models`, logging and checkpointing after every epoch
/// through `io`. On a non-finite loss the parameters are rolled back to the
/// start of the failing epoch and the error is returned.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    stage: Stage,
    models: &mut Models,
    corpus: &Corpus,
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
    rewards: &RewardConfig,
    seed: u64,
    io: &StageIo,
) -> Result<StageReport> {
    models.require(stage)?;
    let start = Instant::now();
    let metrics = match stage {
        Stage::Vae => train_vae(models, corpus, &cfg.vae, render_cfg, seed, io)?,
        Stage::Imagery => train_imagery(models, corpus, &cfg.imagery, render_cfg, seed, io)?,
        Stage::Bc => train_bc(models, corpus, &cfg.bc, render_cfg, rewards, seed, io)?,
        Stage::Rl => train_rl(models, corpus, &cfg.rl, render_cfg, rewards, seed, io)?,
    };
    models.mark(stage);
    Ok(StageReport {
        stage,
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn non_finite(e: &TrainError) -> bool {
    use crate::agent::AgentError;
    use crate::mind::MindError;
    use ndnet::NdError;
    matches!(
        e,
        TrainError::Nd(NdError::NonFinite { .. })
            | TrainError::Mind(MindError::Nd(NdError::NonFinite { .. }))
            | TrainError::Agent(AgentError::Nd(NdError::NonFinite { .. }))
            | TrainError::Agent(AgentError::Mind(MindError::Nd(NdError::NonFinite { .. })))
    )
}

fn guard<T>(stage: Stage, epoch: usize, r: Result<T>) -> Result<T> {
    match r {
        Err(e) if non_finite(&e) => Err(TrainError::NonFinite { stage, epoch }),
        Ok(_) | Err(_) => r,
    }
}

fn finish_epoch(
    models: &mut Models,
    stage: Stage,
    rec: &MetricsRecord,
    io: &StageIo,
) -> Result<()> {
    if !rec.loss.is_finite() {
        return Err(TrainError::NonFinite {
            stage,
            epoch: rec.epoch,
        });
    }
    models.mark(stage);
    io.log(rec)?;
    io.checkpoint(models, stage)
}

fn apply(
    adam: &mut AdamState<f32>,
    store: &mut ParamStore<f32>,
    mut grads: GradSet<f32>,
    n: usize,
    clip: f64,
) -> Result<f64> {
    grads.scale(1.0 / n.max(1) as f32);
    let norm = if clip > 0.0 {
        clip_global_norm(&mut grads, clip)
    } else {
        grads.global_norm()
    };
    if !norm.is_finite() {
        return Err(ndnet::NdError::NonFinite { op: "gradient" }.into());
    }
    adam.step(store, &grads)?;
    Ok(norm)
}

fn over_budget(start: Instant, max: Option<f64>) -> bool {
    max.is_some_and(|s| start.elapsed().as_secs_f64() >= s)
}

/// Distinct frames along the training demonstrations, in episode order, as
/// CHW buffers.
pub fn demo_frames(
    corpus: &Corpus,
    render_cfg: &RenderConfig,
    max: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in &corpus.train {
        let h = corpus.house(e.house_id)?;
        for p in e.expert_poses(h) {
            if out.len() >= max {
                return Ok(out);
            }
            if seen.insert((h.id, p)) {
                out.push(render(h, p, render_cfg).frame.to_chw());
            }
        }
    }
    Ok(out)
}

/// Mean loss terms over `frames`, decoding the posterior mean.
pub fn vae_eval(mind: &Mind, frames: &[Vec<f32>]) -> Result<VaeLossValue> {
    let mut acc = VaeLossValue {
        total: 0.0,
        recon: 0.0,
        kl: 0.0,
    };
    for f in frames {
        let v = mind
            .vae
            .loss_value(&mind.vae_params, f, mind.vae.cfg.beta)?;
        acc.total += v.total;
        acc.recon += v.recon;
        acc.kl += v.kl;
    }
    let n = frames.len().max(1) as f64;
    acc.total /= n;
    acc.recon /= n;
    acc.kl /= n;
    Ok(acc)
}

fn train_vae(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &VaeTrainConfig,
    render_cfg: &RenderConfig,
    seed: u64,
    io: &StageIo,
) -> Result<Vec<MetricsRecord>> {
    if cfg.batch == 0 {
        return Err(TrainError::Config("vae batch must be positive".into()));
    }
    let frames = demo_frames(corpus, render_cfg, cfg.max_frames)?;
    if frames.is_empty() {
        return Err(TrainError::Data("no demonstration frames".into()));
    }
    if frames[0].len() != models.mind.vae.frame_len() {
        return Err(TrainError::Config(format!(
            "renderer makes {}x{} frames, autoencoder expects {}x{}",
            render_cfg.height,
            render_cfg.width,
            models.mind.vae.cfg.frame_h,
            models.mind.vae.cfg.frame_w
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vae = models.mind.vae.clone();
    let beta = vae.cfg.beta;
    let mut adam = AdamState::new(&models.mind.vae_params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let start = Instant::now();
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs {
        if over_budget(start, cfg.max_seconds) {
            break;
        }
        let backup = models.mind.vae_params.clone();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let r: Result<()> = (|| {
            for chunk in order.chunks(cfg.batch) {
                let mut acc = GradSet::zeros_like(&models.mind.vae_params);
                for &i in chunk {
                    let eps: Vec<f32> = (0..vae.latent_dim())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let mut t = Tape::new(&models.mind.vae_params);
                    let l = vae.vae_loss_t(&mut t, &frames[i], Some(&eps), beta)?;
                    sums[0] += t.scalar(l.total) as f64;
                    sums[1] += t.scalar(l.recon) as f64;
                    sums[2] += t.scalar(l.kl) as f64;
                    acc.accumulate(t.backward(l.total)?.params())?;
                }
                apply(
                    &mut adam,
                    &mut models.mind.vae_params,
                    acc,
                    chunk.len(),
                    cfg.clip,
                )?;
            }
            Ok(())
        })();
        if let Err(e) = guard(Stage::Vae, epoch, r) {
            models.mind.vae_params = backup;
            return Err(e);
        }
        let n = frames.len() as f64;
        let ev = guard(Stage::Vae, epoch, vae_eval(&models.mind, &frames))?;
        let rec = MetricsRecord::new(Stage::Vae, epoch, sums[0] / n)
            .with("recon", sums[1] / n)
            .with("kl", sums[2] / n)
            .with("eval_recon", ev.recon)
            .with("eval_kl", ev.kl)
            .with("frames", n);
        finish_epoch(models, Stage::Vae, &rec, io)?;
        out.push(rec);
    }
    Ok(out)
}

/// Encoder latents at the start of each macro-step of a demonstration, plus
/// the latent after the last one (`latents.len() == actions.len() + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct MacroSequence {
    pub latents: Vec<Vec<f32>>,
    pub actions: Vec<ActionType>,
}

pub fn macro_sequences(
    mind: &Mind,
    cache: &mut FeatureCache,
    corpus: &Corpus,
    episodes: &[Episode],
) -> Result<Vec<MacroSequence>> {
    let mut out = Vec::with_capacity(episodes.len());
    for e in episodes {
        let h = corpus.house(e.house_id)?;
        let poses = e.expert_poses(h);
        let last = poses.len() - 1;
        let macros = macro_steps(&e.actions);
        let mut latents = Vec::with_capacity(macros.len() + 1);
        for m in &macros {
            latents.push(cache.feature(mind, h, poses[m.start.min(last)])?);
        }
        latents.push(cache.feature(mind, h, poses[last])?);
        out.push(MacroSequence {
            latents,
            actions: macros.iter().map(|m| m.action).collect(),
        });
    }
    Ok(out)
}

/// Mean next-latent NLL per macro-step transition.
pub fn imagery_nll(mind: &Mind, seqs: &[MacroSequence]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for s in seqs {
        let mut st = ImageryState::zeros(mind.imagery_hidden());
        for (i, &a) in s.actions.iter().enumerate() {
            let (mix, next) =
                mind.imagery
                    .imagery_step(&mind.imagery_params, &s.latents[i], &st, a)?;
            let target: Vec<f64> = s.latents[i + 1].iter().map(|&v| v as f64).collect();
            total += mdn_nll(&mix, &target);
            n += 1;
            st = next;
        }
    }
    if n == 0 {
        return Err(TrainError::Data("no transitions".into()));
    }
    Ok(total / n as f64)
}

/// NLL on `eval` of a `k`-component diagonal mixture fitted to the targets
/// of `train`, ignoring state and action.
pub fn marginal_nll(
    train: &[MacroSequence],
    eval: &[MacroSequence],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let targets = |s: &[MacroSequence]| -> Vec<Vec<f64>> {
        s.iter()
            .flat_map(|q| {
                q.latents[1..]
                    .iter()
                    .map(|l| l.iter().map(|&v| v as f64).collect())
            })
            .collect()
    };
    let tr = targets(train);
    let ev = targets(eval);
    if tr.is_empty() || ev.is_empty() {
        return Err(TrainError::Data("no transitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = fit_marginal_mixture(&tr, k, 50, &mut rng);
    Ok(ev.iter().map(|x| mdn_nll(&mix, x)).sum::<f64>() / ev.len() as f64)
}

fn train_imagery(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &ImageryTrainConfig,
    render_cfg: &RenderConfig,
    seed: u64,
    io: &StageIo,
) -> Result<Vec<MetricsRecord>> {
    if cfg.batch == 0 {
        return Err(TrainError::Config("imagery batch must be positive".into()));
    }
    let mut cache = FeatureCache::new(*render_cfg);
    let seqs = macro_sequences(&models.mind, &mut cache, corpus, &corpus.train)?;
    let val = macro_sequences(&models.mind, &mut cache, corpus, &corpus.val)?;
    if seqs.is_empty() {
        return Err(TrainError::Data("no training demonstrations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = models.mind.imagery.clone();
    let mut adam = AdamState::new(&models.mind.imagery_params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs {
        let backup = models.mind.imagery_params.clone();
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0f64, 0usize);
        let r: Result<()> = (|| {
            for chunk in order.chunks(cfg.batch) {
                let mut t = Tape::new(&models.mind.imagery_params);
                let mut terms = Vec::new();
                for &i in chunk {
                    let s = &seqs[i];
                    let mut st = model.zero_state_t(&mut t)?;
                    for (j, &a) in s.actions.iter().enumerate() {
                        let m = t.input_vec(&s.latents[j])?;
                        let (mix, next) = model.step_t(&mut t, m, a, st)?;
                        terms.push(mdn_nll_t(
                            &mut t,
                            mix.log_pi,
                            mix.mu,
                            mix.sigma,
                            &s.latents[j + 1],
                        )?);
                        st = next;
                    }
                }
                let c = t.concat(&terms)?;
                let loss = t.mean(c)?;
                sum += t.scalar(loss) as f64 * terms.len() as f64;
                count += terms.len();
                let g = t.backward(loss)?.into_params();
                apply(&mut adam, &mut models.mind.imagery_params, g, 1, cfg.clip)?;
            }
            Ok(())
        })();
        if let Err(e) = guard(Stage::Imagery, epoch, r) {
            models.mind.imagery_params = backup;
            return Err(e);
        }
        let mut rec = MetricsRecord::new(Stage::Imagery, epoch, sum / count.max(1) as f64);
        if !val.is_empty() {
            rec = rec.with(
                "val_nll",
                guard(Stage::Imagery, epoch, imagery_nll(&models.mind, &val))?,
            );
        }
        finish_epoch(models, Stage::Imagery, &rec, io)?;
        out.push(rec);
    }
    Ok(out)
}

fn demo_buffer(
    mind: &Mind,
    cache: &mut FeatureCache,
    corpus: &Corpus,
    e: &Episode,
) -> Result<FrameBuffer> {
    let h = corpus.house(e.house_id)?;
    let mut buf = FrameBuffer::new();
    for p in e.expert_poses(h) {
        buf.push(cache.feature(mind, h, p)?);
    }
    Ok(buf)
}

/// Answerer accuracy given the last five frames of each demonstration.
pub fn qa_accuracy(
    agent: &Agent,
    mind: &Mind,
    cache: &mut FeatureCache,
    corpus: &Corpus,
    episodes: &[Episode],
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(TrainError::Data("no episodes".into()));
    }
    let mut hits = 0;
    for e in episodes {
        let buf = demo_buffer(mind, cache, corpus, e)?;
        let p = agent
            .qa
            .answer(&agent.qa_params, &e.tokens, &buf.slots()?)?;
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        hits += usize::from(best == e.answer);
    }
    Ok(hits as f64 / episodes.len() as f64)
}

fn train_qa(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &BcConfig,
    cache: &mut FeatureCache,
    rng: &mut ChaCha8Rng,
    io: &StageIo,
) -> Result<(Vec<MetricsRecord>, Option<f64>)> {
    let bufs = corpus
        .train
        .iter()
        .map(|e| demo_buffer(&models.mind, cache, corpus, e))
        .collect::<Result<Vec<_>>>()?;
    let qa = models.agent.qa.clone();
    let mut adam = AdamState::new(&models.agent.qa_params, AdamConfig::with_lr(cfg.qa_lr));
    let mut order: Vec<usize> = (0..bufs.len()).collect();
    let mut out = Vec::new();
    let mut last_val = None;
    for epoch in 0..cfg.qa_epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let r: Result<()> = (|| {
            for chunk in order.chunks(cfg.batch) {
                let mut t = Tape::new(&models.agent.qa_params);
                let mut terms = Vec::new();
                for &i in chunk {
                    let e = &corpus.train[i];
                    let o = qa.forward_t(&mut t, &e.tokens, &bufs[i].slots()?)?;
                    terms.push(t.pick(o.log_probs, e.answer)?);
                }
                let c = t.concat(&terms)?;
                let m = t.mean(c)?;
                let loss = t.neg(m)?;
                sum += t.scalar(loss) as f64 * chunk.len() as f64;
                let g = t.backward(loss)?.into_params();
                apply(&mut adam, &mut models.agent.qa_params, g, 1, cfg.clip)?;
            }
            Ok(())
        })();
        guard(Stage::Bc, epoch, r)?;
        let train_acc = qa_accuracy(&models.agent, &models.mind, cache, corpus, &corpus.train)?;
        let mut rec = MetricsRecord::new(Stage::Bc, epoch, sum / bufs.len().max(1) as f64)
            .with("qa_pretrain", 1.0)
            .with("qa_train_accuracy", train_acc);
        rec.qa_accuracy = Some(train_acc);
        if !corpus.val.is_empty() {
            let v = qa_accuracy(&models.agent, &models.mind, cache, corpus, &corpus.val)?;
            rec.qa_accuracy = Some(v);
            last_val = Some(v);
        }
        if !rec.loss.is_finite() {
            return Err(TrainError::NonFinite {
                stage: Stage::Bc,
                epoch,
            });
        }
        io.log(&rec)?;
        out.push(rec);
    }
    Ok((out, last_val))
}

/// Start pose and remaining demonstration `offset` primitive actions before
/// the end of `e`'s expert path.
pub(crate) fn backtracked(
    corpus: &Corpus,
    e: &Episode,
    offset: usize,
) -> Result<(crate::gridhouse::AgentPose, Vec<ActionType>)> {
    let h = corpus.house(e.house_id)?;
    let poses = e.expert_poses(h);
    let len = poses.len() - 1;
    let off = offset.min(len);
    Ok((poses[len - off], e.actions[len - off..].to_vec()))
}

fn argmax32(v: &[f32]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[allow(clippy::too_many_arguments)]
fn train_bc(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &BcConfig,
    render_cfg: &RenderConfig,
    rewards: &RewardConfig,
    seed: u64,
    io: &StageIo,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::Data("no training episodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = FeatureCache::new(*render_cfg);
    let (mut out, qa_val) = train_qa(models, corpus, cfg, &mut cache, &mut rng, io)?;
    let qa_train = qa_accuracy(
        &models.agent,
        &models.mind,
        &mut cache,
        corpus,
        &corpus.train,
    )?;

    let demo_len = |e: &Episode| e.actions.len() - 1;
    let longest = corpus.train.iter().map(demo_len).max().unwrap_or(0);
    let opts = RolloutOptions {
        rewards: *rewards,
        planned_reward: false,
    };
    let mut adam = AdamState::new(&models.agent.nav_params, AdamConfig::with_lr(cfg.lr));
    let mut phase = 0usize;
    let mut window: VecDeque<bool> = VecDeque::new();
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        if over_budget(start, cfg.max_seconds) {
            break;
        }
        let backup = models.agent.nav_params.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut succ, mut right, mut decisions) = (0.0, 0usize, 0usize, 0usize);
        let r: Result<()> = (|| {
            for chunk in order.chunks(cfg.batch) {
                let mut acc = GradSet::zeros_like(&models.agent.nav_params);
                for &i in chunk {
                    let e = &corpus.train[i];
                    let off =
                        curriculum_spawn(phase, demo_len(e), cfg.backtrack, cfg.initial_offset);
                    let (pose, acts) = backtracked(corpus, e, off)?;
                    let env = corpus.env(e, pose)?;
                    let mut t = Tape::new(&models.agent.nav_params);
                    let (_, vars) = rollout_t(
                        &mut t,
                        &models.agent,
                        &models.mind,
                        &mut cache,
                        env,
                        &Mode::DemoForced(acts),
                        &opts,
                        &mut rng,
                    )?;
                    let mut ok = true;
                    for s in &vars {
                        let hit = argmax32(t.value(s.log_probs).data()) == s.action.index();
                        ok &= hit;
                        right += usize::from(hit);
                        decisions += 1;
                        for &(lc, d) in &s.controller {
                            let hit = argmax32(t.value(lc).data()) == d as usize;
                            ok &= hit;
                            right += usize::from(hit);
                            decisions += 1;
                        }
                    }
                    let loss = bc_loss_from_steps(&mut t, &vars)?;
                    loss_sum += t.scalar(loss) as f64;
                    acc.accumulate(t.backward(loss)?.params())?;
                    succ += usize::from(ok);
                    window.push_back(ok);
                    if window.len() > cfg.window {
                        window.pop_front();
                    }
                }
                apply(
                    &mut adam,
                    &mut models.agent.nav_params,
                    acc,
                    chunk.len(),
                    cfg.clip,
                )?;
                let need = cfg.window.min(corpus.train.len());
                let rate =
                    window.iter().filter(|&&w| w).count() as f64 / window.len().max(1) as f64;
                if window.len() >= need
                    && rate >= cfg.advance_threshold
                    && cfg.initial_offset + cfg.backtrack * phase < longest
                {
                    phase += 1;
                    window.clear();
                }
            }
            Ok(())
        })();
        if let Err(e) = guard(Stage::Bc, epoch, r) {
            models.agent.nav_params = backup;
            return Err(e);
        }
        let mut dd = 0.0;
        for e in &corpus.train {
            let off = curriculum_spawn(phase, demo_len(e), cfg.backtrack, cfg.initial_offset);
            let (pose, _) = backtracked(corpus, e, off)?;
            let tr = run_episode(
                &models.agent,
                &models.mind,
                &mut cache,
                corpus.env(e, pose)?,
                &Mode::Greedy,
                &opts,
                &mut rng,
            )?;
            dd += tr.d_delta() as f64;
        }
        let n = corpus.train.len() as f64;
        let mut rec = MetricsRecord::new(Stage::Bc, epoch, loss_sum / n)
            .with("phase", phase as f64)
            .with(
                "offset",
                curriculum_spawn(phase, longest, cfg.backtrack, cfg.initial_offset) as f64,
            )
            .with("action_accuracy", right as f64 / decisions.max(1) as f64)
            .with("qa_train_accuracy", qa_train);
        rec.success_rate = Some(succ as f64 / n);
        rec.mean_d_delta = Some(dd / n);
        rec.qa_accuracy = qa_val.or(Some(qa_train));
        finish_epoch(models, Stage::Bc, &rec, io)?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct RlJob {
    episode: usize,
    spawn_seed: u64,
    rng_seed: u64,
}

struct RlResult {
    grads: GradSet<f32>,
    traj: TrajectoryRecord,
    loss: f64,
    ret: f64,
}

#[allow(clippy::too_many_arguments)]
fn rl_job(
    agent: &Agent,
    nav_params: &ParamStore<f32>,
    mind: &Mind,
    cache: &mut FeatureCache,
    corpus: &Corpus,
    job: RlJob,
    opts: &RolloutOptions,
    cfg: &RlConfig,
) -> Result<RlResult> {
    let e = &corpus.train[job.episode];
    let h = corpus.house(e.house_id)?;
    let spawn = spawn_at_distance(h, e.target, cfg.spawn_k, job.spawn_seed)?;
    let env = corpus.env(e, spawn.pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(job.rng_seed);
    let mut t = Tape::new(nav_params);
    let (traj, vars) = rollout_t(
        &mut t,
        agent,
        mind,
        cache,
        env,
        &Mode::Sample,
        opts,
        &mut rng,
    )?;
    let rewards: Vec<f64> = traj.steps.iter().map(|s| s.total_reward()).collect();
    let values: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
    let ret = rewards.iter().sum();
    let mut ep = RolloutEpisode::new(vars, rewards, values)?;
    ep.prepare(cfg)?;
    let l = actor_critic_losses_t(&mut t, &[ep], cfg)?;
    let loss = t.scalar(l.total) as f64;
    let grads = t.backward(l.total)?.into_params();
    Ok(RlResult {
        grads,
        traj,
        loss,
        ret,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_rl(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &RlConfig,
    render_cfg: &RenderConfig,
    rewards: &RewardConfig,
    seed: u64,
    io: &StageIo,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::Data("no training episodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = RolloutOptions {
        rewards: *rewards,
        planned_reward: cfg.planned_reward,
    };
    let mut caches: Vec<FeatureCache> = (0..cfg.workers)
        .map(|_| FeatureCache::new(*render_cfg))
        .collect();
    let mut adam = AdamState::new(&models.agent.nav_params, AdamConfig::with_lr(cfg.lr));
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs {
        let jobs: Vec<RlJob> = (0..cfg.episodes_per_epoch)
            .map(|_| RlJob {
                episode: rng.gen_range(0..corpus.train.len()),
                spawn_seed: rng.gen(),
                rng_seed: rng.gen(),
            })
            .collect();
        let backup = models.agent.nav_params.clone();
        let r = match cfg.sync_mode {
            SyncMode::Synchronous => {
                rl_epoch_sync(models, corpus, cfg, &opts, &jobs, &mut caches, &mut adam)
            }
            SyncMode::Asynchronous => {
                rl_epoch_async(models, corpus, cfg, &opts, &jobs, &mut caches, &mut adam)
            }
        };
        let (results, dropped) = match guard(Stage::Rl, epoch, r) {
            Ok(v) => v,
            Err(e) => {
                models.agent.nav_params = backup;
                return Err(e);
            }
        };
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&(f64, f64, TrajectoryRecord)) -> f64| {
            results.iter().map(f).sum::<f64>() / n
        };
        let r_m: f64 = results
            .iter()
            .flat_map(|r| r.2.steps.iter().filter_map(|s| s.r_m))
            .sum::<f64>()
            / n;
        let mut rec = MetricsRecord::new(Stage::Rl, epoch, mean(&|r| r.0))
            .with("mean_return", mean(&|r| r.1))
            .with("mean_r_m", r_m)
            .with("mean_actions", mean(&|r| r.2.n_actions as f64))
            .with("dropped", dropped as f64);
        rec.success_rate = Some(mean(&|r| f64::from(u8::from(r.2.d_t == 0))));
        rec.mean_d_delta = Some(mean(&|r| r.2.d_delta() as f64));
        rec.qa_accuracy = Some(mean(&|r| f64::from(u8::from(r.2.correct))));
        finish_epoch(models, Stage::Rl, &rec, io)?;
        out.push(rec);
    }
    Ok(out)
}

type EpochOut = (Vec<(f64, f64, TrajectoryRecord)>, usize);

fn rl_epoch_sync(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &RlConfig,
    opts: &RolloutOptions,
    jobs: &[RlJob],
    caches: &mut [FeatureCache],
    adam: &mut AdamState<f32>,
) -> Result<EpochOut> {
    let mut out = Vec::with_capacity(jobs.len());
    for round in jobs.chunks(cfg.workers) {
        let results: Vec<Result<RlResult>> = if round.len() == 1 {
            vec![rl_job(
                &models.agent,
                &models.agent.nav_params,
                &models.mind,
                &mut caches[0],
                corpus,
                round[0],
                opts,
                cfg,
            )]
        } else {
            let (agent, mind) = (&models.agent, &models.mind);
            std::thread::scope(|s| {
                let handles: Vec<_> = round
                    .iter()
                    .zip(caches.iter_mut())
                    .map(|(&job, cache)| {
                        s.spawn(move || {
                            rl_job(
                                agent,
                                &agent.nav_params,
                                mind,
                                cache,
                                corpus,
                                job,
                                opts,
                                cfg,
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        };
        let mut acc = GradSet::zeros_like(&models.agent.nav_params);
        let n = results.len();
        for r in results {
            let r = r?;
            acc.accumulate(&r.grads)?;
            out.push((r.loss, r.ret, r.traj));
        }
        apply(adam, &mut models.agent.nav_params, acc, n, cfg.clip)?;
    }
    Ok((out, 0))
}

/// Workers roll out against the latest published parameters and send
/// gradients to this thread, which applies each one unless it is more than
/// `cfg.staleness` updates old.
fn rl_epoch_async(
    models: &mut Models,
    corpus: &Corpus,
    cfg: &RlConfig,
    opts: &RolloutOptions,
    jobs: &[RlJob],
    caches: &mut [FeatureCache],
    adam: &mut AdamState<f32>,
) -> Result<EpochOut> {
    let shared = RwLock::new((0usize, models.agent.nav_params.clone()));
    let (tx, rx) = mpsc::channel::<(usize, Result<RlResult>)>();
    let (agent, mind) = (&models.agent, &models.mind);
    let mut out = Vec::with_capacity(jobs.len());
    let mut dropped = 0;
    let mut first_err = None;
    let mut store = models.agent.nav_params.clone();
    std::thread::scope(|s| {
        for (w, cache) in caches.iter_mut().enumerate() {
            let tx = tx.clone();
            let shared = &shared;
            let mine: Vec<RlJob> = jobs.iter().skip(w).step_by(cfg.workers).copied().collect();
            s.spawn(move || {
                for job in mine {
                    let (version, snap) = {
                        let g = shared.read().expect("parameter lock");
                        (g.0, g.1.clone())
                    };
                    let r = rl_job(agent, &snap, mind, cache, corpus, job, opts, cfg);
                    if tx.send((version, r)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        let mut version = 0usize;
        for (v, r) in rx {
            match r {
                Ok(r) => {
                    out.push((r.loss, r.ret, r.traj));
                    if version - v > cfg.staleness {
                        dropped += 1;
                        continue;
                    }
                    if let Err(e) = apply(adam, &mut store, r.grads, 1, cfg.clip) {
                        first_err.get_or_insert(e);
                        continue;
                    }
                    version += 1;
                    let mut g = shared.write().expect("parameter lock");
                    *g = (version, store.clone());
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    models.agent.nav_params = store;
    Ok((out, dropped))
}
