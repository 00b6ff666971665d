use ndnet::{check_param_grads, ParamStore, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Navigator, StepVars};
use crate::gridhouse::ActionType;
use crate::mind::{mdn_nll_t, ImageryConfig, ImageryModel, MentalAutoencoder, VaeConfig};
use crate::trainer::{actor_critic_losses_t, bc_loss_from_steps, RlConfig, RolloutEpisode};

use super::Result;

pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
    pub passed: bool,
}

fn entry(name: &str, r: ndnet::GradCheckReport) -> GradCheckEntry {
    GradCheckEntry {
        name: name.into(),
        max_rel_error: r.max_rel_error,
        coords: r.coords_checked,
        passed: r.passes(GRAD_TOLERANCE),
    }
}

fn nd<E: std::fmt::Display>(e: E) -> ndnet::NdError {
    ndnet::NdError::Invalid(e.to_string())
}

fn gauss<R: Rng>(rng: &mut R, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

fn small_agent() -> AgentConfig {
    AgentConfig {
        embed_dim: 4,
        question_dim: 5,
        planner_hidden: 6,
        controller_hidden: 5,
        qa_dim: 4,
        use_imagery: true,
        n_max: 80,
    }
}

/// A fixed three-decision episode (Forward twice, TurnLeft once, Stop)
/// built on `t`.
fn synthetic_steps(
    t: &mut Tape<'_, f64>,
    nav: &Navigator,
    feats: &[Vec<f32>],
    img: &[f32],
) -> Result<Vec<StepVars>> {
    let q = nav.question_t(t, &[0, 3, 1])?;
    let mut st = nav.planner_zero_t(t)?;
    let mut prev = ActionType::Stop;
    let plan = [
        (ActionType::Forward, vec![1u8, 0]),
        (ActionType::TurnLeft, vec![0]),
        (ActionType::Stop, vec![]),
    ];
    let mut out = Vec::new();
    for (i, (a, ctrl)) in plan.iter().enumerate() {
        let o = nav.planner_step_t(t, st, &feats[i], q, prev, img)?;
        let mut controller = Vec::new();
        for (c, &d) in ctrl.iter().enumerate() {
            let lc = nav.controller_t(t, o.state.h, &feats[i], q, *a, c + 1)?;
            controller.push((lc, d));
        }
        out.push(StepVars {
            log_probs: o.log_probs,
            value: o.value,
            action: *a,
            forced: false,
            controller,
        });
        st = o.state;
        prev = *a;
    }
    Ok(out)
}

/// Finite-difference checks, in f64, of every trained loss on small
/// networks. Large parameter sets are probed on a random subset.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let vcfg = VaeConfig {
        frame_h: 8,
        frame_w: 8,
        latent_dim: 4,
        channels: vec![4, 8],
        beta: 4.0,
    };
    let mut store = ParamStore::<f64>::new();
    let vae = MentalAutoencoder::new(vcfg, &mut store, &mut rng)?;
    let frame: Vec<f64> = (0..vae.frame_len())
        .map(|_| rng.gen_range(0.05..0.95))
        .collect();
    let eps = gauss(&mut rng, 4, 1.0);
    let r = check_param_grads(&store, EPS, Some(300), &mut rng, |t| {
        Ok(vae
            .vae_loss_t(t, &frame, Some(&eps), 4.0)
            .map_err(nd)?
            .total)
    })?;
    out.push(entry("vae_loss", r));

    let icfg = ImageryConfig {
        latent_dim: 3,
        hidden: 6,
        mixtures: 3,
        temperature: 1.0,
    };
    let mut store = ParamStore::<f64>::new();
    let img = ImageryModel::new(icfg, &mut store, &mut rng)?;
    let seq: Vec<Vec<f64>> = (0..4).map(|_| gauss(&mut rng, 3, 1.0)).collect();
    let acts = [ActionType::Forward, ActionType::TurnRight, ActionType::Stop];
    let r = check_param_grads(&store, EPS, None, &mut rng, |t| {
        let mut st = img.zero_state_t(t).map_err(nd)?;
        let mut terms: Vec<Var> = Vec::new();
        for (i, &a) in acts.iter().enumerate() {
            let m = t.input_vec(&seq[i])?;
            let (mix, next) = img.step_t(t, m, a, st).map_err(nd)?;
            terms.push(mdn_nll_t(t, mix.log_pi, mix.mu, mix.sigma, &seq[i + 1]).map_err(nd)?);
            st = next;
        }
        let c = t.concat(&terms)?;
        t.mean(c)
    })?;
    out.push(entry("mdn_nll", r));

    let mut store = ParamStore::<f64>::new();
    let nav = Navigator::new(small_agent(), 6, 3, 2, &mut store, &mut rng)?;
    let feats: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let imgh = [0.3f32, -0.2];
    let r = check_param_grads(&store, EPS, Some(300), &mut rng, |t| {
        let steps = synthetic_steps(t, &nav, &feats, &imgh).map_err(nd)?;
        bc_loss_from_steps(t, &steps).map_err(nd)
    })?;
    out.push(entry("bc_loss", r));

    let cfg = RlConfig {
        gamma: 0.9,
        gae_lambda: 0.8,
        entropy_weight: 0.05,
        ..RlConfig::default()
    };
    let rewards = gauss(&mut rng, 3, 1.0);
    let values = {
        let mut t = Tape::new(&store);
        let steps = synthetic_steps(&mut t, &nav, &feats, &imgh)?;
        steps
            .iter()
            .map(|s| t.scalar(s.value))
            .collect::<Vec<f64>>()
    };
    let r = check_param_grads(&store, EPS, Some(300), &mut rng, |t| {
        let steps = synthetic_steps(t, &nav, &feats, &imgh).map_err(nd)?;
        let mut ep = RolloutEpisode::new(steps, rewards.clone(), values.clone()).map_err(nd)?;
        ep.prepare(&cfg).map_err(nd)?;
        Ok(actor_critic_losses_t(t, &[ep], &cfg).map_err(nd)?.total)
    })?;
    out.push(entry("actor_critic", r));
    Ok(out)
}
