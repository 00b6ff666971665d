use ndnet::{Linear, LstmCell, LstmState, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridhouse::ActionType;

use super::mixture::{sample_imagery, MixtureParams};
use super::{MindError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageryConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub mixtures: usize,
    pub temperature: f64,
}

impl Default for ImageryConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: 128,
            mixtures: 5,
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageryState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl ImageryState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MixtureVars {
    pub log_pi: Var,
    pub mu: Var,
    pub sigma: Var,
}

/// LSTM over `[m ⊕ one-hot(a)]` with a mixture-density head.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageryModel {
    pub cfg: ImageryConfig,
    lstm: LstmCell,
    head: Linear,
}

impl ImageryModel {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: ImageryConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.mixtures == 0 || cfg.latent_dim == 0 || cfg.hidden == 0 {
            return Err(MindError::Config(
                "imagery dimensions must be positive".into(),
            ));
        }
        let lstm = LstmCell::new(
            store,
            "imagery.lstm",
            cfg.latent_dim + ActionType::COUNT,
            cfg.hidden,
            rng,
        )?;
        let out = cfg.mixtures * (1 + 2 * cfg.latent_dim);
        let head = Linear::new(store, "imagery.mdn", cfg.hidden, out, rng)?;
        Ok(Self { cfg, lstm, head })
    }

    pub fn zero_state_t<T: Real>(&self, t: &mut Tape<'_, T>) -> Result<LstmState> {
        Ok(self.lstm.zero_state(t)?)
    }

    pub fn state_t<T: Real>(&self, t: &mut Tape<'_, T>, s: &ImageryState) -> Result<LstmState> {
        let h = t.input(Tensor::from_vec(
            s.h.iter().map(|&v| T::lit(v as f64)).collect(),
        ))?;
        let c = t.input(Tensor::from_vec(
            s.c.iter().map(|&v| T::lit(v as f64)).collect(),
        ))?;
        Ok(LstmState { h, c })
    }

    /// One LSTM step then the head: softmax weights (as log-probabilities)
    /// and `elu1p` scales.
    pub fn step_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        m: Var,
        action: ActionType,
        state: LstmState,
    ) -> Result<(MixtureVars, LstmState)> {
        let a = t.input_vec(&action.one_hot().map(|v| T::lit(v as f64)))?;
        let x = t.concat(&[m, a])?;
        let next = self.lstm.step(t, x, state)?;
        let out = self.head.forward(t, next.h)?;
        let (k, d) = (self.cfg.mixtures, self.cfg.latent_dim);
        let logits = t.slice(out, 0, k)?;
        let log_pi = t.log_softmax(logits)?;
        let mu = t.slice(out, k, k * d)?;
        let raw = t.slice(out, k + k * d, k * d)?;
        let sigma = t.elu1p(raw)?;
        Ok((MixtureVars { log_pi, mu, sigma }, next))
    }

    pub fn mixture_value<T: Real>(&self, t: &Tape<'_, T>, v: &MixtureVars) -> MixtureParams {
        let f = |x: Var| {
            t.value(x)
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect::<Vec<f64>>()
        };
        MixtureParams {
            weights: f(v.log_pi).into_iter().map(f64::exp).collect(),
            means: f(v.mu),
            scales: f(v.sigma),
            dim: self.cfg.latent_dim,
        }
    }

    pub fn imagery_step(
        &self,
        store: &ParamStore<f32>,
        m: &[f32],
        state: &ImageryState,
        action: ActionType,
    ) -> Result<(MixtureParams, ImageryState)> {
        if m.len() != self.cfg.latent_dim {
            return Err(MindError::Shape(format!(
                "latent has {} dims, expected {}",
                m.len(),
                self.cfg.latent_dim
            )));
        }
        let mut t = Tape::new(store);
        let s = self.state_t(&mut t, state)?;
        let mv = t.input_vec(m)?;
        let (mix, next) = self.step_t(&mut t, mv, action, s)?;
        let params = self.mixture_value(&t, &mix);
        let state = ImageryState {
            h: t.value(next.h).data().to_vec(),
            c: t.value(next.c).data().to_vec(),
        };
        Ok((params, state))
    }

    /// Feeds each sampled latent back in as the next input.
    pub fn imagine_rollout<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<f32>,
        m: &[f32],
        state: &ImageryState,
        actions: &[ActionType],
        rng: &mut R,
    ) -> Result<Vec<(MixtureParams, Vec<f32>)>> {
        if actions.is_empty() {
            return Err(MindError::Shape("rollout needs at least one action".into()));
        }
        let mut out = Vec::with_capacity(actions.len());
        let mut cur = m.to_vec();
        let mut st = state.clone();
        for &a in actions {
            let (mix, next) = self.imagery_step(store, &cur, &st, a)?;
            let sample = sample_imagery(&mix, self.cfg.temperature, rng);
            cur = sample.clone();
            st = next;
            out.push((mix, sample));
        }
        Ok(out)
    }
}
