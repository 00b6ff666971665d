//! Mental imagery: a β-VAE that maps frames to latents and back, and an
//! LSTM with a mixture-density head that predicts the next latent.

mod imagery;
mod mixture;
mod vae;

use thiserror::Error;

pub use imagery::{ImageryConfig, ImageryModel, ImageryState, MixtureVars};
pub use mixture::{
    fit_marginal_mixture, mdn_nll, mdn_nll_t, sample_imagery, MixtureParams, HALF_LN_2PI,
};
pub use vae::{
    bernoulli_entropy, kl_divergence, kl_t, sample_latent, MentalAutoencoder, MentalRep, VaeConfig,
    VaeLossValue, VaeLossVars,
};

use crate::gridhouse::ActionType;

#[derive(Debug, Error)]
pub enum MindError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nd(#[from] ndnet::NdError),
}

pub type Result<T, E = MindError> = std::result::Result<T, E>;

/// Longest run the controller can execute for one planner decision.
pub const MAX_REPEAT: usize = 5;

/// One planner decision in a demonstration: `action` repeated `len` times
/// starting at primitive index `start`. `Stop` is its own length-1 step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MacroStep {
    pub start: usize,
    pub action: ActionType,
    pub len: usize,
}

/// Splits an action sequence into maximal runs of one action, each capped
/// at [`MAX_REPEAT`].
pub fn macro_steps(actions: &[ActionType]) -> Vec<MacroStep> {
    let mut out: Vec<MacroStep> = Vec::new();
    for (i, &a) in actions.iter().enumerate() {
        match out.last_mut() {
            Some(m) if m.action == a && a != ActionType::Stop && m.len < MAX_REPEAT => m.len += 1,
            _ => out.push(MacroStep {
                start: i,
                action: a,
                len: 1,
            }),
        }
    }
    out
}

/// Trained perception stack: frames to latents and latent dynamics.
#[derive(Clone, Debug)]
pub struct Mind {
    pub vae: MentalAutoencoder,
    pub vae_params: ndnet::ParamStore<f32>,
    pub imagery: ImageryModel,
    pub imagery_params: ndnet::ParamStore<f32>,
}

impl Mind {
    pub fn new<R: rand::Rng + ?Sized>(
        vae_cfg: VaeConfig,
        imagery_cfg: ImageryConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if vae_cfg.latent_dim != imagery_cfg.latent_dim {
            return Err(MindError::Config(format!(
                "vae latent {} differs from imagery latent {}",
                vae_cfg.latent_dim, imagery_cfg.latent_dim
            )));
        }
        let mut vae_params = ndnet::ParamStore::new();
        let vae = MentalAutoencoder::new(vae_cfg, &mut vae_params, rng)?;
        let mut imagery_params = ndnet::ParamStore::new();
        let imagery = ImageryModel::new(imagery_cfg, &mut imagery_params, rng)?;
        Ok(Self {
            vae,
            vae_params,
            imagery,
            imagery_params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    pub fn imagery_hidden(&self) -> usize {
        self.imagery.cfg.hidden
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionType::*;

    #[test]
    fn runs_split_at_cap() {
        let acts = [Forward; 7]
            .into_iter()
            .chain([TurnLeft, TurnLeft, Forward, Stop])
            .collect::<Vec<_>>();
        let m = macro_steps(&acts);
        let lens: Vec<(ActionType, usize)> = m.iter().map(|s| (s.action, s.len)).collect();
        assert_eq!(
            lens,
            vec![
                (Forward, 5),
                (Forward, 2),
                (TurnLeft, 2),
                (Forward, 1),
                (Stop, 1)
            ]
        );
        assert_eq!(m[1].start, 5);
    }
}
