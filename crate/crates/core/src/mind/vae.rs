use ndnet::{Conv2d, ConvTranspose2d, Linear, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gridhouse::Frame;

use super::{MindError, Result};

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub latent_dim: usize,
    /// Encoder channel widths, one conv per entry; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub beta: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            frame_h: 32,
            frame_w: 32,
            latent_dim: 32,
            channels: vec![16, 32, 64, 128],
            beta: 4.0,
        }
    }
}

/// Posterior parameters and a draw from them.
#[derive(Clone, Debug, PartialEq)]
pub struct MentalRep {
    pub m: Vec<f32>,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

/// Scalar pieces of the loss, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct VaeLossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLossValue {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Convolutional β-VAE over `[3, H, W]` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MentalAutoencoder {
    pub cfg: VaeConfig,
    convs: Vec<Conv2d>,
    mu: Linear,
    log_sigma: Linear,
    dec_in: Linear,
    deconvs: Vec<ConvTranspose2d>,
    /// Spatial size after each encoder conv; `sizes[0]` is the input.
    sizes: Vec<(usize, usize)>,
}

impl MentalAutoencoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: VaeConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.latent_dim == 0 {
            return Err(MindError::Config(
                "vae needs at least one conv and a latent".into(),
            ));
        }
        let mut sizes = vec![(cfg.frame_h, cfg.frame_w)];
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in cfg.channels.iter().enumerate() {
            let (h, w) = *sizes.last().unwrap();
            let next = |n: usize| (n + 2 * PAD - KERNEL) / STRIDE + 1;
            sizes.push((next(h), next(w)));
            convs.push(Conv2d::new(
                store,
                &format!("vae.enc{i}"),
                c_in,
                c,
                KERNEL,
                STRIDE,
                PAD,
                rng,
            )?);
            c_in = c;
        }
        let (h, w) = *sizes.last().unwrap();
        let flat = c_in * h * w;
        let mu = Linear::new(store, "vae.mu", flat, cfg.latent_dim, rng)?;
        let log_sigma = Linear::new(store, "vae.log_sigma", flat, cfg.latent_dim, rng)?;
        let dec_in = Linear::new(store, "vae.dec_in", cfg.latent_dim, flat, rng)?;
        let mut deconvs = Vec::new();
        let n = cfg.channels.len();
        for i in 0..n {
            let from = cfg.channels[n - 1 - i];
            let to = if i + 1 == n {
                3
            } else {
                cfg.channels[n - 2 - i]
            };
            deconvs.push(ConvTranspose2d::new(
                store,
                &format!("vae.dec{i}"),
                from,
                to,
                KERNEL,
                STRIDE,
                PAD,
                rng,
            )?);
        }
        Ok(Self {
            cfg,
            convs,
            mu,
            log_sigma,
            dec_in,
            deconvs,
            sizes,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn frame_len(&self) -> usize {
        3 * self.cfg.frame_h * self.cfg.frame_w
    }

    /// `(mu, log_sigma)` for a `[3, H, W]` input.
    pub fn encode_t<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(t, h)?;
            h = t.relu(h)?;
        }
        let n = t.value(h).numel();
        let flat = t.reshape(h, &[n])?;
        let mu = self.mu.forward(t, flat)?;
        let ls = self.log_sigma.forward(t, flat)?;
        Ok((mu, ls))
    }

    /// Pre-sigmoid decoder output, `[3, H, W]`.
    pub fn decode_logits_t<T: Real>(&self, t: &mut Tape<'_, T>, m: Var) -> Result<Var> {
        let c = *self.cfg.channels.last().unwrap();
        let (h, w) = *self.sizes.last().unwrap();
        let z = self.dec_in.forward(t, m)?;
        let mut y = t.reshape(z, &[c, h, w])?;
        let n = self.deconvs.len();
        for (i, d) in self.deconvs.iter().enumerate() {
            y = t.relu(y)?;
            y = d.forward(t, y, self.sizes[n - 1 - i])?;
        }
        Ok(y)
    }

    /// `m = mu + exp(log_sigma) ⊙ eps` with `eps` held fixed.
    pub fn reparameterize_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        mu: Var,
        log_sigma: Var,
        eps: &[T],
    ) -> Result<Var> {
        let sigma = t.exp(log_sigma)?;
        let e = t.input_vec(eps)?;
        let noise = t.mul(sigma, e)?;
        Ok(t.add(mu, noise)?)
    }

    /// Bernoulli reconstruction term measured from its floor (so it is zero
    /// at a perfect reconstruction) plus `beta` times the closed-form KL to
    /// the unit Gaussian. `eps = None` decodes the posterior mean.
    pub fn vae_loss_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        frame_chw: &[T],
        eps: Option<&[T]>,
        beta: f64,
    ) -> Result<VaeLossVars> {
        if frame_chw.len() != self.frame_len() {
            return Err(MindError::Shape(format!(
                "frame has {} values, expected {}",
                frame_chw.len(),
                self.frame_len()
            )));
        }
        let x = t.input(Tensor::new(
            vec![3, self.cfg.frame_h, self.cfg.frame_w],
            frame_chw.to_vec(),
        )?)?;
        let (mu, ls) = self.encode_t(t, x)?;
        let m = match eps {
            Some(e) => self.reparameterize_t(t, mu, ls, e)?,
            None => mu,
        };
        let logits = self.decode_logits_t(t, m)?;
        let bce = t.bce_logits(logits, x)?;
        let recon = t.add_scalar(bce, -bernoulli_entropy(frame_chw))?;
        let kl = kl_t(t, mu, ls)?;
        let weighted = t.scale(kl, beta)?;
        let total = t.add(recon, weighted)?;
        Ok(VaeLossVars { total, recon, kl })
    }

    pub fn encode(&self, store: &ParamStore<f32>, frame: &Frame) -> Result<(Vec<f32>, Vec<f32>)> {
        self.encode_chw(store, &frame.to_chw())
    }

    pub fn encode_chw(&self, store: &ParamStore<f32>, chw: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        if chw.len() != self.frame_len() {
            return Err(MindError::Shape(format!(
                "frame has {} values, expected {}",
                chw.len(),
                self.frame_len()
            )));
        }
        let mut t = Tape::new(store);
        let x = t.input(Tensor::new(
            vec![3, self.cfg.frame_h, self.cfg.frame_w],
            chw.to_vec(),
        )?)?;
        let (mu, ls) = self.encode_t(&mut t, x)?;
        let sigma = t.value(ls).data().iter().map(|v| v.exp()).collect();
        Ok((t.value(mu).data().to_vec(), sigma))
    }

    pub fn decode(&self, store: &ParamStore<f32>, m: &[f32]) -> Result<Frame> {
        if m.len() != self.latent_dim() {
            return Err(MindError::Shape(format!(
                "latent has {} dims, expected {}",
                m.len(),
                self.latent_dim()
            )));
        }
        let mut t = Tape::new(store);
        let mv = t.input_vec(m)?;
        let logits = self.decode_logits_t(&mut t, mv)?;
        let chw: Vec<f32> = t.value(logits).data().iter().map(|&z| sigmoid(z)).collect();
        Ok(Frame::from_chw(self.cfg.frame_h, self.cfg.frame_w, &chw))
    }

    pub fn loss_value(
        &self,
        store: &ParamStore<f32>,
        frame_chw: &[f32],
        beta: f64,
    ) -> Result<VaeLossValue> {
        let mut t = Tape::new(store);
        let v = self.vae_loss_t(&mut t, frame_chw, None, beta)?;
        Ok(VaeLossValue {
            total: t.scalar(v.total).as_f64(),
            recon: t.scalar(v.recon).as_f64(),
            kl: t.scalar(v.kl).as_f64(),
        })
    }
}

/// `m = mu + sigma ⊙ eps`, `eps ~ N(0, I)`.
pub fn sample_latent<R: Rng + ?Sized>(mu: &[f32], sigma: &[f32], rng: &mut R) -> MentalRep {
    let m = mu
        .iter()
        .zip(sigma)
        .map(|(&u, &s)| {
            let e: f32 = StandardNormal.sample(rng);
            u + s * e
        })
        .collect();
    MentalRep {
        m,
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
    }
}

/// `Σ ½(mu² + σ² − 1 − ln σ²)` with `σ = exp(log_sigma)`.
pub fn kl_t<T: Real>(t: &mut Tape<'_, T>, mu: Var, log_sigma: Var) -> Result<Var> {
    let mu2 = t.square(mu)?;
    let two_ls = t.scale(log_sigma, 2.0)?;
    let var = t.exp(two_ls)?;
    let a = t.add(mu2, var)?;
    let b = t.sub(a, two_ls)?;
    let c = t.add_scalar(b, -1.0)?;
    let s = t.sum(c)?;
    Ok(t.scale(s, 0.5)?)
}

pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// `−Σ x ln x + (1 − x) ln(1 − x)`, with `0 ln 0 = 0`.
pub fn bernoulli_entropy<T: Real>(x: &[T]) -> f64 {
    let xlnx = |p: f64| if p <= 0.0 { 0.0 } else { p * p.ln() };
    -x.iter()
        .map(|v| {
            let p = v.as_f64();
            xlnx(p) + xlnx(1.0 - p)
        })
        .sum::<f64>()
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_divergence(&[0.0; 4], &[1.0; 4]), 0.0);
        assert!((kl_divergence(&[1.0], &[1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decoder_mirrors_encoder_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (h, w) in [(32, 32), (8, 8), (12, 20)] {
            let mut store = ParamStore::<f32>::new();
            let cfg = VaeConfig {
                frame_h: h,
                frame_w: w,
                latent_dim: 4,
                channels: vec![2, 3, 4, 5],
                beta: 1.0,
            };
            let vae = MentalAutoencoder::new(cfg, &mut store, &mut rng).unwrap();
            let f = vae.decode(&store, &[0.1, -0.2, 0.3, 0.0]).unwrap();
            assert_eq!((f.height, f.width), (h, w));
            assert!(f.data.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn beta_zero_is_pure_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let cfg = VaeConfig {
            frame_h: 8,
            frame_w: 8,
            latent_dim: 3,
            channels: vec![2, 2],
            beta: 0.0,
        };
        let vae = MentalAutoencoder::new(cfg, &mut store, &mut rng).unwrap();
        let x: Vec<f32> = (0..192).map(|i| (i % 7) as f32 / 7.0).collect();
        let v = vae.loss_value(&store, &x, 0.0).unwrap();
        assert_eq!(v.total, v.recon);
        assert!(v.recon >= -1e-3);
    }
}
