use ndnet::{log_sum_exp_slice, Real, Tape, Var};
use rand::distributions::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Result;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian mixture over a `dim`-dimensional latent. Means and
/// scales are stored component-major, `[K * dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub dim: usize,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn scale(&self, k: usize) -> &[f64] {
        &self.scales[k * self.dim..(k + 1) * self.dim]
    }

    /// Mean of the heaviest component (lowest index on ties).
    pub fn mode_mean(&self) -> Vec<f32> {
        let mut best = 0;
        for k in 1..self.k() {
            if self.weights[k] > self.weights[best] {
                best = k;
            }
        }
        self.mean(best).iter().map(|&v| v as f32).collect()
    }

    pub fn is_valid(&self) -> bool {
        let s: f64 = self.weights.iter().sum();
        (s - 1.0).abs() <= 1e-6
            && self.weights.iter().all(|&w| w >= 0.0)
            && self.scales.iter().all(|&s| s > 0.0)
            && self.means.len() == self.k() * self.dim
            && self.scales.len() == self.k() * self.dim
    }
}

/// `−log Σ_k π_k Π_d N(x_d; μ_kd, σ_kd)`, evaluated as a log-sum-exp over
/// per-component log joint densities.
pub fn mdn_nll(mix: &MixtureParams, target: &[f64]) -> f64 {
    let d = mix.dim;
    let comps: Vec<f64> = (0..mix.k())
        .map(|k| {
            let mut s = mix.weights[k].ln();
            for ((&x, &m), &sd) in target.iter().zip(mix.mean(k)).zip(mix.scale(k)) {
                let z = (x - m) / sd;
                s -= HALF_LN_2PI + sd.ln() + 0.5 * z * z;
            }
            s
        })
        .collect();
    debug_assert_eq!(target.len(), d);
    -log_sum_exp_slice(&comps)
}

/// Tape form of [`mdn_nll`]. `log_pi: [K]`, `mu` and `sigma`: `[K * D]`.
pub fn mdn_nll_t<T: Real>(
    t: &mut Tape<'_, T>,
    log_pi: Var,
    mu: Var,
    sigma: Var,
    target: &[T],
) -> Result<Var> {
    let k = t.value(log_pi).numel();
    let d = target.len();
    let mut rep = Vec::with_capacity(k * d);
    for _ in 0..k {
        rep.extend_from_slice(target);
    }
    let x = t.input_vec(&rep)?;
    let diff = t.sub(x, mu)?;
    let z = t.div(diff, sigma)?;
    let z2 = t.square(z)?;
    let z2 = t.reshape(z2, &[k, d])?;
    let quad = t.row_sum(z2)?;
    let quad = t.scale(quad, -0.5)?;
    let ls = t.ln(sigma)?;
    let ls = t.reshape(ls, &[k, d])?;
    let ls = t.row_sum(ls)?;
    let comp = t.sub(quad, ls)?;
    let comp = t.add(comp, log_pi)?;
    let comp = t.add_scalar(comp, -(d as f64) * HALF_LN_2PI)?;
    let lse = t.log_sum_exp(comp)?;
    Ok(t.neg(lse)?)
}

/// Draws a component from `π^(1/τ)` (renormalised), then a point from it
/// with scales widened by `√τ`.
pub fn sample_imagery<R: Rng + ?Sized>(
    mix: &MixtureParams,
    temperature: f64,
    rng: &mut R,
) -> Vec<f32> {
    let tau = temperature.max(1e-6);
    let k = if mix.k() == 1 {
        0
    } else {
        let logw: Vec<f64> = mix.weights.iter().map(|w| w.ln() / tau).collect();
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        WeightedIndex::new(&w).expect("finite weights").sample(rng)
    };
    let widen = tau.sqrt();
    mix.mean(k)
        .iter()
        .zip(mix.scale(k))
        .map(|(&m, &s)| {
            let e: f64 = StandardNormal.sample(rng);
            (m + s * widen * e) as f32
        })
        .collect()
}

/// State- and action-agnostic baseline: a diagonal mixture fitted by EM to
/// a set of latents.
pub fn fit_marginal_mixture<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> MixtureParams {
    assert!(
        !data.is_empty() && k > 0,
        "fit_marginal_mixture: empty input"
    );
    let d = data[0].len();
    let n = data.len();
    let floor = 1e-3;
    // k-means++ seeding: identical starting means never separate under EM
    let mut means = Vec::with_capacity(k * d);
    means.extend_from_slice(&data[rng.gen_range(0..n)]);
    for c in 1..k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                (0..c)
                    .map(|j| {
                        x.iter()
                            .zip(&means[j * d..(j + 1) * d])
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.gen_range(0..n),
        };
        means.extend_from_slice(&data[pick]);
    }
    let mut global_var = vec![0.0; d];
    let gmean: Vec<f64> = (0..d)
        .map(|j| data.iter().map(|x| x[j]).sum::<f64>() / n as f64)
        .collect();
    for x in data {
        for j in 0..d {
            global_var[j] += (x[j] - gmean[j]).powi(2) / n as f64;
        }
    }
    let mut scales: Vec<f64> = (0..k)
        .flat_map(|_| global_var.iter().map(|v| v.sqrt().max(floor)))
        .collect();
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; n * k];
    for _ in 0..iters {
        let mix = MixtureParams {
            weights: weights.clone(),
            means: means.clone(),
            scales: scales.clone(),
            dim: d,
        };
        for (i, x) in data.iter().enumerate() {
            let lp: Vec<f64> = (0..k)
                .map(|c| {
                    let mut s = mix.weights[c].ln();
                    for ((&xv, &m), &sd) in x.iter().zip(mix.mean(c)).zip(mix.scale(c)) {
                        let z = (xv - m) / sd;
                        s -= HALF_LN_2PI + sd.ln() + 0.5 * z * z;
                    }
                    s
                })
                .collect();
            let lse = log_sum_exp_slice(&lp);
            for c in 0..k {
                resp[i * k + c] = (lp[c] - lse).exp();
            }
        }
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum::<f64>() + 1e-12;
            weights[c] = nk / n as f64;
            for j in 0..d {
                let m = (0..n).map(|i| resp[i * k + c] * data[i][j]).sum::<f64>() / nk;
                let v = (0..n)
                    .map(|i| resp[i * k + c] * (data[i][j] - m).powi(2))
                    .sum::<f64>()
                    / nk;
                means[c * d + j] = m;
                scales[c * d + j] = v.sqrt().max(floor);
            }
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
    }
    MixtureParams {
        weights,
        means,
        scales,
        dim: d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_at_mode() {
        let mix = MixtureParams {
            weights: vec![1.0],
            means: vec![0.3, -1.0, 2.0],
            scales: vec![1.0; 3],
            dim: 3,
        };
        let nll = mdn_nll(&mix, &[0.3, -1.0, 2.0]);
        assert!((nll - 3.0 * HALF_LN_2PI).abs() < 1e-12);
        assert!((HALF_LN_2PI - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_component_is_degenerate() {
        let one = MixtureParams {
            weights: vec![1.0],
            means: vec![0.5, 0.1],
            scales: vec![0.7, 1.3],
            dim: 2,
        };
        let two = MixtureParams {
            weights: vec![0.5, 0.5],
            means: vec![0.5, 0.1, 0.5, 0.1],
            scales: vec![0.7, 1.3, 0.7, 1.3],
            dim: 2,
        };
        let x = [1.1, -0.4];
        assert!((mdn_nll(&one, &x) - mdn_nll(&two, &x)).abs() < 1e-12);
    }
}
