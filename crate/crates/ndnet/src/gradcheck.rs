//! Central-difference gradient checking in 64-bit precision.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{NdError, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the analytic gradient returned by `f` against central differences
/// at `point`, over `coords` (all coordinates when `None`).
pub fn grad_check_coords<F>(
    mut f: F,
    point: &[f64],
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (v0, analytic) = f(point)?;
    if !v0.is_finite() || analytic.len() != point.len() {
        return Err(NdError::NonFinite { op: "grad_check" });
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        coords_checked: coords.len(),
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let (fp, _) = f(&x)?;
        x[i] = orig - eps;
        let (fm, _) = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NdError::NonFinite { op: "grad_check" });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coord = i;
        }
    }
    Ok(report)
}

pub fn grad_check<F>(f: F, point: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    grad_check_coords(f, point, eps, None)
}

/// Checks the gradient of a tape-built loss with respect to every parameter of
/// `store`. When `max_coords` is set, a random subset of that many
/// coordinates is probed.
pub fn check_param_grads<F, R>(
    store: &ParamStore<f64>,
    eps: f64,
    max_coords: Option<usize>,
    rng: &mut R,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let point = store.flatten();
    let mut work = store.clone();
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        work.load_flat(x)?;
        let mut t = Tape::new(&work);
        let l = loss(&mut t)?;
        let value = t.scalar(l);
        let grads = t.backward(l)?;
        Ok((value, grads.params().flatten()))
    };
    match max_coords {
        Some(k) if k < point.len() => {
            let mut coords = sample(rng, point.len(), k).into_vec();
            coords.sort_unstable();
            grad_check_coords(f, &point, eps, Some(&coords))
        }
        _ => grad_check(f, &point, eps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let r = grad_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[1.0], 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn wrong_gradient_detected() {
        let r = grad_check(|x| Ok((x[0] * x[0], vec![3.0 * x[0]])), &[1.0], 1e-4).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_probe_is_error() {
        let r = grad_check(|x| Ok((x[0].ln(), vec![1.0 / x[0]])), &[0.0], 1e-4);
        assert!(r.is_err());
    }
}
