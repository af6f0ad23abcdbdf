//! Tchebycheff and smooth Tchebycheff scalarizations and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::SurrogateModel;
use crate::types::EvaluationArchive;

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Ideal point `z*` and the shift `ε`; losses use `z* − ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealPoint {
    pub z_star: Vec<f64>,
    pub epsilon: f64,
}

impl IdealPoint {
    pub fn new(z_star: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("ideal-point epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { z_star, epsilon })
    }

    /// `z* − ε` componentwise.
    pub fn effective(&self) -> Vec<f64> {
        self.z_star.iter().map(|z| z - self.epsilon).collect()
    }
}

/// Smoothing parameter `ν` of the smooth Tchebycheff function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StchConfig {
    pub nu: f64,
}

impl StchConfig {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::Parameter(format!("STCH smoothing must be positive, got {nu}")));
        }
        Ok(Self { nu })
    }
}

impl Default for StchConfig {
    fn default() -> Self {
        Self { nu: 0.01 }
    }
}

/// `y_i = λ_i (f_i − (z*_i − ε))`
fn shifted(f: &[f64], lambda: &[f64], ideal: &IdealPoint) -> Vec<f64> {
    debug_assert!(f.len() == lambda.len() && f.len() == ideal.z_star.len());
    f.iter()
        .zip(lambda)
        .zip(&ideal.z_star)
        .map(|((fi, li), zi)| li * (fi - (zi - ideal.epsilon)))
        .collect()
}

/// `max_i λ_i (f_i − (z*_i − ε))`
pub fn tch(f: &[f64], lambda: &[f64], ideal: &IdealPoint) -> f64 {
    shifted(f, lambda, ideal).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `ν log Σ_i exp(y_i / ν)`, evaluated as `ỹ + ν log Σ exp((y_i − ỹ)/ν)` with
/// `ỹ = max_i y_i`.
pub fn stch(f: &[f64], lambda: &[f64], ideal: &IdealPoint, cfg: StchConfig) -> f64 {
    stch_with_weights(f, lambda, ideal, cfg).0
}

/// The unstabilized formula; overflows for `y/ν` beyond ~709.
pub fn stch_naive(f: &[f64], lambda: &[f64], ideal: &IdealPoint, cfg: StchConfig) -> f64 {
    let s: f64 = shifted(f, lambda, ideal).iter().map(|y| (y / cfg.nu).exp()).sum();
    cfg.nu * s.ln()
}

/// `∂ stch / ∂f_i = w_i = λ_i · softmax_i(y / ν)`.
pub fn stch_grad_f(f: &[f64], lambda: &[f64], ideal: &IdealPoint, cfg: StchConfig) -> Vec<f64> {
    stch_with_weights(f, lambda, ideal, cfg).1
}

/// Value and gradient weights in one pass.
pub fn stch_with_weights(f: &[f64], lambda: &[f64], ideal: &IdealPoint, cfg: StchConfig) -> (f64, Vec<f64>) {
    let y = shifted(f, lambda, ideal);
    let top = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| ((v - top) / cfg.nu).exp()).collect();
    let s: f64 = e.iter().sum();
    let value = top + cfg.nu * s.ln();
    let w = e.iter().zip(lambda).map(|(ei, li)| li * ei / s).collect();
    (value, w)
}

/// STCH of the LCB at `[x, t]` and its gradient with respect to `x`.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_stch(
    x: &[f64],
    t: &[f64],
    lambda: &[f64],
    ideal: &IdealPoint,
    cfg: StchConfig,
    model: &dyn SurrogateModel,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("LCB beta must be non-negative, got {beta}")));
    }
    let mut z = x.to_vec();
    z.extend_from_slice(t);
    let pred = model.predict_batch(&z, true)?;
    let f = pred.lcb(0, beta);
    let (value, w) = stch_with_weights(&f, lambda, ideal, cfg);
    let mut grad = vec![0.0; x.len()];
    for (i, wi) in w.iter().enumerate() {
        let g = pred.lcb_grad(0, i, beta);
        for (gk, v) in grad.iter_mut().zip(&g) {
            *gk += wi * v;
        }
    }
    Ok((value, grad))
}

/// Componentwise minimum of the archive's observed objectives.
pub fn update_ideal(archive: &EvaluationArchive, epsilon: f64) -> Result<IdealPoint> {
    let mut it = archive.records();
    let first = it.next().ok_or_else(|| Error::State("cannot take an ideal point of an empty archive".into()))?;
    let mut z = first.y.to_vec();
    for r in it {
        for (zi, yi) in z.iter_mut().zip(r.y.iter()) {
            *zi = zi.min(*yi);
        }
    }
    IdealPoint::new(z, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_simplex, RandomSource};
    use crate::surrogate::{GaussianSurrogate, GpConfig};
    use crate::types::{BoxBounds, DecisionVector, EvaluationRecord, ObjectiveVector, TaskParameter};
    use proptest::prelude::*;

    fn origin(m: usize) -> IdealPoint {
        // z* − ε = 0
        IdealPoint::new(vec![1e-3; m], 1e-3).unwrap()
    }

    #[test]
    fn tch_examples() {
        assert_eq!(tch(&[1.0, 1.0], &[0.5, 0.5], &origin(2)), 0.5);
        assert!((tch(&[2.0, 1.0], &[0.2, 0.8], &origin(2)) - 0.8).abs() < 1e-15);
        assert_eq!(tch(&[3.0, 100.0], &[1.0, 0.0], &origin(2)), 3.0);
    }

    #[test]
    fn stch_examples() {
        let cfg = StchConfig::new(0.01).unwrap();
        let v = stch(&[1.0, 1.0], &[0.5, 0.5], &origin(2), cfg);
        assert!((v - (0.5 + 0.01 * 2f64.ln())).abs() < 1e-12);
        assert!((v - 0.506931).abs() < 1e-6);
        let v = stch(&[2.0, 1.0], &[0.2, 0.8], &origin(2), cfg);
        assert!((v - (0.8 + 0.01 * (1.0 + (-40f64).exp()).ln())).abs() < 1e-12);
        // Huge equal values: max + ν ln(multiplicity).
        let cfg = StchConfig::new(0.001).unwrap();
        let v = stch(&[2e4, 2e4, 1e4], &[0.5, 0.5, 0.0], &origin(3), cfg);
        let want = 0.5 * (2e4 - 0.0) + 0.001 * 2f64.ln();
        assert!(v.is_finite() && (v - want).abs() < 1e-9, "{v} vs {want}");
    }

    #[test]
    fn weights_examples() {
        let cfg = StchConfig::new(0.01).unwrap();
        let w = stch_grad_f(&[1.0, 1.0], &[0.5, 0.5], &origin(2), cfg);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let w = stch_grad_f(&[10.0, 0.0], &[0.3, 0.7], &origin(2), cfg);
        assert!((w[0] - 0.3).abs() < 1e-12 && w[1].abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        assert!(StchConfig::new(0.0).is_err());
        assert!(IdealPoint::new(vec![0.0], 0.0).is_err());
        assert!(matches!(update_ideal(&EvaluationArchive::new(), 1e-3), Err(Error::State(_))));
    }

    #[test]
    fn grad_f_matches_central_differences() {
        let mut rng = RandomSource::new(3);
        for _ in 0..200 {
            let m = 2 + rng.index(2);
            let lambda = sample_simplex(&mut rng, m).unwrap();
            let f: Vec<f64> = (0..m).map(|_| rng.uniform_range(0.0, 2.0)).collect();
            let ideal = IdealPoint::new(vec![0.0; m], 1e-3).unwrap();
            let cfg = StchConfig::new(rng.uniform_range(0.05, 1.0)).unwrap();
            let w = stch_grad_f(&f, &lambda, &ideal, cfg);
            for i in 0..m {
                let h = 1e-6;
                let mut fp = f.clone();
                fp[i] += h;
                let mut fm = f.clone();
                fm[i] -= h;
                let fd = (stch(&fp, &lambda, &ideal, cfg) - stch(&fm, &lambda, &ideal, cfg)) / (2.0 * h);
                assert!((fd - w[i]).abs() <= 1e-5, "{fd} vs {}", w[i]);
            }
        }
    }

    fn record(y: Vec<f64>) -> EvaluationRecord {
        EvaluationRecord {
            x: DecisionVector::new(vec![0.0]),
            t: TaskParameter::new(vec![]),
            y: ObjectiveVector::new(y).unwrap(),
            iteration: 0,
            counter: 0,
        }
    }

    #[test]
    fn ideal_is_running_min() {
        let mut a = EvaluationArchive::new();
        a.push(record(vec![1.0, 2.0])).unwrap();
        assert_eq!(update_ideal(&a, 1e-3).unwrap().z_star, vec![1.0, 2.0]);
        a.push(record(vec![2.0, 1.0])).unwrap();
        let z = update_ideal(&a, 1e-3).unwrap().z_star;
        assert_eq!(z, vec![1.0, 1.0]);
        a.push(record(vec![5.0, 5.0])).unwrap();
        assert_eq!(update_ideal(&a, 1e-3).unwrap().z_star, z);
    }

    fn fitted_surrogate(rng: &mut RandomSource) -> GaussianSurrogate {
        let mut a = EvaluationArchive::new();
        for i in 0..25 {
            let x = vec![rng.uniform(), rng.uniform()];
            let t = vec![rng.uniform()];
            let y = vec![x[0] + 0.3 * t[0], (1.0 - x[0]).powi(2) + (x[1] - t[0]).powi(2)];
            a.push(EvaluationRecord {
                x: x.into(),
                t: t.into(),
                y: ObjectiveVector::new(y).unwrap(),
                iteration: 0,
                counter: i,
            })
            .unwrap();
        }
        let unit = |d| BoxBounds::uniform(d, 0.0, 1.0).unwrap();
        let cfg = GpConfig { steps: 60, restarts: 1, ..GpConfig::default() };
        GaussianSurrogate::fit(&a, &unit(2), &unit(1), &cfg, rng, None).unwrap()
    }

    #[test]
    fn surrogate_stch_gradient_matches_finite_differences() {
        let mut rng = RandomSource::new(11);
        let model = fitted_surrogate(&mut rng);
        let ideal = IdealPoint::new(vec![-0.1, -0.1], 1e-3).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = vec![rng.uniform_range(0.05, 0.95), rng.uniform_range(0.05, 0.95)];
            let t = vec![rng.uniform()];
            let lambda = sample_simplex(&mut rng, 2).unwrap();
            let cfg = StchConfig::new(0.1).unwrap();
            let (_, g) = surrogate_stch(&x, &t, &lambda, &ideal, cfg, &model, 0.05).unwrap();
            for k in 0..2 {
                let h = 1e-5;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let vp = surrogate_stch(&xp, &t, &lambda, &ideal, cfg, &model, 0.05).unwrap().0;
                let vm = surrogate_stch(&xm, &t, &lambda, &ideal, cfg, &model, 0.05).unwrap().0;
                let fd = (vp - vm) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(1e-2);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn surrogate_stch_beta_zero_uses_posterior_mean() {
        let mut rng = RandomSource::new(12);
        let model = fitted_surrogate(&mut rng);
        let ideal = IdealPoint::new(vec![0.0, 0.0], 1e-3).unwrap();
        let cfg = StchConfig::default();
        let (x, t, lambda) = (vec![0.3, 0.6], vec![0.2], vec![0.4, 0.6]);
        let (v, _) = surrogate_stch(&x, &t, &lambda, &ideal, cfg, &model, 0.0).unwrap();
        let (mean, _) = model.posterior(&[0.3, 0.6, 0.2]).unwrap();
        assert_eq!(v, stch(&mean, &lambda, &ideal, cfg));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn smooth_to_hard_bound(
            f in proptest::collection::vec(-5.0f64..5.0, 3),
            raw in proptest::collection::vec(0.0f64..1.0, 3),
            z in proptest::collection::vec(-6.0f64..0.0, 3),
            nu in 1e-3f64..1.0,
            m in 2usize..=3,
        ) {
            let s: f64 = raw[..m].iter().sum::<f64>() + 1e-12;
            let lambda: Vec<f64> = raw[..m].iter().map(|v| (v + 1e-12 / m as f64) / s).collect();
            let ideal = IdealPoint::new(z[..m].to_vec(), 1e-3).unwrap();
            let cfg = StchConfig::new(nu).unwrap();
            let gap = stch(&f[..m], &lambda, &ideal, cfg) - tch(&f[..m], &lambda, &ideal);
            prop_assert!(gap >= 0.0);
            prop_assert!(gap <= nu * (m as f64).ln() + 1e-12);
            let w = stch_grad_f(&f[..m], &lambda, &ideal, cfg);
            let sw: f64 = w.iter().sum();
            let lo = lambda.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!(sw >= lo - 1e-12 && sw <= hi + 1e-12);
        }

        #[test]
        fn stabilized_matches_naive_and_is_monotone(
            f in proptest::collection::vec(0.0f64..3.0, 2),
            l0 in 0.0f64..1.0,
            nu in 0.05f64..1.0,
            bump in 0.0f64..1.0,
            idx in 0usize..2,
        ) {
            let lambda = [l0, 1.0 - l0];
            let ideal = IdealPoint::new(vec![0.0, 0.0], 1e-3).unwrap();
            let cfg = StchConfig::new(nu).unwrap();
            let a = stch(&f, &lambda, &ideal, cfg);
            let b = stch_naive(&f, &lambda, &ideal, cfg);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            let mut g = f.clone();
            g[idx] += bump;
            prop_assert!(stch(&g, &lambda, &ideal, cfg) >= a);
        }
    }
}
