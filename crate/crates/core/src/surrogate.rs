//! Independent Gaussian processes per objective over the augmented input
//! `z = [x, t]`, with marginal-likelihood fitting, batched posterior
//! prediction, analytic input gradients and lower confidence bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky_inverse, cholesky_with_jitter, dot, gemm, lower_inverse};
use crate::sampling::RandomSource;
use crate::types::{BoxBounds, EvaluationArchive, ObjectiveVector};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
/// Posterior std floor used when differentiating `σ = √var`.
pub const STD_FLOOR: f64 = 1e-9;

// Box constraints on the log-hyperparameters (inputs live in the unit cube,
// targets are standardized).
const LOG_LS_MIN: f64 = -6.0; // ≈ 0.0025
const LOG_LS_MAX: f64 = 5.0; // ≈ 148
const LOG_SV_MIN: f64 = -7.0;
const LOG_SV_MAX: f64 = 5.0;
const LOG_NOISE_MIN: f64 = -20.0;
const LOG_NOISE_MAX: f64 = 0.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    SquaredExponential,
    Matern52,
}

impl KernelKind {
    /// `k = s·φ(ρ)` with `ρ = Σ_d ((z_d − z'_d)/ℓ_d)²`. Returns `(φ, dφ/dρ)`.
    #[inline]
    fn profile(self, rho: f64) -> (f64, f64) {
        match self {
            KernelKind::SquaredExponential => {
                let e = (-0.5 * rho).exp();
                (e, -0.5 * e)
            }
            KernelKind::Matern52 => {
                let r5 = (5.0 * rho).sqrt();
                let e = (-r5).exp();
                ((1.0 + r5 + 5.0 / 3.0 * rho) * e, -5.0 / 6.0 * (1.0 + r5) * e)
            }
        }
    }
}

/// Settings for hyperparameter fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub kernel: KernelKind,
    /// Initial (and, unless `learn_noise`, fixed) noise variance in
    /// standardized units.
    pub noise_variance: f64,
    pub learn_noise: bool,
    /// Optimizer steps per start.
    pub steps: usize,
    /// Random restarts on top of the default (or warm) start.
    pub restarts: usize,
    /// Step size on the log-hyperparameters.
    pub learning_rate: f64,
    /// Start from the previous fit's optimum when one is supplied.
    pub warm_start: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::SquaredExponential,
            noise_variance: 1e-6,
            learn_noise: false,
            steps: 200,
            restarts: 3,
            learning_rate: 0.05,
            warm_start: true,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("gp noise_variance and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Hyperparameters of one GP, in standardized target units and unit-cube
/// input units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub constant_mean: f64,
}

impl GpHyperparameters {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lengthscales.iter().all(|&l| l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.noise_variance > 0.0
            && self.constant_mean.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid GP hyperparameters {self:?}")))
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v.push(self.constant_mean);
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 3;
        Self {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_variance: v[d].exp(),
            noise_variance: v[d + 1].exp(),
            constant_mean: v[d + 2],
        }
    }
}

/// One fitted GP over standardized targets.
#[derive(Clone, Debug)]
pub struct SingleGp {
    kernel: KernelKind,
    hyper: GpHyperparameters,
    /// Training inputs, `N × D` row-major, unit-cube scaled.
    z: Vec<f64>,
    /// Standardized targets.
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    /// `L⁻¹` for `L Lᵀ = K + (noise + jitter)·I`.
    linv: Vec<f64>,
    /// `(K + noise·I)⁻¹ (y − c)`.
    alpha: Vec<f64>,
    jitter: f64,
    log_marginal_likelihood: f64,
}

/// Log marginal likelihood before and after optimization, for one start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StartReport {
    pub initial: f64,
    pub best: f64,
}

struct MllEval {
    value: f64,
    grad: Vec<f64>,
}

/// Squared coordinate differences `(z_id − z_jd)²` over pairs `i < j`
/// (row-major upper triangle), one block of `N(N−1)/2` per dim.
fn pairwise_sq_diffs(z: &[f64], n: usize, d: usize) -> Vec<f64> {
    let pairs = n * n.saturating_sub(1) / 2;
    let mut out = vec![0.0; d * pairs];
    for dim in 0..d {
        let block = &mut out[dim * pairs..(dim + 1) * pairs];
        let mut idx = 0;
        for i in 0..n {
            let zi = z[i * d + dim];
            for j in i + 1..n {
                let diff = zi - z[j * d + dim];
                block[idx] = diff * diff;
                idx += 1;
            }
        }
    }
    out
}

/// Full kernel matrix (no noise) plus packed off-diagonal `s·φ(ρ)` and `s·φ'(ρ)`.
fn kernel_matrix(kind: KernelKind, hyper: &GpHyperparameters, sq: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = hyper.lengthscales.len();
    let pairs = n * n.saturating_sub(1) / 2;
    let mut rho = vec![0.0; pairs];
    for dim in 0..d {
        let inv = 1.0 / (hyper.lengthscales[dim] * hyper.lengthscales[dim]);
        axpy(inv, &sq[dim * pairs..(dim + 1) * pairs], &mut rho);
    }
    let s = hyper.signal_variance;
    let mut kp = vec![0.0; pairs];
    let mut dphi = vec![0.0; pairs];
    for idx in 0..pairs {
        let (p, dp) = kind.profile(rho[idx]);
        kp[idx] = s * p;
        dphi[idx] = s * dp;
    }
    let mut k = vec![0.0; n * n];
    let mut idx = 0;
    for i in 0..n {
        k[i * n + i] = s;
        for j in i + 1..n {
            k[i * n + j] = kp[idx];
            k[j * n + i] = kp[idx];
            idx += 1;
        }
    }
    (k, kp, dphi)
}

/// Log marginal likelihood and its gradient with respect to
/// `[log ℓ_1..log ℓ_D, log s, log noise, c]`.
fn mll_and_grad(kind: KernelKind, logp: &[f64], sq: &[f64], y: &[f64], learn_noise: bool) -> Result<MllEval> {
    let n = y.len();
    let hyper = GpHyperparameters::from_log(logp);
    let d = hyper.lengthscales.len();
    let (mut k, kp, dphi) = kernel_matrix(kind, &hyper, sq, n);
    for i in 0..n {
        k[i * n + i] += hyper.noise_variance;
    }
    let (l, _) = cholesky_with_jitter(&k, n)?;
    let resid: Vec<f64> = y.iter().map(|v| v - hyper.constant_mean).collect();
    let kinv = cholesky_inverse(&l, n);
    let alpha: Vec<f64> = (0..n).map(|i| dot(&kinv[i * n..(i + 1) * n], &resid)).collect();
    let logdet_half: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    let value = -0.5 * dot(&resid, &alpha) - logdet_half - 0.5 * n as f64 * LOG_2PI;

    // W = ααᵀ − K⁻¹; ∂MLL/∂θ = ½ Σ_ij W_ij ∂K_ij/∂θ, symmetric so pairs count twice.
    let pairs = kp.len();
    let mut w = vec![0.0; pairs];
    let mut idx = 0;
    for i in 0..n {
        for j in i + 1..n {
            w[idx] = alpha[i] * alpha[j] - kinv[i * n + j];
            idx += 1;
        }
    }
    let w_diag: Vec<f64> = (0..n).map(|i| alpha[i] * alpha[i] - kinv[i * n + i]).collect();
    let wd: Vec<f64> = w.iter().zip(&dphi).map(|(a, b)| a * b).collect();
    let mut grad = vec![0.0; d + 3];
    for dim in 0..d {
        let inv = 1.0 / (hyper.lengthscales[dim] * hyper.lengthscales[dim]);
        // ∂K/∂log ℓ = s φ'(ρ) · (−2 (Δz)²/ℓ²), zero on the diagonal.
        grad[dim] = -2.0 * inv * dot(&wd, &sq[dim * pairs..(dim + 1) * pairs]);
    }
    let trace: f64 = w_diag.iter().sum();
    grad[d] = 0.5 * trace * hyper.signal_variance + dot(&w, &kp);
    if learn_noise {
        grad[d + 1] = 0.5 * trace * hyper.noise_variance;
    }
    grad[d + 2] = alpha.iter().sum();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Fit("non-finite marginal likelihood".into()));
    }
    Ok(MllEval { value, grad })
}

fn clamp_log(v: &mut [f64], fixed_noise: Option<f64>) {
    let d = v.len() - 3;
    for x in &mut v[..d] {
        *x = x.clamp(LOG_LS_MIN, LOG_LS_MAX);
    }
    v[d] = v[d].clamp(LOG_SV_MIN, LOG_SV_MAX);
    v[d + 1] = match fixed_noise {
        Some(ln) => ln,
        None => v[d + 1].clamp(LOG_NOISE_MIN, LOG_NOISE_MAX),
    };
}

/// Adam ascent on the per-point log marginal likelihood. Returns the best
/// iterate visited (never worse than the start) and its MLL.
fn ascend(
    kind: KernelKind,
    start: Vec<f64>,
    sq: &[f64],
    y: &[f64],
    cfg: &GpConfig,
) -> Option<(Vec<f64>, StartReport)> {
    let n = y.len() as f64;
    let fixed_noise = (!cfg.learn_noise).then(|| cfg.noise_variance.ln());
    let mut p = start;
    clamp_log(&mut p, fixed_noise);
    let first = mll_and_grad(kind, &p, sq, y, cfg.learn_noise).ok()?;
    let report_initial = first.value;
    let mut best = (p.clone(), first.value);
    let mut current = first;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; p.len()];
    let mut m2 = vec![0.0; p.len()];
    for step in 1..=cfg.steps {
        for i in 0..p.len() {
            let g = current.grad[i] / n;
            m1[i] = b1 * m1[i] + (1.0 - b1) * g;
            m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
            let mh = m1[i] / (1.0 - b1.powi(step as i32));
            let vh = m2[i] / (1.0 - b2.powi(step as i32));
            p[i] += cfg.learning_rate * mh / (vh.sqrt() + eps);
        }
        clamp_log(&mut p, fixed_noise);
        match mll_and_grad(kind, &p, sq, y, cfg.learn_noise) {
            Ok(e) => {
                if e.value > best.1 {
                    best = (p.clone(), e.value);
                }
                current = e;
            }
            Err(_) => break,
        }
    }
    Some((best.0, StartReport { initial: report_initial, best: best.1 }))
}

impl SingleGp {
    /// Fits hyperparameters by MLL ascent from the default (or warm) start
    /// plus `cfg.restarts` random starts, keeping the best.
    pub fn fit(
        z: Vec<f64>,
        y_raw: &[f64],
        dim: usize,
        cfg: &GpConfig,
        rng: &mut RandomSource,
        warm: Option<&GpHyperparameters>,
    ) -> Result<(Self, Vec<StartReport>)> {
        let n = y_raw.len();
        if n < 2 {
            return Err(Error::Size { need: 2, have: n });
        }
        if y_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("non-finite training target".into()));
        }
        let y_mean = y_raw.iter().sum::<f64>() / n as f64;
        let var = y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() > 1e-12 * (1.0 + y_mean.abs()) { var.sqrt() } else { 1.0 };
        let y: Vec<f64> = y_raw.iter().map(|v| (v - y_mean) / y_std).collect();
        let sq = pairwise_sq_diffs(&z, n, dim);

        let mut starts = Vec::with_capacity(cfg.restarts + 1);
        let default = GpHyperparameters {
            lengthscales: vec![0.5; dim],
            signal_variance: 1.0,
            noise_variance: cfg.noise_variance,
            constant_mean: 0.0,
        };
        match warm.filter(|w| cfg.warm_start && w.lengthscales.len() == dim) {
            Some(w) => starts.push(w.to_log()),
            None => starts.push(default.to_log()),
        }
        for _ in 0..cfg.restarts {
            let mut h = default.clone();
            for l in &mut h.lengthscales {
                *l = (rng.uniform_range(0.05f64.ln(), 2.0f64.ln())).exp();
            }
            h.signal_variance = rng.uniform_range(0.5f64.ln(), 2.0f64.ln()).exp();
            starts.push(h.to_log());
        }

        let mut reports = Vec::new();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            if let Some((p, rep)) = ascend(cfg.kernel, s, &sq, &y, cfg) {
                reports.push(rep);
                if best.as_ref().map_or(true, |b| rep.best > b.1) {
                    best = Some((p, rep.best));
                }
            }
        }
        let (p, _) = best.ok_or_else(|| Error::Fit("no hyperparameter start produced a PD kernel".into()))?;
        let hyper = GpHyperparameters::from_log(&p);
        let gp = Self::condition(cfg.kernel, hyper, z, y, y_mean, y_std)?;
        Ok((gp, reports))
    }

    /// Builds the posterior for fixed hyperparameters (no optimization).
    pub fn condition(
        kernel: KernelKind,
        hyper: GpHyperparameters,
        z: Vec<f64>,
        y: Vec<f64>,
        y_mean: f64,
        y_std: f64,
    ) -> Result<Self> {
        hyper.validate()?;
        let n = y.len();
        let dim = hyper.lengthscales.len();
        if z.len() != n * dim {
            return Err(Error::Dimension(format!("{} inputs for {n} targets of dim {dim}", z.len())));
        }
        if n == 0 {
            return Err(Error::Size { need: 1, have: 0 });
        }
        let sq = pairwise_sq_diffs(&z, n, dim);
        let (mut k, _, _) = kernel_matrix(kernel, &hyper, &sq, n);
        for i in 0..n {
            k[i * n + i] += hyper.noise_variance;
        }
        let (l, jitter) = cholesky_with_jitter(&k, n)?;
        let linv = lower_inverse(&l, n);
        let resid: Vec<f64> = y.iter().map(|v| v - hyper.constant_mean).collect();
        // α = L⁻ᵀ L⁻¹ r
        let mut v = vec![0.0; n];
        for i in 0..n {
            v[i] = dot(&linv[i * n..i * n + i + 1], &resid[..i + 1]);
        }
        let mut alpha = vec![0.0; n];
        for i in 0..n {
            for j in i..n {
                alpha[i] += linv[j * n + i] * v[j];
            }
        }
        let logdet_half: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
        let mll = -0.5 * dot(&resid, &alpha) - logdet_half - 0.5 * n as f64 * LOG_2PI;
        Ok(Self {
            kernel,
            hyper,
            z,
            y,
            y_mean,
            y_std,
            linv,
            alpha,
            jitter,
            log_marginal_likelihood: mll,
        })
    }

    pub fn hyperparameters(&self) -> &GpHyperparameters {
        &self.hyper
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Target standardization `(mean, std)`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Kernel value between two unit-cube inputs (standardized units).
    pub fn kernel_value(&self, a: &[f64], b: &[f64]) -> f64 {
        let rho: f64 = a
            .iter()
            .zip(b)
            .zip(&self.hyper.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.hyper.signal_variance * self.kernel.profile(rho).0
    }

    /// Standardized posterior for `q` scaled queries (`q × D`). Writes means and
    /// stds into `out_mean`/`out_std` (stride `stride`, offset `col`) and, when
    /// `grads` is given, `∂μ/∂z` and `∂σ/∂z` per query (`q × D` each).
    fn predict_scaled(&self, zq: &[f64], q: usize, want_grad: bool) -> ScaledPrediction {
        let n = self.y.len();
        let d = self.hyper.lengthscales.len();
        let s = self.hyper.signal_variance;
        let inv_l2: Vec<f64> = self.hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut kq = vec![0.0; q * n];
        let mut dk = if want_grad { vec![0.0; q * n] } else { Vec::new() };
        for a in 0..q {
            let za = &zq[a * d..(a + 1) * d];
            for j in 0..n {
                let zj = &self.z[j * d..(j + 1) * d];
                let mut rho = 0.0;
                for k in 0..d {
                    let diff = za[k] - zj[k];
                    rho += diff * diff * inv_l2[k];
                }
                let (p, dp) = self.kernel.profile(rho);
                kq[a * n + j] = s * p;
                if want_grad {
                    dk[a * n + j] = 2.0 * s * dp;
                }
            }
        }
        let mean: Vec<f64> =
            (0..q).map(|a| self.hyper.constant_mean + dot(&kq[a * n..(a + 1) * n], &self.alpha)).collect();
        // V = Kq L⁻ᵀ so var = s − |v|².
        let mut v = vec![0.0; q * n];
        gemm(q, n, n, 1.0, &kq, false, &self.linv, true, 0.0, &mut v);
        let var: Vec<f64> = (0..q)
            .map(|a| {
                let row = &v[a * n..(a + 1) * n];
                (s - dot(row, row)).max(0.0)
            })
            .collect();
        let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        if !want_grad {
            return ScaledPrediction { mean, std, grad_mean: Vec::new(), grad_std: Vec::new() };
        }
        // U = V L⁻¹ = Kq K⁻¹.
        let mut u = vec![0.0; q * n];
        gemm(q, n, n, 1.0, &v, false, &self.linv, false, 0.0, &mut u);
        let mut grad_mean = vec![0.0; q * d];
        let mut grad_std = vec![0.0; q * d];
        let mut cm = vec![0.0; n];
        let mut cv = vec![0.0; n];
        for a in 0..q {
            let za = &zq[a * d..(a + 1) * d];
            // ∂k_j/∂z_k = 2 s φ'(ρ_j) (z_k − z_jk)/ℓ_k²
            for j in 0..n {
                cm[j] = dk[a * n + j] * self.alpha[j];
                cv[j] = dk[a * n + j] * u[a * n + j];
            }
            let sum_m: f64 = cm.iter().sum();
            let sum_v: f64 = cv.iter().sum();
            let denom = 2.0 * std[a].max(STD_FLOOR);
            for k in 0..d {
                let mut pm = 0.0;
                let mut pv = 0.0;
                for j in 0..n {
                    let zjk = self.z[j * d + k];
                    pm += cm[j] * zjk;
                    pv += cv[j] * zjk;
                }
                let gm = (za[k] * sum_m - pm) * inv_l2[k];
                let gvar = -2.0 * (za[k] * sum_v - pv) * inv_l2[k];
                grad_mean[a * d + k] = gm;
                grad_std[a * d + k] = if var[a] > 0.0 { gvar / denom } else { 0.0 };
            }
        }
        ScaledPrediction { mean, std, grad_mean, grad_std }
    }
}

struct ScaledPrediction {
    mean: Vec<f64>,
    std: Vec<f64>,
    grad_mean: Vec<f64>,
    grad_std: Vec<f64>,
}

/// Batched posterior in objective units. Row-major: `mean[a * m + i]`,
/// `grad_mean[(a * m + i) * d + k]` where `d = n + p` is the raw input dim.
#[derive(Clone, Debug, Default)]
pub struct Prediction {
    pub q: usize,
    pub m: usize,
    pub d: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub grad_mean: Vec<f64>,
    pub grad_std: Vec<f64>,
}

impl Prediction {
    pub fn has_grad(&self) -> bool {
        !self.grad_mean.is_empty()
    }

    /// `μ − βσ` for query `a`.
    pub fn lcb(&self, a: usize, beta: f64) -> Vec<f64> {
        (0..self.m).map(|i| self.mean[a * self.m + i] - beta * self.std[a * self.m + i]).collect()
    }

    /// `∂(μ_i − βσ_i)/∂z` for query `a`, objective `i`.
    pub fn lcb_grad(&self, a: usize, i: usize, beta: f64) -> Vec<f64> {
        let off = (a * self.m + i) * self.d;
        (0..self.d).map(|k| self.grad_mean[off + k] - beta * self.grad_std[off + k]).collect()
    }
}

/// Anything that predicts objectives with uncertainty over raw `[x, t]`.
pub trait SurrogateModel: Send + Sync {
    fn n_obj(&self) -> usize;
    /// Raw input dimension `n + p`.
    fn input_dim(&self) -> usize;
    /// Posterior for `q` raw inputs laid out `q × input_dim`.
    fn predict_batch(&self, z: &[f64], want_grad: bool) -> Result<Prediction>;
}

/// Per-objective GPs sharing an input scaling taken from the problem boxes.
#[derive(Clone, Debug)]
pub struct GaussianSurrogate {
    lower: Vec<f64>,
    scale: Vec<f64>,
    n_x: usize,
    gps: Vec<SingleGp>,
    reports: Vec<Vec<StartReport>>,
}

impl GaussianSurrogate {
    /// Fits one GP per objective on the archive. Inputs are min-max scaled
    /// with the declared boxes; targets are standardized per objective.
    pub fn fit(
        archive: &EvaluationArchive,
        decision: &BoxBounds,
        parameter: &BoxBounds,
        cfg: &GpConfig,
        rng: &mut RandomSource,
        warm: Option<&GaussianSurrogate>,
    ) -> Result<Self> {
        cfg.validate()?;
        if archive.len() < 2 {
            return Err(Error::Size { need: 2, have: archive.len() });
        }
        let (n, p, m) = archive.dims().expect("non-empty archive has dims");
        if n != decision.dim() || p != parameter.dim() {
            return Err(Error::Dimension(format!(
                "archive dims ({n}, {p}) do not match boxes ({}, {})",
                decision.dim(),
                parameter.dim()
            )));
        }
        let joint = decision.concat(parameter);
        let d = n + p;
        let lower = joint.lower.clone();
        let scale: Vec<f64> = (0..d).map(|i| joint.scale(i)).collect();
        let mut z = Vec::with_capacity(archive.len() * d);
        for r in archive.records() {
            for (k, v) in r.x.iter().chain(r.t.iter()).enumerate() {
                z.push((v - lower[k]) / scale[k]);
            }
        }
        let mut gps = Vec::with_capacity(m);
        let mut reports = Vec::with_capacity(m);
        for i in 0..m {
            let y: Vec<f64> = archive.records().map(|r| r.y[i]).collect();
            let warm_h = warm.filter(|w| w.gps.len() == m && w.n_x == n).map(|w| &w.gps[i].hyper);
            let mut sub = rng.derive(i as u64);
            let (gp, rep) = SingleGp::fit(z.clone(), &y, d, cfg, &mut sub, warm_h)?;
            gps.push(gp);
            reports.push(rep);
        }
        // Advance the caller's stream so successive fits use fresh restarts.
        rng.uniform();
        Ok(Self { lower, scale, n_x: n, gps, reports })
    }

    pub fn from_parts(lower: Vec<f64>, scale: Vec<f64>, n_x: usize, gps: Vec<SingleGp>) -> Result<Self> {
        let d = lower.len();
        if scale.len() != d || gps.iter().any(|g| g.hyper.lengthscales.len() != d) || gps.is_empty() {
            return Err(Error::Dimension("inconsistent surrogate parts".into()));
        }
        let reports = vec![Vec::new(); gps.len()];
        Ok(Self { lower, scale, n_x, gps, reports })
    }

    pub fn objectives(&self) -> &[SingleGp] {
        &self.gps
    }

    /// Per-objective MLL before/after each optimizer start of the last fit.
    pub fn fit_reports(&self) -> &[Vec<StartReport>] {
        &self.reports
    }

    pub fn decision_dim(&self) -> usize {
        self.n_x
    }

    pub fn training_size(&self) -> usize {
        self.gps[0].len()
    }

    /// Maps raw `[x, t]` to the unit cube.
    pub fn scale_input(&self, raw: &[f64]) -> Vec<f64> {
        let d = self.lower.len();
        raw.iter().enumerate().map(|(i, v)| (v - self.lower[i % d]) / self.scale[i % d]).collect()
    }

    /// Posterior mean and std at one raw point.
    pub fn posterior(&self, z: &[f64]) -> Result<(ObjectiveVector, Vec<f64>)> {
        let pred = self.predict_batch(z, false)?;
        Ok((ObjectiveVector::new_unchecked(pred.mean), pred.std))
    }

    /// `μ̂ − β σ̂` at one raw point.
    pub fn lcb(&self, z: &[f64], beta: f64) -> Result<ObjectiveVector> {
        if !(beta >= 0.0) {
            return Err(Error::Parameter(format!("LCB beta must be non-negative, got {beta}")));
        }
        let pred = self.predict_batch(z, false)?;
        Ok(ObjectiveVector::new_unchecked(pred.lcb(0, beta)))
    }

    pub fn to_checkpoint(&self) -> SurrogateCheckpoint {
        SurrogateCheckpoint {
            lower: self.lower.clone(),
            scale: self.scale.clone(),
            n_x: self.n_x,
            objectives: self
                .gps
                .iter()
                .map(|g| GpCheckpoint {
                    kernel: g.kernel,
                    hyper: g.hyper.clone(),
                    z: g.z.clone(),
                    y: g.y.clone(),
                    y_mean: g.y_mean,
                    y_std: g.y_std,
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &SurrogateCheckpoint) -> Result<Self> {
        let gps = c
            .objectives
            .iter()
            .map(|g| SingleGp::condition(g.kernel, g.hyper.clone(), g.z.clone(), g.y.clone(), g.y_mean, g.y_std))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(c.lower.clone(), c.scale.clone(), c.n_x, gps)
    }
}

impl SurrogateModel for GaussianSurrogate {
    fn n_obj(&self) -> usize {
        self.gps.len()
    }

    fn input_dim(&self) -> usize {
        self.lower.len()
    }

    fn predict_batch(&self, z: &[f64], want_grad: bool) -> Result<Prediction> {
        let d = self.lower.len();
        if d == 0 || z.len() % d != 0 || z.is_empty() {
            return Err(Error::Dimension(format!("query length {} is not a multiple of {d}", z.len())));
        }
        let q = z.len() / d;
        let m = self.gps.len();
        let zs = self.scale_input(z);
        let mut out = Prediction {
            q,
            m,
            d,
            mean: vec![0.0; q * m],
            std: vec![0.0; q * m],
            grad_mean: if want_grad { vec![0.0; q * m * d] } else { Vec::new() },
            grad_std: if want_grad { vec![0.0; q * m * d] } else { Vec::new() },
        };
        for (i, gp) in self.gps.iter().enumerate() {
            let sp = gp.predict_scaled(&zs, q, want_grad);
            for a in 0..q {
                out.mean[a * m + i] = gp.y_mean + gp.y_std * sp.mean[a];
                out.std[a * m + i] = gp.y_std * sp.std[a];
                if want_grad {
                    let off = (a * m + i) * d;
                    for k in 0..d {
                        let c = gp.y_std / self.scale[k];
                        out.grad_mean[off + k] = c * sp.grad_mean[a * d + k];
                        out.grad_std[off + k] = c * sp.grad_std[a * d + k];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Serializable surrogate: hyperparameters and training arrays; the
/// factorization is rebuilt on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCheckpoint {
    pub lower: Vec<f64>,
    pub scale: Vec<f64>,
    pub n_x: usize,
    pub objectives: Vec<GpCheckpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpCheckpoint {
    pub kernel: KernelKind,
    pub hyper: GpHyperparameters,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DecisionVector, EvaluationRecord, TaskParameter};

    fn archive_from(points: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> EvaluationArchive {
        let mut a = EvaluationArchive::new();
        for (i, (x, t, y)) in points.iter().enumerate() {
            a.push(EvaluationRecord {
                x: DecisionVector::new(x.clone()),
                t: TaskParameter::new(t.clone()),
                y: ObjectiveVector::new(y.clone()).unwrap(),
                iteration: 0,
                counter: i as u64 + 1,
            })
            .unwrap();
        }
        a
    }

    fn unit(d: usize) -> BoxBounds {
        BoxBounds::uniform(d, 0.0, 1.0).unwrap()
    }

    #[test]
    fn two_point_midpoint_matches_closed_form() {
        // k(a,b) = s exp(−(a−b)²/(2ℓ²)), two points at 0.25 and 0.75, query 0.5.
        let hyper = GpHyperparameters {
            lengthscales: vec![0.3],
            signal_variance: 1.3,
            noise_variance: 1e-4,
            constant_mean: 0.2,
        };
        let y = vec![1.0, -0.5];
        let gp = SingleGp::condition(KernelKind::SquaredExponential, hyper.clone(), vec![0.25, 0.75], y.clone(), 0.0, 1.0)
            .unwrap();
        let s = 1.3;
        let k12 = s * (-(0.5f64.powi(2)) / (2.0 * 0.09)).exp();
        let kq = s * (-(0.25f64.powi(2)) / (2.0 * 0.09)).exp();
        let (a, b) = (s + 1e-4, k12);
        let det = a * a - b * b;
        let inv = [[a / det, -b / det], [-b / det, a / det]];
        let r = [y[0] - 0.2, y[1] - 0.2];
        let w = [inv[0][0] * kq + inv[0][1] * kq, inv[1][0] * kq + inv[1][1] * kq];
        let mean = 0.2 + w[0] * r[0] + w[1] * r[1];
        let var = s - (kq * w[0] + kq * w[1]);
        let p = gp.predict_scaled(&[0.5], 1, false);
        assert!((p.mean[0] - mean).abs() < 1e-10, "{} vs {mean}", p.mean[0]);
        assert!((p.std[0] - var.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn kernel_is_symmetric() {
        let mut rng = RandomSource::new(1);
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            let hyper = GpHyperparameters {
                lengthscales: vec![0.3, 0.7, 1.1],
                signal_variance: 2.0,
                noise_variance: 1e-6,
                constant_mean: 0.0,
            };
            let gp = SingleGp::condition(kind, hyper, vec![0.0; 3], vec![0.0], 0.0, 1.0).unwrap();
            for _ in 0..100 {
                let a: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
                assert!((gp.kernel_value(&a, &b) - gp.kernel_value(&b, &a)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn mll_gradient_matches_finite_differences() {
        let mut rng = RandomSource::new(5);
        let n = 12;
        let d = 2;
        let z: Vec<f64> = (0..n * d).map(|_| rng.uniform()).collect();
        let y: Vec<f64> = (0..n).map(|i| (3.0 * z[i * d]).sin() + z[i * d + 1]).collect();
        let sq = pairwise_sq_diffs(&z, n, d);
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            let p = vec![(0.4f64).ln(), (0.8f64).ln(), (1.2f64).ln(), (1e-3f64).ln(), 0.1];
            let e = mll_and_grad(kind, &p, &sq, &y, true).unwrap();
            for i in 0..p.len() {
                let h = 1e-5;
                let mut pp = p.clone();
                pp[i] += h;
                let mut pm = p.clone();
                pm[i] -= h;
                let fd = (mll_and_grad(kind, &pp, &sq, &y, true).unwrap().value
                    - mll_and_grad(kind, &pm, &sq, &y, true).unwrap().value)
                    / (2.0 * h);
                assert!((fd - e.grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{kind:?} {i}: {fd} vs {}", e.grad[i]);
            }
        }
    }

    #[test]
    fn posterior_input_gradients_match_finite_differences() {
        let mut rng = RandomSource::new(6);
        let pts: Vec<_> = (0..15)
            .map(|_| {
                let x = vec![rng.uniform(), rng.uniform()];
                let t = vec![rng.uniform()];
                let y = vec![x[0] * x[0] + t[0], (4.0 * x[1]).cos() - x[0]];
                (x, t, y)
            })
            .collect();
        let a = archive_from(&pts);
        let cfg = GpConfig { steps: 30, restarts: 0, ..GpConfig::default() };
        for kernel in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            let cfg = GpConfig { kernel, ..cfg.clone() };
            let s = GaussianSurrogate::fit(&a, &unit(2), &unit(1), &cfg, &mut rng, None).unwrap();
            for _ in 0..10 {
                let z = vec![rng.uniform(), rng.uniform(), rng.uniform()];
                let p = s.predict_batch(&z, true).unwrap();
                for i in 0..2 {
                    for k in 0..3 {
                        let h = 1e-6;
                        let mut zp = z.clone();
                        zp[k] += h;
                        let mut zm = z.clone();
                        zm[k] -= h;
                        let pp = s.predict_batch(&zp, false).unwrap();
                        let pm = s.predict_batch(&zm, false).unwrap();
                        let fdm = (pp.mean[i] - pm.mean[i]) / (2.0 * h);
                        let fds = (pp.std[i] - pm.std[i]) / (2.0 * h);
                        let gm = p.grad_mean[i * 3 + k];
                        let gs = p.grad_std[i * 3 + k];
                        assert!((fdm - gm).abs() <= 1e-5 * (1.0 + fdm.abs()), "mean {fdm} vs {gm}");
                        assert!((fds - gs).abs() <= 1e-4 * (1.0 + fds.abs()), "std {fds} vs {gs}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_targets_are_recovered() {
        let mut rng = RandomSource::new(7);
        let pts: Vec<_> = (0..20).map(|_| (vec![rng.uniform()], vec![rng.uniform()], vec![3.25, -1.0])).collect();
        let a = archive_from(&pts);
        let s = GaussianSurrogate::fit(&a, &unit(1), &unit(1), &GpConfig::default(), &mut rng, None).unwrap();
        for _ in 0..50 {
            let (mu, _) = s.posterior(&[rng.uniform(), rng.uniform()]).unwrap();
            assert!((mu[0] - 3.25).abs() <= 1e-3 && (mu[1] + 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn duplicated_record_never_crashes() {
        let pts = vec![(vec![0.5], vec![0.5], vec![1.0, 2.0]); 2];
        let a = archive_from(&pts);
        let mut rng = RandomSource::new(8);
        match GaussianSurrogate::fit(&a, &unit(1), &unit(1), &GpConfig::default(), &mut rng, None) {
            Ok(s) => {
                let (mu, sd) = s.posterior(&[0.5, 0.5]).unwrap();
                assert!(mu.iter().chain(&sd).all(|v| v.is_finite()));
            }
            Err(e) => assert!(matches!(e, Error::Fit(_)), "{e}"),
        }
    }

    #[test]
    fn too_small_archive_and_negative_beta() {
        let a = archive_from(&[(vec![0.5], vec![0.5], vec![1.0, 2.0])]);
        let mut rng = RandomSource::new(9);
        let r = GaussianSurrogate::fit(&a, &unit(1), &unit(1), &GpConfig::default(), &mut rng, None);
        assert!(matches!(r, Err(Error::Size { need: 2, have: 1 })));
        let a = archive_from(&[
            (vec![0.1], vec![0.5], vec![1.0, 2.0]),
            (vec![0.9], vec![0.5], vec![2.0, 1.0]),
        ]);
        let s = GaussianSurrogate::fit(&a, &unit(1), &unit(1), &GpConfig::default(), &mut rng, None).unwrap();
        assert!(matches!(s.lcb(&[0.5, 0.5], -0.1), Err(Error::Parameter(_))));
        let mean = s.posterior(&[0.3, 0.2]).unwrap().0;
        assert_eq!(s.lcb(&[0.3, 0.2], 0.0).unwrap(), mean);
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut rng = RandomSource::new(10);
        let pts: Vec<_> = (0..10)
            .map(|_| {
                let x = vec![rng.uniform()];
                (x.clone(), vec![rng.uniform()], vec![x[0].sin(), x[0].cos()])
            })
            .collect();
        let a = archive_from(&pts);
        let cfg = GpConfig { steps: 20, restarts: 1, ..GpConfig::default() };
        let s = GaussianSurrogate::fit(&a, &unit(1), &unit(1), &cfg, &mut rng, None).unwrap();
        let json = serde_json::to_string(&s.to_checkpoint()).unwrap();
        let back: SurrogateCheckpoint = serde_json::from_str(&json).unwrap();
        let s2 = GaussianSurrogate::from_checkpoint(&back).unwrap();
        let z = [0.37, 0.61];
        assert_eq!(s.predict_batch(&z, true).unwrap().mean, s2.predict_batch(&z, true).unwrap().mean);
    }
}
