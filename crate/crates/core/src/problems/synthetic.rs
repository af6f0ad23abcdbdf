//! Built-in benchmark problems with closed-form Pareto fronts.

use std::f64::consts::FRAC_PI_2;

use super::ProblemDefinition;
use crate::sampling::{simplex_lattice, thin_evenly};
use crate::types::BoxBounds;

fn linspace01(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}

/// `g·(1 − √(x1/g))`, written as `g − √(x1·g)`.
fn biconvex_f2(x1: f64, g: f64) -> f64 {
    g - (x1 * g).sqrt()
}

/// "param-biconvex": two variables, one task parameter, two objectives.
///
/// ```text
/// g  = 1 + t + (x2 − t)²
/// f1 = x1
/// f2 = g · (1 − √(x1 / g))
/// ```
///
/// Pareto set `x2 = t`; front `f2 = (1 + t) − √(f1 (1 + t))`, `f1 ∈ [0, 1]`.
#[derive(Clone, Debug)]
pub struct SynthP1 {
    decision: BoxBounds,
    parameter: BoxBounds,
}

impl SynthP1 {
    pub fn new() -> Self {
        Self {
            decision: BoxBounds { lower: vec![0.0; 2], upper: vec![1.0; 2] },
            parameter: BoxBounds { lower: vec![0.0], upper: vec![1.0] },
        }
    }
}

impl Default for SynthP1 {
    fn default() -> Self {
        Self::new()
    }
}

impl ProblemDefinition for SynthP1 {
    fn name(&self) -> &str {
        "synth-p1"
    }
    fn n_obj(&self) -> usize {
        2
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let g = 1.0 + t[0] + (x[1] - t[0]).powi(2);
        vec![x[0], biconvex_f2(x[0], g)]
    }
    fn analytic_front(&self, t: &[f64], k: usize) -> Option<Vec<Vec<f64>>> {
        let g = 1.0 + t[0];
        Some(linspace01(k).into_iter().map(|f1| vec![f1, biconvex_f2(f1, g)]).collect())
    }
}

/// "param-triobj": three variables, one task parameter, three objectives.
///
/// ```text
/// g  = 1 + t + (x3 − t)²
/// a  = π x1 / 2,  b = π x2 / 2
/// f1 = g cos(a) cos(b)
/// f2 = g cos(a) sin(b)
/// f3 = g sin(a)
/// ```
///
/// Pareto set `x3 = t`; the front is the positive octant of the sphere of
/// radius `1 + t` (concave).
#[derive(Clone, Debug)]
pub struct SynthP2 {
    decision: BoxBounds,
    parameter: BoxBounds,
}

impl SynthP2 {
    pub fn new() -> Self {
        Self {
            decision: BoxBounds { lower: vec![0.0; 3], upper: vec![1.0; 3] },
            parameter: BoxBounds { lower: vec![0.0], upper: vec![1.0] },
        }
    }
}

impl Default for SynthP2 {
    fn default() -> Self {
        Self::new()
    }
}

impl ProblemDefinition for SynthP2 {
    fn name(&self) -> &str {
        "synth-p2"
    }
    fn n_obj(&self) -> usize {
        3
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let g = 1.0 + t[0] + (x[2] - t[0]).powi(2);
        let (a, b) = (FRAC_PI_2 * x[0], FRAC_PI_2 * x[1]);
        vec![g * a.cos() * b.cos(), g * a.cos() * b.sin(), g * a.sin()]
    }
    fn analytic_front(&self, t: &[f64], k: usize) -> Option<Vec<Vec<f64>>> {
        let radius = 1.0 + t[0];
        if k == 0 {
            return Some(Vec::new());
        }
        let dirs = if k == 1 { vec![vec![1.0; 3]] } else { thin_evenly(simplex_lattice(3, k), k) };
        Some(
            dirs.into_iter()
                .map(|d| {
                    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                    d.into_iter().map(|v| radius * v / norm).collect()
                })
                .collect(),
        )
    }
}

/// "dyn-shift": `n` variables, time parameter `t ∈ [0, 1]`, two objectives.
///
/// ```text
/// G(t) = sin(π t / 2)
/// g    = 1 + Σ_{i ≥ 2} (x_i − G(t))²
/// f1   = x1
/// f2   = g · (1 − √(x1 / g))
/// ```
///
/// Pareto set `x_i = G(t)` for `i ≥ 2`; front `f2 = 1 − √f1`.
#[derive(Clone, Debug)]
pub struct SynthD1 {
    decision: BoxBounds,
    parameter: BoxBounds,
}

impl SynthD1 {
    /// # Panics
    /// If `n < 2`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "synth-d1 needs at least two variables");
        Self {
            decision: BoxBounds { lower: vec![0.0; n], upper: vec![1.0; n] },
            parameter: BoxBounds { lower: vec![0.0], upper: vec![1.0] },
        }
    }

    pub fn shift(t: f64) -> f64 {
        (FRAC_PI_2 * t).sin()
    }
}

impl ProblemDefinition for SynthD1 {
    fn name(&self) -> &str {
        "synth-d1"
    }
    fn n_obj(&self) -> usize {
        2
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let shift = Self::shift(t[0]);
        let g = 1.0 + x[1..].iter().map(|v| (v - shift).powi(2)).sum::<f64>();
        vec![x[0], biconvex_f2(x[0], g)]
    }
    fn analytic_front(&self, _t: &[f64], k: usize) -> Option<Vec<Vec<f64>>> {
        Some(linspace01(k).into_iter().map(|f1| vec![f1, 1.0 - f1.sqrt()]).collect())
    }
}

/// ZDT1 with `n` variables and no task parameter; a plain base problem for
/// shared-component wrapping.
#[derive(Clone, Debug)]
pub struct Zdt1 {
    decision: BoxBounds,
    parameter: BoxBounds,
}

impl Zdt1 {
    /// # Panics
    /// If `n < 2`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "zdt1 needs at least two variables");
        Self {
            decision: BoxBounds { lower: vec![0.0; n], upper: vec![1.0; n] },
            parameter: BoxBounds::empty(),
        }
    }
}

impl ProblemDefinition for Zdt1 {
    fn name(&self) -> &str {
        "zdt1"
    }
    fn n_obj(&self) -> usize {
        2
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], _t: &[f64]) -> Vec<f64> {
        let n = x.len();
        let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / (n - 1) as f64;
        vec![x[0], biconvex_f2(x[0], g)]
    }
    fn analytic_front(&self, _t: &[f64], k: usize) -> Option<Vec<Vec<f64>>> {
        Some(linspace01(k).into_iter().map(|f1| vec![f1, 1.0 - f1.sqrt()]).collect())
    }
}
