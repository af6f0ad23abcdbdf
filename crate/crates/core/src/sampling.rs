//! Seeded random sampling: simplex preferences, task parameters and
//! Latin-hypercube designs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::types::{BoxBounds, DecisionVector, PreferenceVector, TaskParameter};

/// Deterministic random stream. Identical seeds give identical sequences on
/// every platform (ChaCha8).
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn derive(&self, stream: u64) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        (lo + (hi - lo) * self.uniform()).min(hi)
    }

    pub fn exponential(&mut self) -> f64 {
        self.rng.sample(Exp1)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// Uniform sample on the (m-1)-simplex via normalized exponential draws
/// (flat Dirichlet).
pub fn sample_simplex(rng: &mut RandomSource, m: usize) -> Result<PreferenceVector> {
    if m < 2 {
        return Err(Error::Dimension(format!("simplex needs m >= 2, got {m}")));
    }
    let mut w: Vec<f64> = (0..m).map(|_| rng.exponential()).collect();
    let mut sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        // All draws underflowed to zero; fall back to the barycenter.
        w.iter_mut().for_each(|v| *v = 1.0);
        sum = m as f64;
    }
    w.iter_mut().for_each(|v| *v /= sum);
    Ok(PreferenceVector::new_unchecked(w))
}

/// Uniform draw over the parameter box.
pub fn sample_task(rng: &mut RandomSource, bounds: &BoxBounds) -> Result<TaskParameter> {
    bounds.validate()?;
    Ok(TaskParameter::new(sample_box(rng, bounds)))
}

/// Uniform draw over the decision box.
pub fn sample_decision(rng: &mut RandomSource, bounds: &BoxBounds) -> Result<DecisionVector> {
    bounds.validate()?;
    Ok(DecisionVector::new(sample_box(rng, bounds)))
}

fn sample_box(rng: &mut RandomSource, bounds: &BoxBounds) -> Vec<f64> {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(&lo, &hi)| rng.uniform_range(lo, hi))
        .collect()
}

/// Latin-hypercube design over the joint `decision × parameter` box: every
/// dimension's marginal has exactly one point per stratum of width
/// `(ub - lb) / n_points`.
pub fn space_filling_init(
    rng: &mut RandomSource,
    n_points: usize,
    decision: &BoxBounds,
    parameter: &BoxBounds,
) -> Result<Vec<(DecisionVector, TaskParameter)>> {
    if n_points == 0 {
        return Err(Error::Parameter("space-filling design needs at least one point".into()));
    }
    decision.validate()?;
    parameter.validate()?;
    let joint = decision.concat(parameter);
    if joint.dim() == 0 {
        return Err(Error::Bound("space-filling design over an empty box".into()));
    }
    let n = decision.dim();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(joint.dim());
    for d in 0..joint.dim() {
        let mut strata: Vec<usize> = (0..n_points).collect();
        rng.shuffle(&mut strata);
        let (lo, hi) = (joint.lower[d], joint.upper[d]);
        let width = hi - lo;
        let col = strata
            .into_iter()
            .map(|s| {
                let u = (s as f64 + rng.uniform()) / n_points as f64;
                (lo + u * width).min(hi)
            })
            .collect();
        columns.push(col);
    }
    Ok((0..n_points)
        .map(|i| {
            let x: Vec<f64> = columns[..n].iter().map(|c| c[i]).collect();
            let t: Vec<f64> = columns[n..].iter().map(|c| c[i]).collect();
            (DecisionVector::new(x), TaskParameter::new(t))
        })
        .collect())
}

/// `k` preference vectors spread over the simplex: an even grid for m = 2,
/// a thinned simplex lattice for m >= 3.
pub fn preference_grid(m: usize, k: usize) -> Result<Vec<PreferenceVector>> {
    if m < 2 {
        return Err(Error::Dimension(format!("simplex needs m >= 2, got {m}")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == 1 {
        return Ok(vec![PreferenceVector::new_unchecked(vec![1.0 / m as f64; m])]);
    }
    if m == 2 {
        return Ok((0..k)
            .map(|i| {
                let a = i as f64 / (k - 1) as f64;
                PreferenceVector::new_unchecked(vec![a, 1.0 - a])
            })
            .collect());
    }
    let lattice = simplex_lattice(m, k);
    Ok(thin_evenly(lattice, k)
        .into_iter()
        .map(PreferenceVector::new_unchecked)
        .collect())
}

/// Das-Dennis lattice with the smallest number of divisions giving at least
/// `min_points` points.
pub(crate) fn simplex_lattice(m: usize, min_points: usize) -> Vec<Vec<f64>> {
    let mut h = 1;
    while binomial(h + m - 1, m - 1) < min_points {
        h += 1;
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; m];
    lattice_rec(m, h, 0, h, &mut current, &mut out);
    out.into_iter()
        .map(|c| c.into_iter().map(|v| v as f64 / h as f64).collect())
        .collect()
}

fn lattice_rec(m: usize, h: usize, idx: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if idx == m - 1 {
        cur[idx] = left;
        out.push(cur.clone());
        return;
    }
    for v in (0..=left).rev() {
        cur[idx] = v;
        lattice_rec(m, h, idx + 1, left - v, cur, out);
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

pub(crate) fn thin_evenly<T: Clone>(items: Vec<T>, k: usize) -> Vec<T> {
    let n = items.len();
    if k >= n {
        return items;
    }
    (0..k)
        .map(|i| items[if k == 1 { 0 } else { i * (n - 1) / (k - 1) }].clone())
        .collect()
}
