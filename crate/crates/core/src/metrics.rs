//! Quality indicators: normalized hypervolume, IGD, MIGD and MHV.

use serde::{Deserialize, Serialize};

use crate::acquisition::hypervolume;
use crate::error::{Error, Result};
use crate::problems::ParametricProblem;

/// Reference coordinate of normalized hypervolume in every objective.
pub const NORMALIZED_REFERENCE: f64 = 1.1;
/// Analytic-front resolution used to locate ideal and nadir points.
pub const NORMALIZATION_FRONT_SIZE: usize = 10_000;
/// Reference-front resolution for IGD.
pub const IGD_FRONT_SIZE: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub ideal: Vec<f64>,
    pub nadir: Vec<f64>,
}

impl NormalizationSpec {
    pub fn new(ideal: Vec<f64>, nadir: Vec<f64>) -> Result<Self> {
        if ideal.len() != nadir.len() || ideal.is_empty() {
            return Err(Error::Dimension("ideal and nadir must have the same non-zero length".into()));
        }
        if ideal.iter().zip(&nadir).any(|(i, n)| !(n > i) || !n.is_finite() || !i.is_finite()) {
            return Err(Error::Domain(format!("degenerate normalization: ideal {ideal:?}, nadir {nadir:?}")));
        }
        Ok(Self { ideal, nadir })
    }

    /// Componentwise min and max of a front.
    pub fn from_front<P: AsRef<[f64]>>(front: &[P]) -> Result<Self> {
        let first = front.first().ok_or_else(|| Error::Domain("normalization from an empty front".into()))?;
        let mut ideal = first.as_ref().to_vec();
        let mut nadir = ideal.clone();
        for y in front {
            for (i, v) in y.as_ref().iter().enumerate() {
                ideal[i] = ideal[i].min(*v);
                nadir[i] = nadir[i].max(*v);
            }
        }
        Self::new(ideal, nadir)
    }

    /// From the problem's analytic front at `t`.
    pub fn for_problem(problem: &ParametricProblem, t: &[f64]) -> Result<Self> {
        Self::from_front(&problem.analytic_front(t, NORMALIZATION_FRONT_SIZE)?)
    }

    pub fn normalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.ideal.iter().zip(&self.nadir)).map(|(v, (i, n))| (v - i) / (n - i)).collect()
    }
}

/// Hypervolume of the normalized points against `(1.1, …, 1.1)`.
pub fn normalized_hv<P: AsRef<[f64]>>(points: &[P], spec: &NormalizationSpec) -> Result<f64> {
    let m = spec.ideal.len();
    let normalized: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            if p.as_ref().len() != m {
                return Err(Error::Dimension("point and normalization differ in length".into()));
            }
            Ok(spec.normalize(p.as_ref()))
        })
        .collect::<Result<_>>()?;
    hypervolume(&normalized, &vec![NORMALIZED_REFERENCE; m])
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from each reference point to its nearest approximation point.
pub fn igd<P: AsRef<[f64]>, Q: AsRef<[f64]>>(reference: &[P], approx: &[Q]) -> Result<f64> {
    if reference.is_empty() || approx.is_empty() {
        return Err(Error::Domain("IGD needs non-empty reference and approximation sets".into()));
    }
    let total: f64 = reference
        .iter()
        .map(|r| approx.iter().map(|a| distance(r.as_ref(), a.as_ref())).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(total / reference.len() as f64)
}

pub fn migd(per_step: &[f64]) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::Domain("MIGD of an empty sequence".into()));
    }
    Ok(per_step.iter().sum::<f64>() / per_step.len() as f64)
}

/// Mean over time of each front's hypervolume against its own reference.
pub fn mhv<P: AsRef<[f64]>>(fronts: &[Vec<P>], refs: &[Vec<f64>]) -> Result<f64> {
    if fronts.len() != refs.len() {
        return Err(Error::Dimension(format!("{} fronts but {} reference points", fronts.len(), refs.len())));
    }
    if fronts.is_empty() {
        return Err(Error::Domain("MHV of an empty sequence".into()));
    }
    let mut total = 0.0;
    for (f, r) in fronts.iter().zip(refs) {
        total += hypervolume(f, r)?;
    }
    Ok(total / fronts.len() as f64)
}

/// Componentwise maximum of a front.
pub fn front_max<P: AsRef<[f64]>>(front: &[P]) -> Result<Vec<f64>> {
    Ok(NormalizationSpec::from_front(front)?.nadir)
}
