//! Shared domain types: preference, task, decision and objective vectors,
//! box bounds, and the evaluation archive.

use std::collections::VecDeque;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

macro_rules! vector_newtype {
    ($(#[$attr:meta])* $name:ident) => {
        $(#[$attr])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vector_newtype!(
    /// A point on the (m-1)-simplex encoding an objective trade-off.
    PreferenceVector
);
vector_newtype!(
    /// Exogenous context vector (shared-component values or normalized time).
    TaskParameter
);
vector_newtype!(
    /// A candidate solution in the decision space.
    DecisionVector
);
vector_newtype!(
    /// Objective values of a solution, all finite.
    ObjectiveVector
);

impl PreferenceVector {
    /// Validates nonnegativity and unit sum.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Dimension("empty preference vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!(
                "preference components must be nonnegative: {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("preference sums to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub(crate) fn new_unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }
}

impl TaskParameter {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Builds a task parameter and checks it against `bounds`.
    pub fn within(values: Vec<f64>, bounds: &BoxBounds) -> Result<Self> {
        bounds.check(&values, "task parameter")?;
        Ok(Self(values))
    }
}

impl DecisionVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn within(values: Vec<f64>, bounds: &BoxBounds) -> Result<Self> {
        bounds.check(&values, "decision vector")?;
        Ok(Self(values))
    }
}

impl ObjectiveVector {
    /// Rejects non-finite components.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite objective values: {values:?}")));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl From<Vec<f64>> for TaskParameter {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<Vec<f64>> for DecisionVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// An axis-aligned box `[lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// `dim` copies of `[lo, hi]`.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn empty() -> Self {
        Self { lower: Vec::new(), upper: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Bound(format!(
                "lower has {} entries, upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Bound(format!("dimension {i}: [{lo}, {hi}] is not a valid interval")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub(crate) fn check(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{what} has length {}, expected {}",
                v.len(),
                self.dim()
            )));
        }
        if !self.contains(v) {
            return Err(Error::Domain(format!("{what} {v:?} lies outside the box")));
        }
        Ok(())
    }

    /// Width of dimension `i`, with zero-width dimensions reported as 1 so
    /// they can be used as a scale.
    pub fn scale(&self, i: usize) -> f64 {
        let w = self.upper[i] - self.lower[i];
        if w > 0.0 {
            w
        } else {
            1.0
        }
    }

    /// Concatenation `self × other`.
    pub fn concat(&self, other: &BoxBounds) -> BoxBounds {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        BoxBounds { lower, upper }
    }
}

/// One expensive evaluation `(x, t, y)` with bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: DecisionVector,
    pub t: TaskParameter,
    pub y: ObjectiveVector,
    /// BO iteration (static mode) or generation (dynamic mode) that produced it.
    pub iteration: usize,
    /// Value of the problem's evaluation counter after this evaluation.
    pub counter: u64,
}

/// Ordered set of evaluations, optionally capped first-in-first-out.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvaluationArchive {
    records: VecDeque<EvaluationRecord>,
    capacity: Option<usize>,
    dims: Option<(usize, usize, usize)>,
}

impl EvaluationArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// An archive holding at most `capacity` records; older ones are dropped first.
    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity: Some(capacity), ..Self::default() }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn push(&mut self, record: EvaluationRecord) -> Result<()> {
        let dims = (record.x.len(), record.t.len(), record.y.len());
        match self.dims {
            Some(d) if d != dims => {
                return Err(Error::Dimension(format!(
                    "record dims (n, p, m) = {dims:?} do not match archive {d:?}"
                )))
            }
            _ => self.dims = Some(dims),
        }
        if self.capacity == Some(0) {
            return Ok(());
        }
        self.records.push_back(record);
        if let Some(cap) = self.capacity {
            while self.records.len() > cap {
                self.records.pop_front();
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &EvaluationRecord> + Clone {
        self.records.iter()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.records.iter().map(|r| r.y.clone()).collect()
    }

    /// `(n, p, m)` once the first record has been pushed.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.dims
    }

    /// A new uncapped archive holding the records that satisfy `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&EvaluationRecord) -> bool) -> EvaluationArchive {
        let mut out = EvaluationArchive { dims: self.dims, ..Self::default() };
        out.records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        out
    }
}

impl FromIterator<EvaluationRecord> for EvaluationArchive {
    fn from_iter<I: IntoIterator<Item = EvaluationRecord>>(iter: I) -> Self {
        let mut a = EvaluationArchive::new();
        for r in iter {
            // Dimension mismatches are a programming error for in-memory construction.
            a.push(r).expect("inconsistent record dimensions");
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize) -> EvaluationRecord {
        EvaluationRecord {
            x: DecisionVector::new(vec![i as f64]),
            t: TaskParameter::new(vec![0.0]),
            y: ObjectiveVector::new(vec![i as f64, 1.0]).unwrap(),
            iteration: i,
            counter: i as u64 + 1,
        }
    }

    #[test]
    fn preference_validation() {
        assert!(PreferenceVector::new(vec![0.3, 0.7]).is_ok());
        assert!(PreferenceVector::new(vec![0.3, 0.6]).is_err());
        assert!(PreferenceVector::new(vec![-0.1, 1.1]).is_err());
        assert!(PreferenceVector::new(vec![]).is_err());
    }

    #[test]
    fn objective_rejects_nan() {
        assert!(ObjectiveVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ObjectiveVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn bounds_reject_inverted_interval() {
        assert!(matches!(BoxBounds::new(vec![1.0], vec![0.0]), Err(Error::Bound(_))));
        assert!(BoxBounds::new(vec![0.3], vec![0.3]).is_ok());
        let b = BoxBounds::uniform(2, 0.0, 1.0).unwrap();
        assert!(b.contains(&[0.0, 1.0]));
        assert!(!b.contains(&[0.0, 1.1]));
        assert!(!b.contains(&[0.0]));
    }

    #[test]
    fn fifo_keeps_last_records_in_order() {
        let mut a = EvaluationArchive::with_capacity(3);
        for i in 0..7 {
            a.push(rec(i)).unwrap();
        }
        let kept: Vec<usize> = a.records().map(|r| r.iteration).collect();
        assert_eq!(kept, vec![4, 5, 6]);
    }

    #[test]
    fn archive_rejects_mismatched_dims() {
        let mut a = EvaluationArchive::new();
        a.push(rec(0)).unwrap();
        let mut bad = rec(1);
        bad.y = ObjectiveVector::new(vec![1.0]).unwrap();
        assert!(matches!(a.push(bad), Err(Error::Dimension(_))));
    }
}
