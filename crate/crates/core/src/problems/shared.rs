//! Multi-objective design with shared components: the shared variables of a
//! base problem become the task parameter of a derived parametric problem.

use std::sync::Arc;

use super::{ParametricProblem, ProblemDefinition};
use crate::error::{Error, Result};
use crate::types::BoxBounds;

/// Partition of a base problem's variables into shared (task) and free
/// (decision) indices. Indices are zero-based.
#[derive(Clone, Debug)]
pub struct SharedComponentSpec {
    pub base: ParametricProblem,
    pub shared: Vec<usize>,
}

impl SharedComponentSpec {
    pub fn new(base: ParametricProblem, shared: Vec<usize>) -> Self {
        Self { base, shared }
    }

    /// Checks the partition and returns the free indices in ascending order.
    pub fn free_indices(&self) -> Result<Vec<usize>> {
        let n_total = self.base.n();
        let mut seen = vec![false; n_total];
        for &i in &self.shared {
            if i >= n_total {
                return Err(Error::Spec(format!("shared index {i} out of range for {n_total} variables")));
            }
            if seen[i] {
                return Err(Error::Spec(format!("shared index {i} listed twice")));
            }
            seen[i] = true;
        }
        if self.shared.is_empty() {
            return Err(Error::Spec("at least one variable must be shared".into()));
        }
        let free: Vec<usize> = (0..n_total).filter(|&i| !seen[i]).collect();
        if free.is_empty() {
            return Err(Error::Spec("at least one variable must remain free".into()));
        }
        Ok(free)
    }
}

struct SharedWrapper {
    name: String,
    base: Arc<dyn ProblemDefinition>,
    shared: Vec<usize>,
    free: Vec<usize>,
    decision: BoxBounds,
    parameter: BoxBounds,
}

impl SharedWrapper {
    fn merge(&self, x: &[f64], t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut full = vec![0.0; self.shared.len() + self.free.len()];
        for (v, &i) in x.iter().zip(&self.free) {
            full[i] = *v;
        }
        for (v, &i) in t.iter().zip(&self.shared) {
            full[i] = *v;
        }
        (full, t[self.shared.len()..].to_vec())
    }
}

impl ProblemDefinition for SharedWrapper {
    fn name(&self) -> &str {
        &self.name
    }
    fn n_obj(&self) -> usize {
        self.base.n_obj()
    }
    fn decision_bounds(&self) -> &BoxBounds {
        &self.decision
    }
    fn parameter_bounds(&self) -> &BoxBounds {
        &self.parameter
    }
    fn objectives(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let (full, base_t) = self.merge(x, t);
        self.base.objectives(&full, &base_t)
    }
}

/// Wraps a base problem so that `x_free` is the decision vector and
/// `[x_shared, t_base]` is the task parameter. The wrapped problem shares the
/// base problem's evaluation counters: one wrapped evaluation is one base
/// evaluation.
pub fn wrap_shared(spec: &SharedComponentSpec) -> Result<ParametricProblem> {
    let free = spec.free_indices()?;
    let base_dec = spec.base.decision_bounds();
    let pick = |idx: &[usize]| BoxBounds {
        lower: idx.iter().map(|&i| base_dec.lower[i]).collect(),
        upper: idx.iter().map(|&i| base_dec.upper[i]).collect(),
    };
    let decision = pick(&free);
    let parameter = pick(&spec.shared).concat(spec.base.parameter_bounds());
    let label: Vec<String> = spec.shared.iter().map(|i| format!("x{}", i + 1)).collect();
    let wrapper = SharedWrapper {
        name: format!("{}[shared:{}]", spec.base.name(), label.join(",")),
        base: spec.base.definition().clone(),
        shared: spec.shared.clone(),
        free,
        decision,
        parameter,
    };
    Ok(ParametricProblem::sharing_counters(Arc::new(wrapper), &spec.base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Zdt1;
    use crate::sampling::RandomSource;

    fn base(n: usize) -> ParametricProblem {
        ParametricProblem::new(Zdt1::new(n))
    }

    #[test]
    fn partition_arithmetic() {
        let w = wrap_shared(&SharedComponentSpec::new(base(2), vec![0])).unwrap();
        assert_eq!((w.n(), w.p()), (1, 1));
        let w = wrap_shared(&SharedComponentSpec::new(base(4), vec![0, 1])).unwrap();
        assert_eq!((w.n(), w.p()), (2, 2));
    }

    #[test]
    fn invalid_partitions() {
        for shared in [vec![4], vec![], vec![0, 1, 2, 3], vec![1, 1]] {
            let r = wrap_shared(&SharedComponentSpec::new(base(4), shared.clone()));
            assert!(matches!(r, Err(Error::Spec(_))), "{shared:?}");
        }
    }

    #[test]
    fn wrapped_equals_merged_base_evaluation() {
        let b = base(4);
        let w = wrap_shared(&SharedComponentSpec::new(b.clone(), vec![3, 1])).unwrap();
        let mut rng = RandomSource::new(8);
        for _ in 0..20 {
            let xp = vec![rng.uniform(), rng.uniform()];
            let beta = vec![rng.uniform(), rng.uniform()];
            // free = {0, 2}, shared = {3, 1}
            let full = vec![xp[0], beta[1], xp[1], beta[0]];
            let yw = w.evaluate(&xp.clone().into(), &beta.clone().into()).unwrap();
            let yb = b.evaluate(&full.into(), &vec![].into()).unwrap();
            assert_eq!(yw, yb);
        }
    }

    #[test]
    fn wrapped_evaluation_counts_once_on_base() {
        let b = base(3);
        let w = wrap_shared(&SharedComponentSpec::new(b.clone(), vec![1])).unwrap();
        w.evaluate(&vec![0.1, 0.2].into(), &vec![0.3].into()).unwrap();
        assert_eq!(b.evaluation_count(), 1);
        assert_eq!(w.evaluation_count(), 1);
    }
}
