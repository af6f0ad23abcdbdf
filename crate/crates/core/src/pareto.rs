//! Pareto dominance (minimization).

use crate::types::ObjectiveVector;

/// `a` dominates `b`: no worse in every objective and strictly better in one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Indices of the points not dominated by any other input point, in input order.
pub fn nondominated_indices<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| j != i && dominates(q.as_ref(), points[i].as_ref()))
        })
        .collect()
}

/// The points not dominated by any other input point, in input order.
/// Duplicated points do not dominate each other, so all copies survive.
pub fn nondominated_filter(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    nondominated_indices(points)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}
