//! Exact hypervolume (m = 2, 3), hypervolume improvement, candidate pools
//! drawn from the parametric model, and greedy batch selection.

use crate::error::{Error, Result};
use crate::pareto::nondominated_indices;
use crate::psmodel::{ForwardWorkspace, ParametricPsModel};
use crate::sampling::{sample_simplex, RandomSource};
use crate::surrogate::SurrogateModel;
use crate::trainer::TaskDistribution;
use crate::types::{DecisionVector, EvaluationArchive, PreferenceVector, TaskParameter};

pub const DEFAULT_POOL_SIZE: usize = 1000;
/// Fraction of the objective span added beyond the worst value.
pub const REFERENCE_MARGIN: f64 = 0.1;

fn strictly_inside(p: &[f64], r: &[f64]) -> bool {
    p.iter().zip(r).all(|(a, b)| a < b)
}

fn check_dims<P: AsRef<[f64]>>(points: &[P], r: &[f64]) -> Result<()> {
    if r.len() > 3 {
        return Err(Error::Unsupported(format!("exact hypervolume for {} objectives", r.len())));
    }
    if r.len() < 2 {
        return Err(Error::Dimension("hypervolume needs at least 2 objectives".into()));
    }
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != r.len()) {
        return Err(Error::Dimension(format!(
            "point of dimension {} against reference of dimension {}",
            p.as_ref().len(),
            r.len()
        )));
    }
    Ok(())
}

/// Area dominated by 2-D points that lie strictly inside the reference box.
fn hv2d(mut pts: Vec<[f64; 2]>, r: [f64; 2]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut best = r[1];
    let mut area = 0.0;
    for p in pts {
        if p[1] < best {
            area += (r[0] - p[0]) * (best - p[1]);
            best = p[1];
        }
    }
    area
}

/// Staircase of mutually non-dominated 2-D points sorted by the first
/// coordinate (second coordinate strictly decreasing).
fn staircase_insert(stairs: &mut Vec<[f64; 2]>, p: [f64; 2]) {
    let pos = stairs.partition_point(|q| q[0] < p[0] || (q[0] == p[0] && q[1] <= p[1]));
    if pos > 0 && stairs[pos - 1][1] <= p[1] {
        return;
    }
    let mut end = pos;
    while end < stairs.len() && stairs[end][1] >= p[1] {
        end += 1;
    }
    stairs.splice(pos..end, std::iter::once(p));
}

fn staircase_area(stairs: &[[f64; 2]], r: [f64; 2]) -> f64 {
    let mut best = r[1];
    let mut area = 0.0;
    for p in stairs {
        area += (r[0] - p[0]) * (best - p[1]);
        best = p[1];
    }
    area
}

/// Slices along the third objective; each slab's cross-section is a 2-D
/// staircase maintained incrementally.
fn hv3d(mut pts: Vec<[f64; 3]>, r: [f64; 3]) -> f64 {
    pts.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let mut stairs: Vec<[f64; 2]> = Vec::new();
    let mut vol = 0.0;
    for k in 0..pts.len() {
        staircase_insert(&mut stairs, [pts[k][0], pts[k][1]]);
        let top = if k + 1 < pts.len() { pts[k + 1][2] } else { r[2] };
        let h = top - pts[k][2];
        if h > 0.0 {
            vol += h * staircase_area(&stairs, [r[0], r[1]]);
        }
    }
    vol
}

/// Lebesgue measure of the region dominated by `points` and bounded by `r`.
/// Points that do not strictly dominate `r` contribute nothing.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], r: &[f64]) -> Result<f64> {
    check_dims(points, r)?;
    let inside = points.iter().map(|p| p.as_ref()).filter(|p| strictly_inside(p, r));
    Ok(match r.len() {
        2 => hv2d(inside.map(|p| [p[0], p[1]]).collect(), [r[0], r[1]]),
        _ => hv3d(inside.map(|p| [p[0], p[1], p[2]]).collect(), [r[0], r[1], r[2]]),
    })
}

/// `HV(front ∪ new) − HV(front)`, clamped at zero against rounding.
pub fn hvi<P: AsRef<[f64]>, Q: AsRef<[f64]>>(new_points: &[P], front: &[Q], r: &[f64]) -> Result<f64> {
    check_dims(new_points, r)?;
    let base = hypervolume(front, r)?;
    let mut all: Vec<&[f64]> = front.iter().map(|p| p.as_ref()).collect();
    all.extend(new_points.iter().map(|p| p.as_ref()));
    Ok((hypervolume(&all, r)? - base).max(0.0))
}

/// Improvement from a single point: its box minus the part of the box the
/// front already covers.
pub fn hvi_point<Q: AsRef<[f64]>>(c: &[f64], front: &[Q], r: &[f64]) -> Result<f64> {
    check_dims(&[c], r)?;
    check_dims(front, r)?;
    if !strictly_inside(c, r) {
        return Ok(0.0);
    }
    let boxv: f64 = c.iter().zip(r).map(|(a, b)| b - a).product();
    let clipped: Vec<Vec<f64>> = front
        .iter()
        .map(|y| y.as_ref().iter().zip(c).map(|(a, b)| a.max(*b)).collect::<Vec<f64>>())
        .filter(|y| strictly_inside(y, r))
        .collect();
    let gain = boxv - hypervolume(&clipped, r)?;
    // Cancellation leaves ~1e-16·box of noise on fully covered points.
    Ok(if gain <= 1e-12 * boxv { 0.0 } else { gain })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub x: DecisionVector,
    pub t: TaskParameter,
    pub lambda: PreferenceVector,
    /// LCB prediction of the objectives.
    pub predicted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CandidatePool {
    pub entries: Vec<Candidate>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Samples `size` (task, preference) pairs, maps them through the model and
/// attaches LCB predictions.
pub fn build_pool(
    model: &ParametricPsModel,
    surrogate: &dyn SurrogateModel,
    dist: &TaskDistribution,
    size: usize,
    batch: usize,
    beta: f64,
    rng: &mut RandomSource,
) -> Result<CandidatePool> {
    if size < batch {
        return Err(Error::Parameter(format!("pool size {size} is smaller than batch size {batch}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("LCB beta must be non-negative, got {beta}")));
    }
    let (n, p, m) = (model.n(), model.p(), model.n_obj());
    let mut tasks = Vec::with_capacity(size * p);
    let mut prefs = Vec::with_capacity(size * m);
    for _ in 0..size {
        tasks.extend(dist.sample(rng)?.into_inner());
        prefs.extend(sample_simplex(rng, m)?.into_inner());
    }
    if size == 0 {
        return Ok(CandidatePool::default());
    }
    let mut ws = ForwardWorkspace::new();
    model.forward_batch(&tasks, &prefs, &mut ws)?;
    let mut z = Vec::with_capacity(size * (n + p));
    for a in 0..size {
        z.extend_from_slice(&ws.x[a * n..(a + 1) * n]);
        z.extend_from_slice(&tasks[a * p..(a + 1) * p]);
    }
    let pred = surrogate.predict_batch(&z, false)?;
    let entries = (0..size)
        .map(|a| {
            Ok(Candidate {
                x: DecisionVector::new(ws.x[a * n..(a + 1) * n].to_vec()),
                t: TaskParameter::new(tasks[a * p..(a + 1) * p].to_vec()),
                lambda: PreferenceVector::new(prefs[a * m..(a + 1) * m].to_vec())?,
                predicted: pred.lcb(a, beta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePool { entries })
}

/// Componentwise worst value over the observed objectives and the pool's
/// predictions, pushed out by a fraction of the span. A zero span gets a
/// margin relative to the magnitude instead.
pub fn reference_point<P: AsRef<[f64]>>(observed: &[P], pool: &CandidatePool) -> Result<Vec<f64>> {
    let mut rows = observed.iter().map(|p| p.as_ref()).chain(pool.entries.iter().map(|c| c.predicted.as_slice()));
    let first = rows.next().ok_or_else(|| Error::State("reference point of an empty set".into()))?;
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for row in rows {
        if row.len() != lo.len() {
            return Err(Error::Dimension("objective vectors of different lengths".into()));
        }
        for i in 0..row.len() {
            lo[i] = lo[i].min(row[i]);
            hi[i] = hi[i].max(row[i]);
        }
    }
    Ok(lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| {
            let span = h - l;
            let margin = if span > 0.0 { REFERENCE_MARGIN * span } else { REFERENCE_MARGIN * h.abs().max(1.0) };
            h + margin
        })
        .collect())
}

/// Which archive records form the front that candidates must improve on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FrontScope {
    #[default]
    All,
    /// Only records whose `iteration` equals the given generation.
    Generation(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Pool indices in selection order.
    pub indices: Vec<usize>,
    /// Marginal HVI of each pick at the moment it was chosen.
    pub gains: Vec<f64>,
}

/// Sequential greedy maximization of HVI over the pool.
pub fn select_batch(
    pool: &CandidatePool,
    archive: &EvaluationArchive,
    batch: usize,
    r: &[f64],
    scope: FrontScope,
) -> Result<Selection> {
    if pool.len() < batch {
        return Err(Error::Parameter(format!("pool size {} is smaller than batch size {batch}", pool.len())));
    }
    let observed: Vec<Vec<f64>> = archive
        .records()
        .filter(|rec| match scope {
            FrontScope::All => true,
            FrontScope::Generation(g) => rec.iteration == g,
        })
        .map(|rec| rec.y.to_vec())
        .collect();
    let mut front: Vec<Vec<f64>> = nondominated_indices(&observed).into_iter().map(|i| observed[i].clone()).collect();
    let mut taken = vec![false; pool.len()];
    let mut sel = Selection { indices: Vec::with_capacity(batch), gains: Vec::with_capacity(batch) };
    for _ in 0..batch {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in pool.entries.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let g = hvi_point(&c.predicted, &front, r)?;
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        let (i, g) = best.expect("pool has an untaken entry");
        taken[i] = true;
        sel.indices.push(i);
        sel.gains.push(g);
        front.push(pool.entries[i].predicted.clone());
    }
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EvaluationRecord, ObjectiveVector};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Σ over non-empty subsets of (−1)^{|S|+1} · vol(∩ boxes).
    fn inclusion_exclusion(points: &[Vec<f64>], r: &[f64]) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << n) {
            let mut corner = vec![f64::NEG_INFINITY; r.len()];
            for (j, p) in points.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    for i in 0..r.len() {
                        corner[i] = corner[i].max(p[i]);
                    }
                }
            }
            let vol: f64 = corner.iter().zip(r).map(|(c, ri)| (ri - c).max(0.0)).product();
            let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            total += sign * vol;
        }
        total
    }

    fn random_points(rng: &mut RandomSource, n: usize, m: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..m).map(|_| rng.uniform()).collect()).collect()
    }

    #[test]
    fn known_values() {
        let r = [1.1, 1.1];
        assert!(close(hypervolume(&[vec![0.0, 0.0]], &r).unwrap(), 1.21, 1e-12));
        assert!(close(hypervolume(&[vec![0.5, 0.5]], &r).unwrap(), 0.36, 1e-12));
        let two = [vec![0.5, 0.5], vec![0.25, 0.75]];
        assert!(close(hypervolume(&two, &r).unwrap(), 0.4475, 1e-12));
        assert_eq!(hypervolume::<Vec<f64>>(&[], &r).unwrap(), 0.0);
        assert!(close(hvi(&[vec![0.25, 0.75]], &[vec![0.5, 0.5]], &r).unwrap(), 0.0875, 1e-12));
        assert!(close(hvi_point(&[0.25, 0.75], &[vec![0.5, 0.5]], &r).unwrap(), 0.0875, 1e-12));
        assert_eq!(hvi(&[vec![0.6, 0.6]], &[vec![0.5, 0.5]], &r).unwrap(), 0.0);
        assert_eq!(hvi_point(&[0.6, 0.6], &[vec![0.5, 0.5]], &r).unwrap(), 0.0);
        assert_eq!(hvi(&[vec![0.5, 0.5]], &[vec![0.5, 0.5]], &r).unwrap(), 0.0);
        assert_eq!(hvi_point(&[0.5, 0.5], &[vec![0.5, 0.5]], &r).unwrap(), 0.0);
        // A cube corner at the origin.
        assert!(close(hypervolume(&[vec![0.0, 0.0, 0.0]], &[1.0, 2.0, 3.0]).unwrap(), 6.0, 1e-12));
    }

    #[test]
    fn points_outside_reference_contribute_nothing() {
        let r = [1.0, 1.0];
        assert_eq!(hypervolume(&[vec![1.0, 0.0], vec![0.5, 2.0]], &r).unwrap(), 0.0);
        assert_eq!(hvi_point(&[1.0, 0.0], &Vec::<Vec<f64>>::new(), &r).unwrap(), 0.0);
    }

    #[test]
    fn too_many_objectives_is_unsupported() {
        let e = hypervolume(&[vec![0.0; 4]], &[1.0; 4]).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
        assert!(matches!(hypervolume(&[vec![0.0; 3]], &[1.0; 2]).unwrap_err(), Error::Dimension(_)));
    }

    #[test]
    fn matches_inclusion_exclusion() {
        let mut rng = RandomSource::new(5);
        for trial in 0..300 {
            let m = 2 + trial % 2;
            let n = 1 + trial % 6;
            let pts = random_points(&mut rng, n, m);
            let r = vec![1.0; m];
            let hv = hypervolume(&pts, &r).unwrap();
            let ie = inclusion_exclusion(&pts, &r);
            assert!(close(hv, ie, 1e-12), "m={m} n={n}: {hv} vs {ie}");
        }
    }

    #[test]
    fn ties_and_duplicates_match_inclusion_exclusion() {
        let pts = vec![
            vec![0.5, 0.5, 0.5],
            vec![0.5, 0.5, 0.5],
            vec![0.5, 0.2, 0.5],
            vec![0.2, 0.5, 0.7],
            vec![0.5, 0.5, 0.1],
        ];
        let r = [1.0, 1.0, 1.0];
        assert!(close(hypervolume(&pts, &r).unwrap(), inclusion_exclusion(&pts, &r), 1e-12));
    }

    #[test]
    fn two_d_matches_monte_carlo() {
        let mut rng = RandomSource::new(8);
        for _ in 0..10 {
            let pts = random_points(&mut rng, 8, 2);
            let r = [1.0, 1.0];
            let hv = hypervolume(&pts, &r).unwrap();
            let samples = 40_000;
            let hits = (0..samples)
                .filter(|_| {
                    let u = [rng.uniform(), rng.uniform()];
                    pts.iter().any(|p| p[0] <= u[0] && p[1] <= u[1])
                })
                .count();
            let phat = hits as f64 / samples as f64;
            let sigma = (phat * (1.0 - phat) / samples as f64).sqrt();
            assert!((hv - phat).abs() <= 3.0 * sigma + 1e-9, "{hv} vs {phat} ± {sigma}");
        }
    }

    #[test]
    fn monotone_under_insertion() {
        let mut rng = RandomSource::new(9);
        for trial in 0..10_000 {
            let m = 2 + trial % 2;
            let pts = random_points(&mut rng, 1 + trial % 7, m);
            let r = vec![1.0; m];
            let base = hypervolume(&pts, &r).unwrap();
            let extra: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
            let mut more = pts.clone();
            more.push(extra);
            assert!(hypervolume(&more, &r).unwrap() >= base - 1e-15);
            // A copy pushed away from the front is dominated.
            let mut dominated = pts.clone();
            dominated.push(pts[0].iter().map(|v| v + 0.5 * (1.0 - v)).collect());
            assert!(close(hypervolume(&dominated, &r).unwrap(), base, 1e-12));
        }
    }

    fn pool_of(preds: &[Vec<f64>]) -> CandidatePool {
        CandidatePool {
            entries: preds
                .iter()
                .map(|p| Candidate {
                    x: DecisionVector::new(vec![0.0]),
                    t: TaskParameter::new(vec![0.0]),
                    lambda: PreferenceVector::new(vec![0.5, 0.5]).unwrap(),
                    predicted: p.clone(),
                })
                .collect(),
        }
    }

    fn archive_of(ys: &[Vec<f64>], iteration: usize) -> EvaluationArchive {
        let mut a = EvaluationArchive::new();
        for (k, y) in ys.iter().enumerate() {
            a.push(EvaluationRecord {
                x: DecisionVector::new(vec![0.0]),
                t: TaskParameter::new(vec![0.0]),
                y: ObjectiveVector::new(y.clone()).unwrap(),
                iteration: iteration + k,
                counter: k as u64 + 1,
            })
            .unwrap();
        }
        a
    }

    /// Step-by-step argmax of the generic HVI over the remaining entries.
    fn exhaustive(pool: &CandidatePool, observed: &[Vec<f64>], b: usize, r: &[f64]) -> Vec<usize> {
        let mut front = observed.to_vec();
        let mut picked = Vec::new();
        for _ in 0..b {
            let mut best = (usize::MAX, -1.0);
            for (i, c) in pool.entries.iter().enumerate() {
                if picked.contains(&i) {
                    continue;
                }
                let g = hvi(&[c.predicted.clone()], &front, r).unwrap();
                if g > best.1 + 1e-12 {
                    best = (i, g);
                }
            }
            picked.push(best.0);
            front.push(pool.entries[best.0].predicted.clone());
        }
        picked
    }

    #[test]
    fn greedy_matches_exhaustive_oracle() {
        let mut rng = RandomSource::new(10);
        for trial in 0..200 {
            let m = 2 + trial % 2;
            let preds = random_points(&mut rng, 2 + trial % 7, m);
            let obs = random_points(&mut rng, 1 + trial % 4, m);
            let pool = pool_of(&preds);
            let archive = archive_of(&obs, 0);
            let b = 1 + trial % 3.min(pool.len());
            let r = reference_point(&obs, &pool).unwrap();
            let sel = select_batch(&pool, &archive, b, &r, FrontScope::All).unwrap();
            assert_eq!(sel.indices, exhaustive(&pool, &obs, b, &r), "trial {trial} {:?}", sel.gains);
            let mut sorted = sel.indices.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), b);
            for w in sel.gains.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "gains increased: {:?}", sel.gains);
            }
        }
    }

    #[test]
    fn dominating_candidate_goes_first_and_ties_pick_lowest_index() {
        let pool = pool_of(&[vec![0.5, 0.5], vec![0.1, 0.1], vec![0.6, 0.4]]);
        let archive = archive_of(&[vec![0.9, 0.9]], 0);
        let r = [1.0, 1.0];
        let sel = select_batch(&pool, &archive, 1, &r, FrontScope::All).unwrap();
        assert_eq!(sel.indices, vec![1]);
        let flat = pool_of(&[vec![2.0, 2.0], vec![3.0, 3.0]]);
        let sel = select_batch(&flat, &archive, 2, &r, FrontScope::All).unwrap();
        assert_eq!(sel.indices, vec![0, 1]);
        assert_eq!(sel.gains, vec![0.0, 0.0]);
        assert_eq!(select_batch(&flat, &archive, 0, &r, FrontScope::All).unwrap().indices, Vec::<usize>::new());
        assert!(select_batch(&flat, &archive, 3, &r, FrontScope::All).is_err());
    }

    #[test]
    fn generation_scope_ignores_older_records() {
        // Record at iteration 0 dominates the candidate; record at iteration 1 does not.
        let archive = archive_of(&[vec![0.1, 0.1], vec![0.8, 0.8]], 0);
        let pool = pool_of(&[vec![0.5, 0.5]]);
        let r = [1.0, 1.0];
        let all = select_batch(&pool, &archive, 1, &r, FrontScope::All).unwrap();
        let current = select_batch(&pool, &archive, 1, &r, FrontScope::Generation(1)).unwrap();
        assert_eq!(all.gains[0], 0.0);
        assert!(close(current.gains[0], 0.25 - 0.04, 1e-12));
    }

    #[test]
    fn reference_point_margin() {
        let obs = vec![vec![0.0, 1.0], vec![1.0, 3.0]];
        let pool = pool_of(&[vec![2.0, 1.0]]);
        let r = reference_point(&obs, &pool).unwrap();
        assert!(close(r[0], 2.2, 1e-12) && close(r[1], 3.2, 1e-12));
        let single = reference_point(&[vec![2.0, -3.0]], &CandidatePool::default()).unwrap();
        assert!(close(single[0], 2.2, 1e-12) && close(single[1], -2.7, 1e-12));
        assert!(reference_point::<Vec<f64>>(&[], &CandidatePool::default()).is_err());
    }

    proptest! {
        #[test]
        fn hvi_point_equals_difference(pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 0..6),
                                       c in prop::collection::vec(0.0f64..1.0, 3)) {
            let r = [1.0, 1.0, 1.0];
            let a = hvi_point(&c, &pts, &r).unwrap();
            let b = hvi(&[c.clone()], &pts, &r).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn selection_is_deterministic(seed in 0u64..1000) {
            let mut rng = RandomSource::new(seed);
            let pool = pool_of(&random_points(&mut rng, 6, 2));
            let archive = archive_of(&random_points(&mut rng, 3, 2), 0);
            let r = [1.5, 1.5];
            let a = select_batch(&pool, &archive, 3, &r, FrontScope::All).unwrap();
            let b = select_batch(&pool, &archive, 3, &r, FrontScope::All).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
