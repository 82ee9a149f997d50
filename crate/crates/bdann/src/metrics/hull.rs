//! Convex-hull membership via linear feasibility.
//!
//! A query q is inside the hull of points p_1..p_n iff some λ ≥ 0 with
//! Σλ_i = 1 satisfies Σλ_i p_i = q. That feasibility question is answered
//! with a phase-1 simplex (Bland's rule, so it terminates); no explicit
//! hull is ever built, which keeps higher dimensions cheap.

use crate::error::{Error, Result};
use crate::metrics::pca::jacobi_eigen;

/// Feasibility tolerance: residual artificial mass below this means inside.
const FEAS_TOL: f64 = 1e-9;
/// Pivot tolerance.
const PIV_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HullMembership {
    pub inside: Vec<bool>,
    /// True when the training points do not span the full feature space;
    /// membership is then decided within their affine hull.
    pub degenerate: bool,
    /// Affine rank of the training set.
    pub rank: usize,
}

/// Tests each query point for membership in the convex hull of the
/// training rows.
pub fn hull_membership(train: &[Vec<f64>], query: &[Vec<f64>]) -> Result<HullMembership> {
    if train.is_empty() {
        return Err(Error::Degenerate("hull of an empty training set".into()));
    }
    let d = train[0].len();
    if d == 0 {
        return Err(Error::Shape("points need at least one coordinate".into()));
    }
    if train.iter().any(|p| p.len() != d) || query.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("points disagree on dimension".into()));
    }
    let rank = affine_rank(train, d);
    let inside = query
        .iter()
        .map(|q| in_hull(train, q))
        .collect::<Result<Vec<bool>>>()?;
    Ok(HullMembership {
        inside,
        degenerate: rank < d,
        rank,
    })
}

fn affine_rank(points: &[Vec<f64>], d: usize) -> usize {
    if points.len() < 2 {
        return 0;
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    let (eigvals, _) = jacobi_eigen(&cov).expect("covariance is square");
    let max = eigvals.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return 0;
    }
    eigvals.iter().filter(|&&l| l > 1e-9 * max).count()
}

/// Phase-1 simplex feasibility for Σλp = q, Σλ = 1, λ ≥ 0.
fn in_hull(train: &[Vec<f64>], q: &[f64]) -> Result<bool> {
    let n = train.len();
    let d = q.len();
    let m = d + 1;
    // Rows: d coordinate constraints plus the affine constraint; columns:
    // n lambdas, m artificials, then the right-hand side.
    let cols = n + m + 1;
    let mut t = vec![vec![0.0; cols]; m];
    for i in 0..d {
        for (j, p) in train.iter().enumerate() {
            t[i][j] = p[i];
        }
        t[i][cols - 1] = q[i];
    }
    for j in 0..n {
        t[d][j] = 1.0;
    }
    t[d][cols - 1] = 1.0;
    // Nonnegative right-hand sides.
    for row in t.iter_mut() {
        if row[cols - 1] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
    // Artificial columns and starting basis.
    let mut basis = Vec::with_capacity(m);
    for (i, row) in t.iter_mut().enumerate() {
        row[n + i] = 1.0;
        basis.push(n + i);
    }
    // Objective row for min Σ artificials, expressed over non-basic columns:
    // obj[j] = -Σ_i t[i][j] for the lambda columns, 0 for artificials.
    let mut obj = vec![0.0; cols];
    for j in 0..n {
        let s: f64 = t.iter().map(|row| row[j]).sum();
        obj[j] = -s;
    }
    obj[cols - 1] = -t.iter().map(|row| row[cols - 1]).sum::<f64>();

    let max_iters = 50 * (n + m) + 1000;
    for _ in 0..max_iters {
        // Bland: entering column = smallest index with negative cost.
        let mut enter = None;
        for (j, &c) in obj.iter().enumerate().take(cols - 1) {
            if c < -PIV_TOL {
                enter = Some(j);
                break;
            }
        }
        let Some(enter) = enter else {
            // Optimal: feasible iff no artificial mass remains.
            return Ok(-obj[cols - 1] <= FEAS_TOL);
        };
        // Ratio test; Bland tie-break on the smallest basis label.
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[enter] > PIV_TOL {
                let ratio = row[cols - 1] / row[enter];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - PIV_TOL
                            || ((ratio - br).abs() <= PIV_TOL && basis[i] < basis[bi])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((leave, _)) = leave else {
            // Unbounded phase-1 cannot happen with bounded artificials;
            // treat as numerically stuck.
            return Err(Error::Degenerate(
                "feasibility solve failed to make progress".into(),
            ));
        };
        // Pivot.
        let piv = t[leave][enter];
        for v in t[leave].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != leave && t[i][enter].abs() > 0.0 {
                let f = t[i][enter];
                let (pivot_row, row) = if i < leave {
                    let (a, b) = t.split_at_mut(leave);
                    (&b[0], &mut a[i])
                } else {
                    let (a, b) = t.split_at_mut(i);
                    (&a[leave], &mut b[0])
                };
                for (v, pv) in row.iter_mut().zip(pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        if obj[enter].abs() > 0.0 {
            let f = obj[enter];
            for (v, pv) in obj.iter_mut().zip(&t[leave]) {
                *v -= f * pv;
            }
        }
        basis[leave] = enter;
    }
    Err(Error::Degenerate(
        "feasibility solve exceeded its iteration budget".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn unit_square_membership() {
        let train = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let query = vec![
            vec![0.5, 0.5],
            vec![2.0, 2.0],
            vec![1.0, 1.0],
            vec![1.0 + 1e-6, 1.0],
            vec![0.0, 0.999],
        ];
        let r = hull_membership(&train, &query).unwrap();
        assert_eq!(r.inside, vec![true, false, true, false, true]);
        assert!(!r.degenerate);
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn training_points_are_inside_their_own_hull() {
        let mut rng = stream(41);
        let train: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = hull_membership(&train, &train).unwrap();
        assert!(r.inside.iter().all(|&b| b));
    }

    #[test]
    fn adding_training_points_never_flips_inside_to_outside() {
        let mut rng = stream(43);
        for _ in 0..10 {
            let base: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let query: Vec<Vec<f64>> = (0..15)
                .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let before = hull_membership(&base, &query).unwrap();
            let mut bigger = base.clone();
            bigger.extend(
                (0..6).map(|_| {
                    (0..3)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<f64>>()
                }),
            );
            let after = hull_membership(&bigger, &query).unwrap();
            for (b, a) in before.inside.iter().zip(&after.inside) {
                assert!(!b || *a, "inside flipped to outside");
            }
        }
    }

    #[test]
    fn rank_deficient_training_sets_are_flagged() {
        // Points on a line in R^2: degenerate, but membership within the
        // affine hull still works.
        let train = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let query = vec![
            vec![0.5, 0.5],  // on the segment
            vec![3.0, 3.0],  // on the line, outside the segment
            vec![1.0, 0.0],  // off the line
        ];
        let r = hull_membership(&train, &query).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.rank, 1);
        assert_eq!(r.inside, vec![true, false, false]);
    }

    #[test]
    fn single_point_hull() {
        let train = vec![vec![1.0, 2.0, 3.0]];
        let r = hull_membership(&train, &[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.1]]).unwrap();
        assert_eq!(r.inside, vec![true, false]);
        assert_eq!(r.rank, 0);
        assert!(r.degenerate);
    }

    #[test]
    fn agrees_with_geometric_reference_in_2d() {
        // Reference: point-in-convex-polygon via a full angular sweep. The
        // polygon is the convex hull computed by gift wrapping.
        let mut rng = stream(47);
        for _ in 0..30 {
            let train: Vec<Vec<f64>> = (0..rng.random_range(3..25))
                .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let query: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..2).map(|_| rng.random_range(-1.3..1.3)).collect())
                .collect();
            let got = hull_membership(&train, &query).unwrap();
            for (q, &flag) in query.iter().zip(&got.inside) {
                let expect = reference_inside_2d(&train, q);
                // Skip points hugging the boundary: both methods are correct
                // there to within their tolerances but may disagree.
                if let Some(expect) = expect {
                    assert_eq!(flag, expect, "query {q:?}");
                }
            }
        }
    }

    /// 2-D reference: q is inside the hull iff it is on the inner side of
    /// every directed hull edge (gift wrapping). Returns None within 1e-7 of
    /// a boundary, where tolerance conventions may differ.
    fn reference_inside_2d(train: &[Vec<f64>], q: &[f64]) -> Option<bool> {
        let hull = gift_wrap(train);
        if hull.len() < 3 {
            // Degenerate hull: fall back to distance-to-segment checks.
            return None;
        }
        let mut min_cross = f64::INFINITY;
        for i in 0..hull.len() {
            let a = &hull[i];
            let b = &hull[(i + 1) % hull.len()];
            let cross = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
            min_cross = min_cross.min(cross);
        }
        if min_cross.abs() < 1e-7 {
            None
        } else {
            Some(min_cross > 0.0)
        }
    }

    fn gift_wrap(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        // Counterclockwise convex hull; assumes no duplicated extreme point.
        let mut start = 0;
        for (i, p) in points.iter().enumerate() {
            if (p[0], p[1]) < (points[start][0], points[start][1]) {
                start = i;
            }
        }
        let mut hull = Vec::new();
        let mut current = start;
        loop {
            hull.push(points[current].clone());
            let mut next = (current + 1) % points.len();
            for i in 0..points.len() {
                if i == current {
                    continue;
                }
                let cross = (points[next][0] - points[current][0])
                    * (points[i][1] - points[current][1])
                    - (points[next][1] - points[current][1])
                        * (points[i][0] - points[current][0]);
                let d_next = (points[next][0] - points[current][0]).powi(2)
                    + (points[next][1] - points[current][1]).powi(2);
                let d_i = (points[i][0] - points[current][0]).powi(2)
                    + (points[i][1] - points[current][1]).powi(2);
                if cross < -1e-12 || (cross.abs() <= 1e-12 && d_i > d_next) {
                    next = i;
                }
            }
            current = next;
            if current == start {
                break;
            }
        }
        hull
    }
}
