//! Two-component PCA with a hand-rolled Jacobi eigensolver, so projections
//! are deterministic across platforms and carry a fixed sign convention.

use crate::error::{Error, Result};

/// Fitted 2-D projection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pca2d {
    /// Column means subtracted before projecting.
    pub mean: Vec<f64>,
    /// Two orthonormal principal directions, largest variance first.
    pub components: [Vec<f64>; 2],
    /// Fraction of total variance captured by each component.
    pub explained: [f64; 2],
}

impl Pca2d {
    pub fn project(&self, rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
        let d = self.mean.len();
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != d {
                    return Err(Error::Shape(format!(
                        "row {i} has {} features, projection expects {d}",
                        row.len()
                    )));
                }
                let mut out = [0.0; 2];
                for (k, comp) in self.components.iter().enumerate() {
                    out[k] = row
                        .iter()
                        .zip(&self.mean)
                        .zip(comp)
                        .map(|((x, m), c)| (x - m) * c)
                        .sum();
                }
                Ok(out)
            })
            .collect()
    }
}

/// Fits the top two principal directions of the rows' covariance.
///
/// Sign convention: each component's largest-magnitude entry is positive.
/// Data whose covariance has rank 1 still fits; the second explained
/// fraction is then ~0. Zero total variance is rejected.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca2d> {
    if rows.len() < 3 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if d < 2 {
        return Err(Error::Shape("PCA needs at least 2 features".into()));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged rows".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for row in rows {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[i][j] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov)?;
    let total: f64 = eigvals.iter().map(|&l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "all rows identical; covariance has no spread".into(),
        ));
    }
    // Indices of the two largest eigenvalues.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));
    let mut components: [Vec<f64>; 2] = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for k in 0..2 {
        let idx = order[k];
        let mut comp: Vec<f64> = (0..d).map(|i| eigvecs[i][idx]).collect();
        // Largest-magnitude entry positive; first such index on ties.
        let mut best = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        if comp[best] < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        explained[k] = eigvals[idx].max(0.0) / total;
        components[k] = comp;
    }
    Ok(Pca2d {
        mean,
        components,
        explained,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvector matrix with eigenvectors as columns).
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = matrix.len();
    if d == 0 || matrix.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("eigensolver needs a square matrix".into()));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = matrix
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
        .max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..d).map(|i| a[i][i]).collect();
    Ok((eigvals, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn jacobi_recovers_known_eigenpairs() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1.
        let m = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(&m).unwrap();
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        assert_relative_eq!(sorted[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sorted[1], 3.0, epsilon = 1e-12);
        // Columns are orthonormal.
        for i in 0..2 {
            let norm: f64 = (0..2).map(|k| vecs[k][i] * vecs[k][i]).sum();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
        }
        let dot: f64 = (0..2).map(|k| vecs[k][0] * vecs[k][1]).sum();
        assert_relative_eq!(dot, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn components_are_orthonormal_with_positive_max_entry() {
        let mut rng = stream(31);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let pca = pca_2d(&rows).unwrap();
        for comp in &pca.components {
            let norm: f64 = comp.iter().map(|v| v * v).sum();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-10);
            let max = comp.iter().cloned().fold(f64::NEG_INFINITY, |a, b| a.max(b.abs()));
            assert!(comp.iter().any(|&v| v == max));
        }
        let dot: f64 = pca.components[0]
            .iter()
            .zip(&pca.components[1])
            .map(|(a, b)| a * b)
            .sum();
        assert_relative_eq!(dot, 0.0, epsilon = 1e-10);
        assert!(pca.explained[0] >= pca.explained[1]);
        assert!(pca.explained[0] + pca.explained[1] <= 1.0 + 1e-12);
    }

    #[test]
    fn collinear_data_has_vanishing_second_component() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![1.0 + 2.0 * t, -0.5 + 1.0 * t, 3.0 - 0.5 * t]
            })
            .collect();
        let pca = pca_2d(&rows).unwrap();
        assert_relative_eq!(pca.explained[0], 1.0, epsilon = 1e-10);
        assert!(pca.explained[1].abs() < 1e-10);
    }

    #[test]
    fn planar_data_projection_preserves_pairwise_distances() {
        // Points living in a 2-D subspace of R^4: projection is a rigid map,
        // so pairwise distances survive.
        let mut rng = stream(37);
        let b1 = [0.5, 0.5, 0.5, 0.5];
        let b2 = [0.5, -0.5, 0.5, -0.5];
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let u = rng.random_range(-3.0..3.0);
                let w = rng.random_range(-1.0..1.0);
                (0..4).map(|k| u * b1[k] + w * b2[k] + 1.0).collect()
            })
            .collect();
        let pca = pca_2d(&rows).unwrap();
        let proj = pca.project(&rows).unwrap();
        for i in (0..rows.len()).step_by(7) {
            for j in (i + 1..rows.len()).step_by(11) {
                let d_orig: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let d_proj = ((proj[i][0] - proj[j][0]).powi(2)
                    + (proj[i][1] - proj[j][1]).powi(2))
                .sqrt();
                assert_relative_eq!(d_orig, d_proj, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn identical_rows_are_rejected() {
        let rows = vec![vec![1.0, 2.0]; 10];
        assert!(pca_2d(&rows).is_err());
        assert!(pca_2d(&rows[..2]).is_err());
    }
}
