use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// One row per input point, `axes.len()` columns.
    pub points: Vec<Vec<f64>>,
    /// Unit principal axes, strongest first.
    pub axes: Vec<Vec<f64>>,
    /// Share of total variance per returned axis, descending.
    pub explained_variance_ratio: Vec<f64>,
    /// Every covariance eigenvalue, descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
    /// Fewer than the requested axes carried nonzero variance.
    pub rank_deficient: bool,
}

/// Projects centred data onto its top principal axes, taken from the
/// eigendecomposition of the sample covariance (normalised by `n - 1`).
pub fn pca_project<P: AsRef<[f64]>>(points: &[P], out_dim: usize) -> Result<Projection> {
    let n = points.len();
    if out_dim == 0 {
        return Err(Error::InvalidArgument("out_dim must be positive".into()));
    }
    if n < out_dim.max(2) {
        return Err(Error::InvalidArgument(format!(
            "need at least {} points for {out_dim} axes, got {n}",
            out_dim.max(2)
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::InvalidArgument("points differ in dimension".into()));
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        mean.iter_mut().zip(p.as_ref()).for_each(|(m, v)| *m += v / n as f64);
    }
    let centred = DMatrix::from_fn(n, dim, |i, j| points[i].as_ref()[j] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let top = eigenvalues.first().copied().unwrap_or(0.0);

    let kept = order
        .iter()
        .zip(&eigenvalues)
        .take(out_dim.min(dim))
        .filter(|(_, &l)| top > 0.0 && l > RANK_TOLERANCE * top)
        .map(|(&i, _)| i)
        .collect::<Vec<_>>();
    let axes: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let explained_variance_ratio = kept
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0) / total)
        .collect();
    let projected = (0..n)
        .map(|r| {
            axes.iter()
                .map(|axis| (0..dim).map(|j| centred[(r, j)] * axis[j]).sum())
                .collect()
        })
        .collect();
    Ok(Projection {
        points: projected,
        rank_deficient: axes.len() < out_dim,
        axes,
        explained_variance_ratio,
        eigenvalues,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_points_have_one_axis() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.axes.len(), 1);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_corners_split_variance_evenly() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let p = pca_project(&pts, 2).unwrap();
        assert!(!p.rank_deficient);
        for r in &p.explained_variance_ratio {
            assert!((r - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_equals_trailing_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let p = pca_project(&pts, 2).unwrap();
        let mut residual = 0.0;
        for (x, z) in pts.iter().zip(&p.points) {
            for j in 0..8 {
                let recon = p.mean[j] + p.axes[0][j] * z[0] + p.axes[1][j] * z[1];
                residual += (x[j] - recon).powi(2);
            }
        }
        let trailing: f64 = p.eigenvalues[2..].iter().sum::<f64>() * 49.0;
        assert!((residual - trailing).abs() < 1e-8, "{residual} vs {trailing}");
    }

    #[test]
    fn too_few_points() {
        assert!(pca_project(&[vec![1.0, 2.0]], 2).is_err());
    }
}
