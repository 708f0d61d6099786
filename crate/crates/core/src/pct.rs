//! Principal component transformation: a per-speaker orthonormal rotation
//! onto the eigenbasis of the training feature covariance. No dimensions
//! are dropped and nothing is rescaled.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Rows are unit eigenvectors ordered by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct PctMatrix {
    dim: usize,
    // row-major d × d
    matrix: Vec<f64>,
    eigenvalues: Vec<f64>,
}

impl PctMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix,
            eigenvalues: vec![1.0; dim],
        }
    }

    /// Rebuilds a matrix from stored parts, checking shape and orthonormality.
    pub fn from_parts(dim: usize, matrix: Vec<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if dim == 0 || matrix.len() != dim * dim || eigenvalues.len() != dim {
            return Err(Error::InvalidInput(format!(
                "PCT of dimension {dim} needs {} matrix entries and {dim} eigenvalues",
                dim * dim
            )));
        }
        if matrix.iter().chain(&eigenvalues).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("PCT contains non-finite values".into()));
        }
        let pct = Self {
            dim,
            matrix,
            eigenvalues,
        };
        let err = pct.orthonormality_error();
        if err > 1e-8 {
            return Err(Error::Numeric(format!("PCT rows are not orthonormal (error {err:e})")));
        }
        Ok(pct)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn is_identity(&self) -> bool {
        (0..self.dim).all(|i| {
            self.row(i)
                .iter()
                .enumerate()
                .all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
        })
    }

    /// `max |P Pᵀ - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// `y = P x` into `out`.
    pub fn rotate_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.chunks_exact(self.dim)) {
            *o = row.iter().zip(x).map(|(p, v)| p * v).sum();
        }
    }

    pub fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.rotate_into(x, &mut out);
        out
    }
}

/// Sample covariance (denominator `M - 1`), row-major.
pub fn sample_covariance(features: &FeatureMatrix) -> Result<Vec<f64>> {
    let m = features.num_frames();
    if m < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: m });
    }
    let d = features.dim();
    let mean = features.row_means();
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for x in features.frames() {
        for ((c, v), mu) in centred.iter_mut().zip(x).zip(&mean) {
            *c = v - mu;
        }
        for i in 0..d {
            let ci = centred[i];
            for j in i..d {
                cov[i * d + j] += ci * centred[j];
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("feature covariance is not finite".into()));
    }
    Ok(cov)
}

/// Eigendecomposition of the training covariance.
///
/// Rows are sorted by (eigenvalue desc, original index asc); each row's
/// largest-magnitude entry is made positive, the lowest index winning ties.
pub fn pct_compute(features: &FeatureMatrix) -> Result<PctMatrix> {
    let d = features.dim();
    let cov = sample_covariance(features)?;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut matrix = Vec::with_capacity(d * d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &col in &order {
        let v = eig.eigenvectors.column(col);
        // entries within rounding of the largest magnitude count as tied
        let largest = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let pivot = v
            .iter()
            .position(|x| x.abs() >= largest * (1.0 - 1e-12))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        matrix.extend(v.iter().map(|x| sign * x));
        eigenvalues.push(eig.eigenvalues[col].max(0.0));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition produced non-finite vectors".into()));
    }
    Ok(PctMatrix {
        dim: d,
        matrix,
        eigenvalues,
    })
}

/// `X* = P X`, frame by frame. No re-centring.
pub fn pct_apply(pct: &PctMatrix, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if pct.dim() != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: pct.dim(),
            found: features.dim(),
        });
    }
    let d = pct.dim();
    let mut values = vec![0.0; features.as_frame_major().len()];
    for (x, out) in features.frames().zip(values.chunks_exact_mut(d)) {
        pct.rotate_into(x, out);
    }
    FeatureMatrix::from_frame_major(d, values, features.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_features(seed: u64, d: usize, m: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix: Vec<f64> = (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let frames: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                (0..d)
                    .map(|i| (0..d).map(|j| mix[i * d + j] * z[j]).sum::<f64>() + i as f64)
                    .collect()
            })
            .collect();
        FeatureMatrix::from_frames(d, frames, 7).unwrap()
    }

    #[test]
    fn closed_form_two_by_two() {
        // Four points whose sample covariance is exactly [[2,1],[1,2]].
        let h = 0.75f64.sqrt();
        let frames = [[1.5, 1.5], [-1.5, -1.5], [h, -h], [-h, h]];
        let f = FeatureMatrix::from_frames(2, frames, 0).unwrap();
        let cov = sample_covariance(&f).unwrap();
        for (c, e) in cov.iter().zip([2.0, 1.0, 1.0, 2.0]) {
            assert!((c - e).abs() < 1e-12);
        }
        let p = pct_compute(&f).unwrap();
        assert!((p.eigenvalues()[0] - 3.0).abs() < 1e-10);
        assert!((p.eigenvalues()[1] - 1.0).abs() < 1e-10);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((p.row(0)[0] - r).abs() < 1e-10 && (p.row(0)[1] - r).abs() < 1e-10);
        // second row is ±(1,-1)/√2; the tie on |entry| resolves to the first index
        assert!((p.row(1)[0] - r).abs() < 1e-10 && (p.row(1)[1] + r).abs() < 1e-10);
    }

    #[test]
    fn isotropic_gives_signed_permutation() {
        let frames = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let f = FeatureMatrix::from_frames(2, frames, 0).unwrap();
        let p = pct_compute(&f).unwrap();
        assert!(p.orthonormality_error() <= 1e-10);
        for i in 0..2 {
            let big = p.row(i).iter().filter(|v| (v.abs() - 1.0).abs() < 1e-10).count();
            assert_eq!(big, 1);
        }
    }

    #[test]
    fn decorrelates_training_data() {
        for seed in 0..10 {
            let f = random_features(seed, 6, 200);
            let p = pct_compute(&f).unwrap();
            assert!(p.orthonormality_error() <= 1e-10);
            assert!(p.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            let y = pct_apply(&p, &f).unwrap();
            let cov = sample_covariance(&y).unwrap();
            let max_diag = (0..6).map(|i| cov[i * 6 + i]).fold(0.0, f64::max);
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        assert!(cov[i * 6 + j].abs() <= 1e-8 * max_diag);
                    }
                }
            }
            let tr_x: f64 = (0..6).map(|i| sample_covariance(&f).unwrap()[i * 6 + i]).sum();
            let tr_y: f64 = (0..6).map(|i| cov[i * 6 + i]).sum();
            assert!(((tr_x - tr_y) / tr_x).abs() < 1e-8);
        }
    }

    #[test]
    fn apply_preserves_norms_and_frames() {
        let f = random_features(3, 5, 40);
        let p = pct_compute(&f).unwrap();
        let y = pct_apply(&p, &f).unwrap();
        assert_eq!(y.num_frames(), f.num_frames());
        assert_eq!(y.fingerprint(), f.fingerprint());
        for (a, b) in f.frames().zip(y.frames()) {
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((na - nb).abs() <= 1e-10 * na.max(1.0));
        }
    }

    #[test]
    fn identity_is_a_no_op() {
        let f = random_features(9, 4, 10);
        let y = pct_apply(&PctMatrix::identity(4), &f).unwrap();
        assert_eq!(y, f);
        assert!(PctMatrix::identity(4).is_identity());
    }

    #[test]
    fn rank_deficient_still_full_basis() {
        // second coordinate is an exact copy of the first
        let frames: Vec<[f64; 3]> = (0..20).map(|i| {
            let t = i as f64 * 0.3;
            [t, t, (t * 1.7).sin()]
        }).collect();
        let f = FeatureMatrix::from_frames(3, frames, 0).unwrap();
        let p = pct_compute(&f).unwrap();
        assert_eq!(p.eigenvalues().len(), 3);
        assert!(p.eigenvalues()[2] >= 0.0 && p.eigenvalues()[2] < 1e-12);
        assert!(p.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn errors() {
        let single = FeatureMatrix::from_frame_major(2, vec![1.0, 2.0], 0).unwrap();
        assert!(matches!(pct_compute(&single), Err(Error::TooFewFrames { .. })));
        let f = random_features(1, 3, 10);
        assert!(matches!(
            pct_apply(&PctMatrix::identity(2), &f),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(PctMatrix::from_parts(2, vec![1.0, 1.0, 0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn deterministic() {
        let f = random_features(5, 8, 100);
        assert_eq!(pct_compute(&f).unwrap(), pct_compute(&f).unwrap());
    }
}
