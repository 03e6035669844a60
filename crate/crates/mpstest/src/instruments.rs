//! Covariate standardization and the hypercube instrumental functions.
//!
//! Raw covariates are whitened by the symmetric inverse square root of
//! their sample covariance and pushed through the standard normal cdf
//! componentwise, landing in `(0, 1)^{d_x}`. Conditional moments are then
//! turned into unconditional ones with indicators of half-open hypercubes
//! `C_{a,r} = prod_u ((a_u - 1) / 2r, a_u / 2r]` at side levels
//! `r = 1..r_max`, each cell weighted by `q(r) = (r^2 + 100)^{-1} (2r)^{-d_x}`.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Covariates mapped into the unit cube, plus the transform that did it.
#[derive(Debug, Clone)]
pub struct StandardizedCovariates {
    /// n x d_x, entries in (0, 1).
    pub x: Vec<Vec<f64>>,
    /// Sample mean of the raw covariates.
    pub mean: Vec<f64>,
    /// Symmetric inverse square root of the raw sample covariance.
    pub inv_sqrt_cov: Vec<Vec<f64>>,
}

/// One hypercube cell: the integer index `a` and its side level `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub a: Vec<u32>,
    pub r: u32,
}

/// The full instrument family up to level `r_max`, in deterministic
/// lexicographic (r, a) order.
#[derive(Debug, Clone)]
pub struct InstrumentSet {
    pub r_max: u32,
    pub d_x: usize,
    pub cells: Vec<Cell>,
}

impl InstrumentSet {
    /// Statistic weight of a cell at level `r`.
    pub fn q_weight(r: u32) -> f64 {
        let r = r as f64;
        1.0 / (r * r + 100.0)
    }

    /// Combined weight `q(r) (2r)^{-d_x}` for one cell.
    pub fn cell_weight(&self, cell: &Cell) -> f64 {
        Self::q_weight(cell.r) * (2.0 * cell.r as f64).powi(-(self.d_x as i32))
    }
}

/// Whitens and maps raw covariates into `(0,1)^{d_x}`.
///
/// The sample covariance uses the `1/(n-1)` convention, and the inverse
/// square root is the symmetric (eigen) root, which makes the output
/// exactly invariant to affine transformations of the raw covariates.
pub fn standardize_covariates(raw: &[Vec<f64>]) -> Result<StandardizedCovariates> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::DegenerateSample(
            "need at least 2 rows to standardize covariates".into(),
        ));
    }
    let d = raw[0].len();
    if d == 0 {
        return Err(Error::Config("no covariates to standardize".into()));
    }
    if raw.iter().any(|r| r.len() != d) {
        return Err(Error::LengthMismatch("ragged covariate matrix".into()));
    }

    let mut mean = vec![0.0; d];
    for row in raw {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in raw {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;

    let eig = cov.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max_ev > 0.0) || min_ev < 1e-10 * max_ev {
        return Err(Error::Conditioning(format!(
            "covariate covariance is numerically singular \
             (eigenvalues in [{min_ev:.3e}, {max_ev:.3e}]); drop or combine covariates"
        )));
    }
    let mut inv_sqrt = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let scale = 1.0 / eig.eigenvalues[k].sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..d {
            for j in 0..d {
                inv_sqrt[(i, j)] += scale * v[i] * v[j];
            }
        }
    }

    let normal = Normal::standard();
    let x = raw
        .iter()
        .map(|row| {
            (0..d)
                .map(|i| {
                    let z: f64 = (0..d)
                        .map(|j| inv_sqrt[(i, j)] * (row[j] - mean[j]))
                        .sum();
                    normal.cdf(z)
                })
                .collect()
        })
        .collect();

    Ok(StandardizedCovariates {
        x,
        mean,
        inv_sqrt_cov: (0..d)
            .map(|i| (0..d).map(|j| inv_sqrt[(i, j)]).collect())
            .collect(),
    })
}

/// Indicator of `x` lying in the cell `C_{a,r}`: half-open on the left,
/// closed on the right in every coordinate.
pub fn cube_indicator(a: &[u32], r: u32, x: &[f64]) -> bool {
    debug_assert_eq!(a.len(), x.len());
    let side = 2.0 * r as f64;
    a.iter().zip(x).all(|(&au, &xu)| {
        let lo = (au - 1) as f64 / side;
        let hi = au as f64 / side;
        xu > lo && xu <= hi
    })
}

/// Enumerates all cells for `r = 1..=r_max` in lexicographic (r, a) order.
pub fn enumerate_instruments(r_max: u32, d_x: usize) -> Result<InstrumentSet> {
    if r_max < 1 {
        return Err(Error::Config("r_max must be at least 1".into()));
    }
    if d_x == 0 {
        return Err(Error::Config("hypercube instruments need d_x >= 1".into()));
    }
    let mut cells = Vec::new();
    for r in 1..=r_max {
        let side = 2 * r;
        let mut a = vec![1u32; d_x];
        'level: loop {
            cells.push(Cell { a: a.clone(), r });
            // odometer increment, last coordinate fastest
            let mut k = d_x - 1;
            loop {
                if a[k] < side {
                    a[k] += 1;
                    break;
                }
                if k == 0 {
                    break 'level;
                }
                a[k] = 1;
                k -= 1;
            }
        }
    }
    Ok(InstrumentSet { r_max, d_x, cells })
}

/// Default instrument depth: the largest `r >= 1` with
/// `(2r)^{d_x} <= sqrt(n)`, so the finest level keeps its cube count
/// below the square root of the sample size.
pub fn default_r_max(n: usize, d_x: usize) -> u32 {
    assert!(d_x >= 1, "default_r_max needs d_x >= 1");
    let fits = |r: u64| -> bool {
        // (2r)^{2 d_x} <= n, in exact integer arithmetic
        let base = 2u128 * r as u128;
        let mut acc: u128 = 1;
        for _ in 0..(2 * d_x) {
            acc = match acc.checked_mul(base) {
                Some(v) => v,
                None => return false,
            };
            if acc > n as u128 {
                return false;
            }
        }
        acc <= n as u128
    };
    let mut r = 1u64;
    while fits(r + 1) {
        r += 1;
    }
    r as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standardize_one_dim_example() {
        let raw = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let s = standardize_covariates(&raw).unwrap();
        // sample variance (n-1 convention) is 1, so the whitened values
        // are the raw ones and the output is the standard normal cdf
        assert_abs_diff_eq!(s.x[0][0], 0.158655, epsilon = 1e-6);
        assert_abs_diff_eq!(s.x[1][0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[2][0], 0.841345, epsilon = 1e-6);
    }

    #[test]
    fn row_at_mean_maps_to_half() {
        let raw = vec![vec![2.0, 7.0], vec![4.0, 3.0], vec![3.0, 5.0], vec![1.0, 1.0]];
        let s = standardize_covariates(&raw).unwrap();
        let at_mean = standardize_covariates(&raw).unwrap().mean;
        // transform the mean itself
        let normal = Normal::standard();
        let z: Vec<f64> = (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| s.inv_sqrt_cov[i][j] * (at_mean[j] - s.mean[j]))
                    .sum::<f64>()
            })
            .collect();
        for zi in z {
            assert_abs_diff_eq!(normal.cdf(zi), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_column_is_conditioning_error() {
        let raw = vec![vec![1.0, 3.0], vec![1.0, 4.0], vec![1.0, 5.0]];
        assert!(matches!(
            standardize_covariates(&raw),
            Err(Error::Conditioning(_))
        ));
    }

    #[test]
    fn affine_invariance() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let raw: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![next() * 4.0 - 2.0, next() * 4.0 - 2.0])
            .collect();
        let shifted: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| vec![3.0 * r[0] + 7.0, 3.0 * r[1] + 7.0])
            .collect();
        let a = standardize_covariates(&raw).unwrap();
        let b = standardize_covariates(&shifted).unwrap();
        for (ra, rb) in a.x.iter().zip(&b.x) {
            for (va, vb) in ra.iter().zip(rb) {
                assert_abs_diff_eq!(va, vb, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn cube_indicator_examples() {
        assert!(cube_indicator(&[1], 1, &[0.3]));
        assert!(!cube_indicator(&[1], 1, &[0.7]));
        assert!(cube_indicator(&[1, 2], 1, &[0.4, 0.8]));
        // boundary 0.5 belongs to the left cell (right-closed)
        assert!(cube_indicator(&[1], 1, &[0.5]));
        assert!(!cube_indicator(&[2], 1, &[0.5]));
    }

    #[test]
    fn enumeration_counts_and_weights() {
        let s = enumerate_instruments(1, 1).unwrap();
        assert_eq!(s.cells.len(), 2);
        for c in &s.cells {
            assert_abs_diff_eq!(s.cell_weight(c), 1.0 / 202.0, epsilon = 1e-15);
        }
        assert_eq!(enumerate_instruments(2, 1).unwrap().cells.len(), 6);
        assert_eq!(enumerate_instruments(1, 2).unwrap().cells.len(), 4);
        // per-level weights sum to (r^2 + 100)^{-1}
        let s = enumerate_instruments(3, 2).unwrap();
        for r in 1..=3u32 {
            let total: f64 = s
                .cells
                .iter()
                .filter(|c| c.r == r)
                .map(|c| s.cell_weight(c))
                .sum();
            assert_abs_diff_eq!(total, 1.0 / (r as f64 * r as f64 + 100.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn partition_property() {
        let s = enumerate_instruments(3, 2).unwrap();
        let pts = [[0.17, 0.93], [0.5, 0.5], [1.0, 1.0], [0.001, 0.999]];
        for p in pts {
            for r in 1..=3u32 {
                let hits = s
                    .cells
                    .iter()
                    .filter(|c| c.r == r && cube_indicator(&c.a, c.r, &p))
                    .count();
                assert_eq!(hits, 1, "point {p:?} at level {r}");
            }
        }
    }

    #[test]
    fn default_r_max_examples() {
        assert_eq!(default_r_max(400, 1), 10);
        assert_eq!(default_r_max(400, 2), 2);
        assert_eq!(default_r_max(4, 1), 1);
        assert_eq!(default_r_max(2, 3), 1);
        // grows without bound in n
        assert!(default_r_max(1_000_000, 1) > default_r_max(10_000, 1));
    }
}
