//! Moment functions and their sample means over the (y, instrument) grid.
//!
//! Per observation the moment vector is
//! `m = (w (y - Ytilde)^+ g(X), w Ytilde g(X))`, with signed weight
//! `w_i = n D_i / n_1 - n (1 - D_i) / n_0`. Sample variances use the
//! `1/n` convention and are floored by `epsilon * Var(Ytilde)` on the
//! diagonal.
//!
//! The bootstrap recomputes these means thousands of times, so the
//! evaluation is organized per cell: member values are sorted once and
//! prefix sums turn each `sum w (y - Ytilde)^+` into a binary search plus
//! two fused multiplies.

use crate::error::{Error, Result};
use crate::instruments::{cube_indicator, InstrumentSet};
use crate::sample::PooledSample;

/// Tuning constants of the moment system.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MomentConfig {
    /// Covariance regularizer added as `epsilon * Var(Ytilde)`.
    pub epsilon: f64,
    /// Weight on the equality moment versus the inequalities, in (0,1).
    pub p: f64,
    /// Multiply each row's contribution by its normalized survey weight.
    pub use_weights: bool,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            epsilon: 0.05,
            p: 0.05,
            use_weights: false,
        }
    }
}

impl MomentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config("p must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Signed pooling weight: `n/n1` on outcome rows, `-n/n0` on belief rows.
pub fn signed_weight(d: bool, n1: usize, n0: usize, n: usize) -> Result<f64> {
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateSample(
            "signed weight needs both subsamples nonempty".into(),
        ));
    }
    debug_assert_eq!(n, n1 + n0);
    Ok(if d {
        n as f64 / n1 as f64
    } else {
        -(n as f64) / n0 as f64
    })
}

/// One row's moment contributions at evaluation point `y`.
pub fn moment_row(y_tilde: f64, w: f64, g_value: f64, y: f64) -> (f64, f64) {
    let pos = (y - y_tilde).max(0.0);
    (w * pos * g_value, w * y_tilde * g_value)
}

/// Per-cell sorted values with prefix sums. `values` ascending;
/// `pw[k]` = sum of the first k weights, and similarly for the other
/// accumulators (weights are the signed pooling weights).
#[derive(Debug, Clone)]
struct CellSums {
    values: Vec<f64>,
    pw: Vec<f64>,
    pwv: Vec<f64>,
    pw2: Vec<f64>,
    pw2v: Vec<f64>,
    pw2v2: Vec<f64>,
    /// y-free sums over all members
    sum_wv: f64,
    sum_w2v2: f64,
    count: usize,
}

impl CellSums {
    fn build(mut members: Vec<(f64, f64)>) -> CellSums {
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
        let m = members.len();
        let mut s = CellSums {
            values: Vec::with_capacity(m),
            pw: vec![0.0; m + 1],
            pwv: vec![0.0; m + 1],
            pw2: vec![0.0; m + 1],
            pw2v: vec![0.0; m + 1],
            pw2v2: vec![0.0; m + 1],
            sum_wv: 0.0,
            sum_w2v2: 0.0,
            count: m,
        };
        for (k, (v, w)) in members.into_iter().enumerate() {
            s.values.push(v);
            s.pw[k + 1] = s.pw[k] + w;
            s.pwv[k + 1] = s.pwv[k] + w * v;
            s.pw2[k + 1] = s.pw2[k] + w * w;
            s.pw2v[k + 1] = s.pw2v[k] + w * w * v;
            s.pw2v2[k + 1] = s.pw2v2[k] + w * w * v * v;
            s.sum_wv += w * v;
            s.sum_w2v2 += w * w * v * v;
        }
        s
    }

    /// Number of members with value strictly below `y`.
    fn below(&self, y: f64) -> usize {
        self.values.partition_point(|&v| v < y)
    }

    /// `sum_i w_i (y - v_i)^+` over members.
    fn sum_m1(&self, y: f64) -> f64 {
        let k = self.below(y);
        y * self.pw[k] - self.pwv[k]
    }

    /// `sum_i (w_i (y - v_i)^+)^2` over members.
    fn sum_m1_sq(&self, y: f64) -> f64 {
        let k = self.below(y);
        y * y * self.pw2[k] - 2.0 * y * self.pw2v[k] + self.pw2v2[k]
    }
}

/// Instrument plan: either the single constant function `g = 1` (no
/// covariates) or the hypercube family over standardized covariates.
#[derive(Debug, Clone)]
pub enum InstrumentPlan {
    Constant,
    Cubes(InstrumentSet),
}

impl InstrumentPlan {
    pub fn n_cells(&self) -> usize {
        match self {
            InstrumentPlan::Constant => 1,
            InstrumentPlan::Cubes(s) => s.cells.len(),
        }
    }

    /// Statistic weight of cell `idx` (1 for the constant instrument).
    pub fn weight(&self, idx: usize) -> f64 {
        match self {
            InstrumentPlan::Constant => 1.0,
            InstrumentPlan::Cubes(s) => s.cell_weight(&s.cells[idx]),
        }
    }
}

/// Sample moments and regularized variances over the (y, cell) grid.
#[derive(Debug, Clone)]
pub struct MomentField {
    pub y_grid: Vec<f64>,
    pub n: usize,
    pub var_ytilde: f64,
    /// Row-major `[cell][y]` inequality means.
    pub m1: Vec<Vec<f64>>,
    /// Per-cell equality means (constant in y).
    pub m2: Vec<f64>,
    /// Row-major `[cell][y]` regularized variances of the inequality moment.
    pub s11: Vec<Vec<f64>>,
    /// Per-cell regularized variances of the equality moment.
    pub s22: Vec<f64>,
    /// Cells with no member row in this sample; they contribute nothing.
    pub empty: Vec<bool>,
    /// Per-cell statistic weights, copied from the plan.
    pub weights: Vec<f64>,
}

/// Effective signed weights per row, optionally scaled by normalized
/// survey weights within each subsample.
pub fn effective_weights(sample: &PooledSample, use_weights: bool) -> Result<Vec<f64>> {
    let n = sample.n();
    let n1 = sample.n1();
    let n0 = sample.n0();
    if use_weights {
        let w1: f64 = sample.rows().iter().filter(|r| r.d).map(|r| r.weight).sum();
        let w0: f64 = sample.rows().iter().filter(|r| !r.d).map(|r| r.weight).sum();
        if w1 <= 0.0 || w0 <= 0.0 {
            return Err(Error::DegenerateSample("zero subsample weight".into()));
        }
        Ok(sample
            .rows()
            .iter()
            .map(|r| {
                if r.d {
                    n as f64 * r.weight / w1
                } else {
                    -(n as f64) * r.weight / w0
                }
            })
            .collect())
    } else {
        let base = signed_weight(true, n1, n0, n)?;
        let neg = signed_weight(false, n1, n0, n)?;
        Ok(sample.rows().iter().map(|r| if r.d { base } else { neg }).collect())
    }
}

/// Membership of each row in each cell of the plan.
///
/// For the hypercube plan, `x` must hold the standardized covariates of
/// the same rows (in `(0,1]^{d_x}`).
pub fn cell_membership(plan: &InstrumentPlan, x: Option<&[Vec<f64>]>, n: usize) -> Vec<Vec<u32>> {
    match plan {
        InstrumentPlan::Constant => vec![(0..n as u32).collect()],
        InstrumentPlan::Cubes(set) => {
            let x = x.expect("hypercube instruments need standardized covariates");
            set.cells
                .iter()
                .map(|c| {
                    (0..n)
                        .filter(|&i| cube_indicator(&c.a, c.r, &x[i]))
                        .map(|i| i as u32)
                        .collect()
                })
                .collect()
        }
    }
}

/// Core moment-field evaluation from raw ingredients. `rows` is the
/// (value, signed weight) list; `membership` indexes into it per cell.
pub fn moment_field_from_parts(
    rows: &[(f64, f64)],
    membership: &[Vec<u32>],
    weights: &[f64],
    y_grid: &[f64],
    epsilon: f64,
) -> Result<MomentField> {
    let n = rows.len();
    if y_grid.is_empty() {
        return Err(Error::Config("empty y grid".into()));
    }
    let nf = n as f64;
    let mean_v = rows.iter().map(|r| r.0).sum::<f64>() / nf;
    let var_ytilde = rows.iter().map(|r| (r.0 - mean_v).powi(2)).sum::<f64>() / nf;
    if var_ytilde <= 0.0 {
        return Err(Error::DegenerateSample(
            "pooled values are constant; the moment system is degenerate".into(),
        ));
    }
    let floor = epsilon * var_ytilde;

    let n_cells = membership.len();
    let mut field = MomentField {
        y_grid: y_grid.to_vec(),
        n,
        var_ytilde,
        m1: vec![Vec::new(); n_cells],
        m2: vec![0.0; n_cells],
        s11: vec![Vec::new(); n_cells],
        s22: vec![0.0; n_cells],
        empty: vec![false; n_cells],
        weights: weights.to_vec(),
    };

    for (c, members) in membership.iter().enumerate() {
        if members.is_empty() {
            field.empty[c] = true;
            field.m1[c] = vec![0.0; y_grid.len()];
            field.s11[c] = vec![floor; y_grid.len()];
            field.s22[c] = floor;
            continue;
        }
        let sums = CellSums::build(members.iter().map(|&i| rows[i as usize]).collect());
        field.m2[c] = sums.sum_wv / nf;
        field.s22[c] = sums.sum_w2v2 / nf - field.m2[c] * field.m2[c] + floor;
        let mut m1 = Vec::with_capacity(y_grid.len());
        let mut s11 = Vec::with_capacity(y_grid.len());
        for &y in y_grid {
            let mean = sums.sum_m1(y) / nf;
            let var = sums.sum_m1_sq(y) / nf - mean * mean;
            m1.push(mean);
            s11.push(var + floor);
        }
        field.m1[c] = m1;
        field.s11[c] = s11;
    }
    Ok(field)
}

/// Evaluates the moment field of a pooled sample over `y_grid`.
///
/// `x` carries standardized covariates when the plan uses hypercubes.
pub fn moment_field(
    sample: &PooledSample,
    plan: &InstrumentPlan,
    x: Option<&[Vec<f64>]>,
    y_grid: &[f64],
    cfg: &MomentConfig,
) -> Result<MomentField> {
    cfg.validate()?;
    let w = effective_weights(sample, cfg.use_weights)?;
    let rows: Vec<(f64, f64)> = sample
        .rows()
        .iter()
        .zip(&w)
        .map(|(r, &w)| (r.y_tilde, w))
        .collect();
    let membership = cell_membership(plan, x, sample.n());
    let weights: Vec<f64> = (0..plan.n_cells()).map(|i| plan.weight(i)).collect();
    moment_field_from_parts(&rows, &membership, &weights, y_grid, cfg.epsilon)
}
