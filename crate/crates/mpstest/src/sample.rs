//! Pooled two-sample data: realized outcomes (`D = 1`) and elicited
//! beliefs (`D = 0`) stacked into one sample, with optional survey
//! weights, covariates, belief bounds, and link identifiers.

use std::path::Path;

use crate::error::{Error, Result};

/// One observation of the pooled sample.
///
/// `y_tilde` carries the outcome when `d` is true and the belief when
/// `d` is false; both live in outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    /// Dataset indicator: `true` = outcome sample, `false` = belief sample.
    pub d: bool,
    pub y_tilde: f64,
    /// Covariate vector, length `d_x` (may be empty).
    pub x: Vec<f64>,
    /// Survey weight, strictly positive. Defaults to 1.
    pub weight: f64,
    /// Lower belief bound, only on belief rows.
    pub psi_lo: Option<f64>,
    /// Upper belief bound, only on belief rows.
    pub psi_hi: Option<f64>,
    /// Identifier linking a belief row to an outcome row, when known.
    pub link_id: Option<String>,
}

impl ObservationRow {
    pub fn new(d: bool, y_tilde: f64) -> Self {
        ObservationRow {
            d,
            y_tilde,
            x: Vec::new(),
            weight: 1.0,
            psi_lo: None,
            psi_hi: None,
            link_id: None,
        }
    }

    pub fn with_x(mut self, x: Vec<f64>) -> Self {
        self.x = x;
        self
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.psi_lo = Some(lo);
        self.psi_hi = Some(hi);
        self
    }
}

/// The validated pooled sample.
#[derive(Debug, Clone)]
pub struct PooledSample {
    rows: Vec<ObservationRow>,
    d_x: usize,
    has_weights: bool,
    has_bounds: bool,
    has_links: bool,
}

impl PooledSample {
    /// Validates and wraps a set of rows.
    ///
    /// Requires at least one row in each subsample, finite values,
    /// strictly positive finite weights, consistent covariate lengths,
    /// and `psi_lo <= psi_hi` on belief rows carrying bounds.
    pub fn new(rows: Vec<ObservationRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::DegenerateSample("empty sample".into()));
        }
        let d_x = rows[0].x.len();
        let mut n1 = 0usize;
        let mut n0 = 0usize;
        let mut has_weights = false;
        let mut has_bounds = false;
        let mut has_links = false;
        for (i, r) in rows.iter().enumerate() {
            if !r.y_tilde.is_finite() {
                return Err(Error::Validation {
                    row: i,
                    msg: format!("non-finite value {}", r.y_tilde),
                });
            }
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::Validation {
                    row: i,
                    msg: format!("nonpositive or non-finite weight {}", r.weight),
                });
            }
            if r.x.len() != d_x {
                return Err(Error::Validation {
                    row: i,
                    msg: format!("covariate length {} != {}", r.x.len(), d_x),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    row: i,
                    msg: "non-finite covariate".into(),
                });
            }
            if (r.psi_lo.is_some() || r.psi_hi.is_some()) && r.d {
                return Err(Error::Validation {
                    row: i,
                    msg: "belief bounds on an outcome row".into(),
                });
            }
            if let (Some(lo), Some(hi)) = (r.psi_lo, r.psi_hi) {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::Validation {
                        row: i,
                        msg: format!("invalid belief bounds [{lo}, {hi}]"),
                    });
                }
            }
            if r.d {
                n1 += 1;
            } else {
                n0 += 1;
            }
            if (r.weight - 1.0).abs() > 0.0 {
                has_weights = true;
            }
            if r.psi_lo.is_some() {
                has_bounds = true;
            }
            if r.link_id.is_some() {
                has_links = true;
            }
        }
        if n1 == 0 || n0 == 0 {
            return Err(Error::DegenerateSample(format!(
                "need both subsamples: {n1} outcome rows, {n0} belief rows"
            )));
        }
        Ok(PooledSample {
            rows,
            d_x,
            has_weights,
            has_bounds,
            has_links,
        })
    }

    pub fn rows(&self) -> &[ObservationRow] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn has_weights(&self) -> bool {
        self.has_weights
    }

    pub fn has_bounds(&self) -> bool {
        self.has_bounds
    }

    pub fn has_links(&self) -> bool {
        self.has_links
    }

    /// Count of outcome rows (`D = 1`).
    pub fn n1(&self) -> usize {
        self.rows.iter().filter(|r| r.d).count()
    }

    /// Count of belief rows (`D = 0`).
    pub fn n0(&self) -> usize {
        self.rows.iter().filter(|r| !r.d).count()
    }

    /// Values of one subsample, in row order.
    pub fn subsample_values(&self, d: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.d == d)
            .map(|r| r.y_tilde)
            .collect()
    }

    /// Weights of one subsample, in row order.
    pub fn subsample_weights(&self, d: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.d == d)
            .map(|r| r.weight)
            .collect()
    }

    /// Weighted mean of one subsample.
    pub fn subsample_mean(&self, d: bool) -> f64 {
        let v = self.subsample_values(d);
        let w = self.subsample_weights(d);
        weighted_mean(&v, &w).expect("validated subsample is nonempty")
    }

    /// Returns a copy with `f` applied to every outcome-row value.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> PooledSample {
        let mut out = self.clone();
        for r in out.rows.iter_mut() {
            if r.d {
                r.y_tilde = f(r.y_tilde);
            }
        }
        out
    }
}

/// Column-name map for CSV ingestion. `None` means "use the default and
/// treat the column as optional if absent".
#[derive(Debug, Clone)]
pub struct Schema {
    pub d: String,
    pub value: String,
    pub weight: String,
    pub covariate_prefix: String,
    pub psi_lo: String,
    pub psi_hi: String,
    pub link_id: String,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            d: "D".into(),
            value: "value".into(),
            weight: "w".into(),
            covariate_prefix: "x".into(),
            psi_lo: "psi_lo".into(),
            psi_hi: "psi_hi".into(),
            link_id: "link_id".into(),
        }
    }
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        msg: format!("non-numeric {col:?} value {field:?}"),
    })
}

/// Loads a pooled sample from a headered CSV file.
///
/// The `D` column must contain 0 or 1. Covariate columns are
/// `x1..xk` (contiguous, starting at 1) under the schema's prefix.
/// Rows with missing required fields are rejected, not repaired.
pub fn load_pooled_sample(path: impl AsRef<Path>, schema: &Schema) -> Result<PooledSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let d_idx = find(&schema.d)
        .ok_or_else(|| Error::Schema(format!("missing column {:?}", schema.d)))?;
    let v_idx = find(&schema.value)
        .ok_or_else(|| Error::Schema(format!("missing column {:?}", schema.value)))?;
    let w_idx = find(&schema.weight);
    let lo_idx = find(&schema.psi_lo);
    let hi_idx = find(&schema.psi_hi);
    let link_idx = find(&schema.link_id);
    let mut x_idx = Vec::new();
    loop {
        let name = format!("{}{}", schema.covariate_prefix, x_idx.len() + 1);
        match find(&name) {
            Some(i) => x_idx.push(i),
            None => break,
        }
    }

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let d_raw = parse_f64(&rec[d_idx], i, &schema.d)?;
        let d = if d_raw == 1.0 {
            true
        } else if d_raw == 0.0 {
            false
        } else {
            return Err(Error::Validation {
                row: i,
                msg: format!("D value {d_raw} outside {{0,1}}"),
            });
        };
        let mut row = ObservationRow::new(d, parse_f64(&rec[v_idx], i, &schema.value)?);
        if let Some(wi) = w_idx {
            row.weight = parse_f64(&rec[wi], i, &schema.weight)?;
        }
        row.x = x_idx
            .iter()
            .map(|&xi| parse_f64(&rec[xi], i, "covariate"))
            .collect::<Result<_>>()?;
        if let (Some(li), Some(hi)) = (lo_idx, hi_idx) {
            let lo = rec[li].trim();
            let hi = rec[hi].trim();
            if !lo.is_empty() && !hi.is_empty() {
                row.psi_lo = Some(parse_f64(lo, i, &schema.psi_lo)?);
                row.psi_hi = Some(parse_f64(hi, i, &schema.psi_hi)?);
            }
        }
        if let Some(li) = link_idx {
            let s = rec[li].trim();
            if !s.is_empty() {
                row.link_id = Some(s.to_string());
            }
        }
        rows.push(row);
    }
    PooledSample::new(rows)
}

/// Serializes a pooled sample back to the same CSV schema.
pub fn save_pooled_sample(
    sample: &PooledSample,
    path: impl AsRef<Path>,
    schema: &Schema,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![schema.d.clone(), schema.value.clone(), schema.weight.clone()];
    for k in 0..sample.d_x() {
        header.push(format!("{}{}", schema.covariate_prefix, k + 1));
    }
    header.push(schema.psi_lo.clone());
    header.push(schema.psi_hi.clone());
    header.push(schema.link_id.clone());
    wtr.write_record(&header)?;
    for r in sample.rows() {
        let mut rec = vec![
            if r.d { "1".to_string() } else { "0".to_string() },
            format!("{:?}", r.y_tilde),
            format!("{:?}", r.weight),
        ];
        for v in &r.x {
            rec.push(format!("{v:?}"));
        }
        rec.push(r.psi_lo.map(|v| format!("{v:?}")).unwrap_or_default());
        rec.push(r.psi_hi.map(|v| format!("{v:?}")).unwrap_or_default());
        rec.push(r.link_id.clone().unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `sum(w_i v_i) / sum(w_i)`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateSample("zero total weight".into()));
    }
    Ok(values
        .iter()
        .zip(weights)
        .map(|(v, w)| v * w)
        .sum::<f64>()
        / wsum)
}

/// Weighted upper quantile: the smallest value whose cumulative
/// normalized weight is at least `q`. With unit weights this is the
/// order statistic of rank `ceil(q * n)`.
pub fn weighted_upper_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateSample("empty subsample".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch("values vs weights".into()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    for &i in &idx {
        cum += weights[i];
        // tiny slack so that exact rank boundaries (cum == q * total)
        // select the boundary value rather than the next one
        if cum >= q * total - 1e-12 * total {
            return Ok(values[i]);
        }
    }
    Ok(values[idx[values.len() - 1]])
}

/// Winsorizes the upper tail of each subsample separately at quantile
/// level `q`: values strictly above the subsample's weighted
/// `q`-quantile are replaced by that quantile. `two_tail` also clamps
/// values strictly below the `(1 - q)`-quantile.
pub fn winsorize_upper(sample: &PooledSample, q: f64, two_tail: bool) -> Result<PooledSample> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("winsorization level {q} outside (0, 1]")));
    }
    let mut out = sample.clone();
    for d in [true, false] {
        let vals = sample.subsample_values(d);
        let wts = sample.subsample_weights(d);
        if vals.is_empty() {
            return Err(Error::DegenerateSample("empty subsample".into()));
        }
        let hi = weighted_upper_quantile(&vals, &wts, q)?;
        let lo = if two_tail {
            Some(weighted_upper_quantile(&vals, &wts, 1.0 - q)?)
        } else {
            None
        };
        for r in out.rows.iter_mut().filter(|r| r.d == d) {
            if r.y_tilde > hi {
                r.y_tilde = hi;
            }
            if let Some(lo) = lo {
                if r.y_tilde < lo {
                    r.y_tilde = lo;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample_from(d: &[u8], v: &[f64]) -> PooledSample {
        let rows = d
            .iter()
            .zip(v)
            .map(|(&d, &v)| ObservationRow::new(d == 1, v))
            .collect();
        PooledSample::new(rows).unwrap()
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_minimal_csv() {
        let f = write_csv("D,value\n1,0\n1,2\n0,1\n0,1\n");
        let s = load_pooled_sample(f.path(), &Schema::default()).unwrap();
        assert_eq!(s.n(), 4);
        assert_eq!(s.subsample_values(true), vec![0.0, 2.0]);
        assert_eq!(s.subsample_values(false), vec![1.0, 1.0]);
        assert!(!s.has_weights());
    }

    #[test]
    fn rejects_bad_d() {
        let f = write_csv("D,value\n1,0\n2,1\n");
        let err = load_pooled_sample(f.path(), &Schema::default()).unwrap_err();
        match err {
            Error::Validation { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_nonpositive_weight() {
        let f = write_csv("D,value,w\n1,5,0\n0,3,1\n");
        assert!(matches!(
            load_pooled_sample(f.path(), &Schema::default()),
            Err(Error::Validation { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_one_sided_sample() {
        let f = write_csv("D,value\n1,1\n1,2\n");
        assert!(matches!(
            load_pooled_sample(f.path(), &Schema::default()),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn rejects_non_numeric() {
        let f = write_csv("D,value\n1,abc\n0,1\n");
        assert!(matches!(
            load_pooled_sample(f.path(), &Schema::default()),
            Err(Error::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(weighted_mean(&[1.0, 1.0], &[3.0, 7.0]).unwrap(), 1.0);
        assert_eq!(weighted_mean(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(weighted_mean(&[0.0, 2.0, 4.0], &[1.0, 2.0, 1.0]).unwrap(), 2.0);
        assert!(weighted_mean(&[1.0], &[1.0, 2.0]).is_err());
        assert!(weighted_mean(&[], &[]).is_err());
    }

    #[test]
    fn winsorize_identity_at_q1() {
        let s = sample_from(&[1, 1, 0, 0], &[1.0, 5.0, 2.0, 9.0]);
        let w = winsorize_upper(&s, 1.0, false).unwrap();
        for (a, b) in s.rows().iter().zip(w.rows()) {
            assert_eq!(a.y_tilde, b.y_tilde);
        }
    }

    #[test]
    fn winsorize_caps_at_rank_ceil_qn() {
        // 1..=100 in one subsample; q = 0.95 -> rank ceil(95) = 95 -> cap 95
        let mut d = vec![1u8; 100];
        d.push(0);
        let mut v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        v.push(0.0);
        let s = sample_from(&d, &v);
        let w = winsorize_upper(&s, 0.95, false).unwrap();
        let capped = w.subsample_values(true);
        assert_eq!(capped.iter().cloned().fold(f64::MIN, f64::max), 95.0);
        assert_eq!(capped.iter().filter(|&&x| x == 95.0).count(), 6);
        // values at or below the quantile unchanged
        assert_eq!(capped[..94], v[..94]);
    }

    #[test]
    fn winsorize_constant_subsample_unchanged() {
        let s = sample_from(&[1, 1, 0], &[3.0, 3.0, 1.0]);
        let w = winsorize_upper(&s, 0.5, false).unwrap();
        assert_eq!(w.subsample_values(true), vec![3.0, 3.0]);
    }

    #[test]
    fn winsorize_idempotent_and_never_increases() {
        let d: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let v: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 - 5.0).collect();
        let s = sample_from(&d, &v);
        for q in [0.5, 0.8, 0.95] {
            let w1 = winsorize_upper(&s, q, false).unwrap();
            let w2 = winsorize_upper(&w1, q, false).unwrap();
            assert_eq!(w1.n(), s.n());
            for ((orig, a), b) in s.rows().iter().zip(w1.rows()).zip(w2.rows()) {
                assert!(a.y_tilde <= orig.y_tilde);
                assert_eq!(a.y_tilde, b.y_tilde);
            }
        }
    }

    #[test]
    fn winsorize_weighted_quantile_convention() {
        // weights concentrate mass on the small values: cumulative weight
        // reaches 0.9 already at the second atom
        let rows = vec![
            ObservationRow::new(true, 1.0).with_weight(5.0),
            ObservationRow::new(true, 2.0).with_weight(4.0),
            ObservationRow::new(true, 10.0).with_weight(1.0),
            ObservationRow::new(false, 0.0),
        ];
        let s = PooledSample::new(rows).unwrap();
        let w = winsorize_upper(&s, 0.9, false).unwrap();
        assert_eq!(w.subsample_values(true), vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn csv_round_trip_is_identical() {
        let rows = vec![
            ObservationRow::new(true, 1.25).with_weight(2.5).with_x(vec![0.5, -1.0]),
            ObservationRow::new(true, -3.5).with_x(vec![1.5, 2.25]),
            ObservationRow::new(false, 0.125)
                .with_x(vec![0.0, 1.0])
                .with_bounds(0.0, 0.25),
        ];
        let s = PooledSample::new(rows).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        let schema = Schema::default();
        save_pooled_sample(&s, f.path(), &schema).unwrap();
        let back = load_pooled_sample(f.path(), &schema).unwrap();
        assert_eq!(s.rows(), back.rows());
        assert_eq!(s.d_x(), back.d_x());
    }
}
