//! Empirical data handling: synthetic generators for the three application
//! problems, CSV ingestion, conditional grouping of the empirical
//! distribution, and the out-of-sample prescriptiveness metric.
//!
//! Grouping uses exact bit equality on covariate vectors: continuous
//! synthetic covariates yield singleton groups, discretized covariates
//! group naturally, and no tolerance parameter is smuggled in.

use crate::numerics::cholesky;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("acceptance-rejection failed {attempts} times for sample {sample}; generator misconfigured")]
    RejectionExhausted { sample: usize, attempts: usize },
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse failure: {0}")]
    Csv(String),
    #[error("missing column {name:?} (available: {available:?})")]
    MissingColumn { name: String, available: Vec<String> },
    #[error("non-numeric cell at data row {row}, column {column:?}: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("no data rows in {path}")]
    NoDataRows { path: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("prescriptiveness undefined: reference loss equals oracle loss ({0})")]
    DegenerateReference(f64),
}

/// One empirical observation: covariate vector and outcome vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Empirical joint sample over (covariate, outcome) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Row>,
    pub d_x: usize,
    pub d_y: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Row>, d_x: usize, d_y: usize) -> Result<Self, DataError> {
        for (i, r) in rows.iter().enumerate() {
            if r.x.len() != d_x || r.y.len() != d_y {
                return Err(DataError::InvalidConfig(format!(
                    "row {i} has dims ({}, {}), expected ({d_x}, {d_y})",
                    r.x.len(),
                    r.y.len()
                )));
            }
            if r.x.iter().chain(r.y.iter()).any(|v| !v.is_finite()) {
                return Err(DataError::InvalidConfig(format!(
                    "row {i} contains a non-finite entry"
                )));
            }
        }
        Ok(Dataset { rows, d_x, d_y })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Splits off the first `n` rows; the remainder becomes the second
    /// dataset. Used to carve train/validation/test sets out of a single
    /// generator run so that all parts share the per-dataset coefficient
    /// draw.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.rows.len());
        (
            Dataset {
                rows: self.rows[..n].to_vec(),
                d_x: self.d_x,
                d_y: self.d_y,
            },
            Dataset {
                rows: self.rows[n..].to_vec(),
                d_x: self.d_x,
                d_y: self.d_y,
            },
        )
    }
}

/// One conditional group: a distinct covariate value, its outcome list with
/// empirical conditional frequencies, and its row count.
#[derive(Debug, Clone)]
pub struct Group {
    pub x: Vec<f64>,
    /// Distinct outcomes with their conditional frequencies; frequencies
    /// are positive and sum to 1 within 1e-12.
    pub outcomes: Vec<(Vec<f64>, f64)>,
    /// Number of dataset rows in this group.
    pub count: usize,
}

/// Empirical distribution factored into the covariate marginal and the
/// conditional outcome frequencies per distinct covariate.
#[derive(Debug, Clone)]
pub struct GroupedDataset {
    pub groups: Vec<Group>,
    /// Maps each dataset row to its group index.
    pub row_group: Vec<usize>,
    /// Total row count across groups.
    pub n_total: usize,
    pub d_x: usize,
    pub d_y: usize,
}

fn bit_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Partitions the dataset by bit-identical covariate vectors and estimates
/// conditional outcome frequencies by counting.
pub fn group_conditionals(ds: &Dataset) -> Result<GroupedDataset, DataError> {
    if ds.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<f64>, Vec<(Vec<f64>, usize)>, usize)> = Vec::new();
    let mut row_group = Vec::with_capacity(ds.len());
    for row in &ds.rows {
        let gi = *index.entry(bit_key(&row.x)).or_insert_with(|| {
            groups.push((row.x.clone(), Vec::new(), 0));
            groups.len() - 1
        });
        row_group.push(gi);
        let (_, outcomes, count) = &mut groups[gi];
        *count += 1;
        let ykey = bit_key(&row.y);
        match outcomes.iter_mut().find(|(y, _)| bit_key(y) == ykey) {
            Some((_, c)) => *c += 1,
            None => outcomes.push((row.y.clone(), 1)),
        }
    }
    let groups = groups
        .into_iter()
        .map(|(x, outcomes, count)| Group {
            x,
            outcomes: outcomes
                .into_iter()
                .map(|(y, c)| (y, c as f64 / count as f64))
                .collect(),
            count,
        })
        .collect();
    Ok(GroupedDataset {
        groups,
        row_group,
        n_total: ds.len(),
        d_x: ds.d_x,
        d_y: ds.d_y,
    })
}

impl GroupedDataset {
    /// Treats every row as its own group regardless of covariate ties.
    /// This is the empirical structure used by the joint-perturbation
    /// (non-causal) robust model.
    pub fn singletons(ds: &Dataset) -> Result<Self, DataError> {
        if ds.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Ok(GroupedDataset {
            groups: ds
                .rows
                .iter()
                .map(|r| Group {
                    x: r.x.clone(),
                    outcomes: vec![(r.y.clone(), 1.0)],
                    count: 1,
                })
                .collect(),
            row_group: (0..ds.len()).collect(),
            n_total: ds.len(),
            d_x: ds.d_x,
            d_y: ds.d_y,
        })
    }
}

/// Configuration for the contextual newsvendor generator.
#[derive(Debug, Clone)]
pub struct NewsvendorGenConfig {
    pub n: usize,
    pub d_x: usize,
    /// Amplitude of the nonlinear demand curve.
    pub c_amp: f64,
    /// Unit holding cost.
    pub h: f64,
    /// Unit stock-out cost.
    pub b: f64,
    pub seed: u64,
}

impl Default for NewsvendorGenConfig {
    fn default() -> Self {
        NewsvendorGenConfig {
            n: 200,
            d_x: 5,
            c_amp: 1.7,
            h: 0.6,
            b: 1.0,
            seed: 0,
        }
    }
}

impl NewsvendorGenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n < 1 || self.d_x < 1 {
            return Err(DataError::InvalidConfig(format!(
                "need n ≥ 1 and d_x ≥ 1, got n={}, d_x={}",
                self.n, self.d_x
            )));
        }
        if self.h <= 0.0 || self.b <= 0.0 {
            return Err(DataError::InvalidConfig(format!(
                "costs must be positive, got h={}, b={}",
                self.h, self.b
            )));
        }
        Ok(())
    }
}

/// Configuration for the three-product inventory-substitution generator.
#[derive(Debug, Clone)]
pub struct InventoryGenConfig {
    pub n: usize,
    pub d_x: usize,
    pub seed: u64,
}

impl InventoryGenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n < 1 || self.d_x < 1 {
            return Err(DataError::InvalidConfig(format!(
                "need n ≥ 1 and d_x ≥ 1, got n={}, d_x={}",
                self.n, self.d_x
            )));
        }
        Ok(())
    }
}

/// Number of products in the inventory-substitution experiments.
pub const INVENTORY_PRODUCTS: usize = 3;

/// Nonlinear conditional demand curve: c_amp·(sin 2t + 2e^{−16t²} + 1).
pub fn newsvendor_demand_curve(t: f64, c_amp: f64) -> f64 {
    c_amp * ((2.0 * t).sin() + 2.0 * (-16.0 * t * t).exp() + 1.0)
}

/// Draws the AR(1)-correlated covariate vector x ~ N(0, Σ) with
/// Σᵢⱼ = 0.5^{|i−j|}, via the Cholesky factor of Σ.
fn sample_covariate(l: &[f64], d_x: usize, rng: &mut impl Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..d_x).map(|_| rng.sample(StandardNormal)).collect();
    (0..d_x)
        .map(|i| (0..=i).map(|k| l[i * d_x + k] * z[k]).sum())
        .collect()
}

fn covariance_cholesky(d_x: usize) -> Vec<f64> {
    let mut sigma = vec![0.0; d_x * d_x];
    for i in 0..d_x {
        for j in 0..d_x {
            sigma[i * d_x + j] = 0.5_f64.powi((i as i32 - j as i32).abs());
        }
    }
    cholesky(&sigma, d_x)
}

fn sample_beta(d_x: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d_x).map(|_| rng.gen_range(-0.1..0.1)).collect()
}

const REJECTION_LIMIT: usize = 1_000_000;

/// Draws one newsvendor demand at signal t = βᵀx: curve value plus standard
/// normal noise, redrawing the noise until the demand is nonnegative.
pub fn newsvendor_outcome_draw(
    t: f64,
    c_amp: f64,
    sample: usize,
    rng: &mut impl Rng,
) -> Result<f64, DataError> {
    let mean = newsvendor_demand_curve(t, c_amp);
    for _ in 0..REJECTION_LIMIT {
        let noise: f64 = rng.sample(StandardNormal);
        let y = mean + noise;
        if y >= 0.0 {
            return Ok(y);
        }
    }
    Err(DataError::RejectionExhausted {
        sample,
        attempts: REJECTION_LIMIT,
    })
}

/// Generates the contextual newsvendor dataset: covariates from the
/// correlated Gaussian, demands from the nonlinear curve with truncated
/// Gaussian noise. The signal coefficients β (iid U[−0.1, 0.1]) are drawn
/// once per dataset.
pub fn generate_newsvendor(cfg: &NewsvendorGenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = covariance_cholesky(cfg.d_x);
    let beta = sample_beta(cfg.d_x, &mut rng);
    let mut rows = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let x = sample_covariate(&l, cfg.d_x, &mut rng);
        let t: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let y = newsvendor_outcome_draw(t, cfg.c_amp, i, &mut rng)?;
        rows.push(Row { x, y: vec![y] });
    }
    Dataset::new(rows, cfg.d_x, 1)
}

/// Draws the three conditional product demands at mean scale μ = e^{βᵀx}:
/// exponential with mean μ, then Gamma(2, μ) and Gamma(4, μ) in the
/// shape–scale convention (means 2μ and 4μ).
pub fn inventory_outcome_draw(mu: f64, rng: &mut impl Rng) -> [f64; INVENTORY_PRODUCTS] {
    let exp = Exp::new(1.0 / mu).expect("positive rate");
    let g2 = Gamma::new(2.0, mu).expect("valid gamma");
    let g4 = Gamma::new(4.0, mu).expect("valid gamma");
    [exp.sample(rng), g2.sample(rng), g4.sample(rng)]
}

/// Generates the three-product inventory dataset with covariate-driven
/// exponential/Gamma demands.
pub fn generate_inventory(cfg: &InventoryGenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = covariance_cholesky(cfg.d_x);
    let beta = sample_beta(cfg.d_x, &mut rng);
    let mut rows = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = sample_covariate(&l, cfg.d_x, &mut rng);
        let t: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let y = inventory_outcome_draw(t.exp(), &mut rng);
        rows.push(Row { x, y: y.to_vec() });
    }
    Dataset::new(rows, cfg.d_x, INVENTORY_PRODUCTS)
}

/// Configuration for the synthetic daily-returns generator backing the
/// rolling-horizon portfolio experiment when no market CSV is supplied.
#[derive(Debug, Clone)]
pub struct PortfolioGenConfig {
    /// Number of trading days (rows).
    pub n_days: usize,
    /// Number of observable market factors (covariate dimension).
    pub d_x: usize,
    /// Number of assets (outcome dimension).
    pub d_y: usize,
    pub seed: u64,
}

impl PortfolioGenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_days < 2 || self.d_x < 1 || self.d_y < 1 {
            return Err(DataError::InvalidConfig(format!(
                "need n_days ≥ 2, d_x ≥ 1, d_y ≥ 1; got {}, {}, {}",
                self.n_days, self.d_x, self.d_y
            )));
        }
        Ok(())
    }
}

/// Generates date-ordered synthetic market data: persistent AR(1) factor
/// covariates and asset returns driven by fixed factor loadings plus
/// idiosyncratic noise, scaled to ~1% daily magnitudes.
pub fn generate_portfolio(cfg: &PortfolioGenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phi = 0.9_f64;
    let innov = (1.0 - phi * phi).sqrt();
    let loadings: Vec<f64> = (0..cfg.d_y * cfg.d_x)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z / (cfg.d_x as f64).sqrt()
        })
        .collect();
    let mut factors: Vec<f64> = (0..cfg.d_x).map(|_| rng.sample(StandardNormal)).collect();
    let mut rows = Vec::with_capacity(cfg.n_days);
    for _ in 0..cfg.n_days {
        for f in factors.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *f = phi * *f + innov * z;
        }
        let y: Vec<f64> = (0..cfg.d_y)
            .map(|i| {
                let systematic: f64 = (0..cfg.d_x)
                    .map(|j| loadings[i * cfg.d_x + j] * factors[j])
                    .sum();
                let idio: f64 = rng.sample(StandardNormal);
                0.01 * (0.5 * systematic + idio)
            })
            .collect();
        rows.push(Row {
            x: factors.clone(),
            y,
        });
    }
    Dataset::new(rows, cfg.d_x, cfg.d_y)
}

/// Loads a dataset from a CSV file, selecting feature and outcome columns
/// by header name. Lines starting with `#` are skipped; rows keep file
/// order (rolling-window callers rely on ascending date order).
pub fn load_csv(
    path: &Path,
    feature_cols: &[String],
    outcome_cols: &[String],
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e.to_string()),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let locate = |name: &String| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                name: name.clone(),
                available: headers.clone(),
            })
    };
    let fidx: Vec<usize> = feature_cols.iter().map(locate).collect::<Result<_, _>>()?;
    let oidx: Vec<usize> = outcome_cols.iter().map(locate).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (ri, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let parse = |col: usize| -> Result<f64, DataError> {
            let raw = rec.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| DataError::NonNumeric {
                row: ri + 1,
                column: headers[col].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonNumeric {
                    row: ri + 1,
                    column: headers[col].clone(),
                    value: raw.to_string(),
                });
            }
            Ok(v)
        };
        let x: Vec<f64> = fidx.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?;
        let y: Vec<f64> = oidx.iter().map(|&c| parse(c)).collect::<Result<_, _>>()?;
        rows.push(Row { x, y });
    }
    if rows.is_empty() {
        return Err(DataError::NoDataRows {
            path: path.display().to_string(),
        });
    }
    Dataset::new(rows, feature_cols.len(), outcome_cols.len())
}

/// Coefficient of prescriptiveness in percent: 100·(1 − (H − H*)/(H_ref − H*)),
/// where H is the evaluated policy's loss, H_ref the plain empirical-risk
/// policy's loss, and H* the perfect-information oracle loss.
pub fn prescriptiveness(
    loss_policy: f64,
    loss_erm: f64,
    loss_oracle: f64,
) -> Result<f64, DataError> {
    let denom = loss_erm - loss_oracle;
    if denom == 0.0 {
        return Err(DataError::DegenerateReference(loss_erm));
    }
    Ok((1.0 - (loss_policy - loss_oracle) / denom) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn demand_curve_center_value() {
        // sin 0 + 2·e⁰ + 1 = 3, scaled by the 1.7 amplitude.
        assert_abs_diff_eq!(newsvendor_demand_curve(0.0, 1.7), 5.1, epsilon = 1e-12);
    }

    #[test]
    fn covariance_matches_ar1_form_in_2d() {
        let l = covariance_cholesky(2);
        // Reassemble Σ = L·Lᵀ and compare to [[1, 0.5], [0.5, 1]].
        let sigma = [
            l[0] * l[0],
            l[0] * l[2],
            l[2] * l[0],
            l[2] * l[2] + l[3] * l[3],
        ];
        assert_abs_diff_eq!(sigma[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sigma[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn newsvendor_outcomes_are_nonnegative() {
        let ds = generate_newsvendor(&NewsvendorGenConfig {
            n: 500,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(ds.d_y, 1);
        assert!(ds.rows.iter().all(|r| r.y[0] >= 0.0));
    }

    #[test]
    fn newsvendor_conditional_mean_at_center() {
        // At signal 0 the curve value is 5.1 and truncation at zero is a
        // 1.7e-7 tail event, so the empirical mean over 1e5 draws should
        // sit within Monte Carlo noise (4 standard errors ≈ 0.013) of 5.1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|i| newsvendor_outcome_draw(0.0, 1.7, i, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 5.1).abs() < 0.02, "mean {mean} too far from 5.1");
    }

    #[test]
    fn newsvendor_rejection_matches_truncated_normal() {
        // At signal t = 3π/4 the curve value is ~1e-38, so outcomes follow
        // a standard normal truncated to [0, ∞): mean √(2/π) ≈ 0.79788,
        // sd ≈ 0.6028. Check the empirical mean to 4 standard errors.
        let t = 3.0 * std::f64::consts::FRAC_PI_4;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|i| newsvendor_outcome_draw(t, 1.7, i, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt();
        let tol = 4.0 * 0.6028 / (n as f64).sqrt();
        assert!(
            (mean - want).abs() < tol,
            "truncated-normal mean {mean} vs {want} ± {tol}"
        );
    }

    #[test]
    fn inventory_outcomes_nonnegative_and_three_wide() {
        let ds = generate_inventory(&InventoryGenConfig {
            n: 300,
            d_x: 4,
            seed: 3,
        })
        .unwrap();
        assert_eq!(ds.d_y, 3);
        assert!(ds
            .rows
            .iter()
            .all(|r| r.y.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn gamma_product_mean_matches_shape_times_scale() {
        // Second product is Gamma(2, μ): mean 2μ, variance 2μ². With 1e5
        // draws the standard error of the mean is μ·sqrt(2/1e5).
        let mu = 1.3_f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| inventory_outcome_draw(mu, &mut rng)[1])
            .sum::<f64>()
            / n as f64;
        let se = mu * (2.0 / n as f64).sqrt();
        assert!(
            (mean - 2.0 * mu).abs() < 3.0 * se,
            "mean {mean} vs expected {} ± {}",
            2.0 * mu,
            3.0 * se
        );
    }

    #[test]
    fn grouping_counts_duplicate_covariates() {
        let ds = Dataset::new(
            vec![
                Row { x: vec![1.0], y: vec![2.0] },
                Row { x: vec![1.0], y: vec![2.0] },
                Row { x: vec![1.0], y: vec![3.0] },
            ],
            1,
            1,
        )
        .unwrap();
        let g = group_conditionals(&ds).unwrap();
        assert_eq!(g.groups.len(), 1);
        let outcomes = &g.groups[0].outcomes;
        assert_eq!(outcomes.len(), 2);
        assert_abs_diff_eq!(outcomes[0].1, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(outcomes[1].1, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(g.row_group, vec![0, 0, 0]);
    }

    #[test]
    fn distinct_covariates_yield_singleton_groups() {
        let rows: Vec<Row> = (0..5)
            .map(|i| Row {
                x: vec![i as f64 + 0.123],
                y: vec![i as f64],
            })
            .collect();
        let ds = Dataset::new(rows, 1, 1).unwrap();
        let g = group_conditionals(&ds).unwrap();
        assert_eq!(g.groups.len(), 5);
        for grp in &g.groups {
            assert_eq!(grp.outcomes.len(), 1);
            assert_abs_diff_eq!(grp.outcomes[0].1, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn grouping_partitions_all_rows() {
        let ds = generate_inventory(&InventoryGenConfig {
            n: 50,
            d_x: 2,
            seed: 5,
        })
        .unwrap();
        let g = group_conditionals(&ds).unwrap();
        let total: usize = g.groups.iter().map(|grp| grp.count).sum();
        assert_eq!(total, ds.len());
        for grp in &g.groups {
            let s: f64 = grp.outcomes.iter().map(|(_, p)| p).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grouping_is_order_invariant_up_to_keys() {
        let rows = vec![
            Row { x: vec![1.0], y: vec![1.0] },
            Row { x: vec![2.0], y: vec![5.0] },
            Row { x: vec![1.0], y: vec![1.0] },
            Row { x: vec![1.0], y: vec![4.0] },
        ];
        let ds = Dataset::new(rows.clone(), 1, 1).unwrap();
        let mut rev = rows;
        rev.reverse();
        let ds_rev = Dataset::new(rev, 1, 1).unwrap();
        let g = group_conditionals(&ds).unwrap();
        let g_rev = group_conditionals(&ds_rev).unwrap();
        // Same keyed frequency map regardless of row order.
        let freq = |g: &GroupedDataset, x: f64, y: f64| -> f64 {
            g.groups
                .iter()
                .find(|grp| grp.x[0] == x)
                .and_then(|grp| {
                    grp.outcomes
                        .iter()
                        .find(|(oy, _)| oy[0] == y)
                        .map(|(_, p)| *p)
                })
                .unwrap_or(0.0)
        };
        for (x, y) in [(1.0, 1.0), (1.0, 4.0), (2.0, 5.0)] {
            assert_abs_diff_eq!(freq(&g, x, y), freq(&g_rev, x, y), epsilon = 1e-15);
        }
    }

    #[test]
    fn prescriptiveness_reference_points() {
        // Policy tying the reference scores 0%.
        assert_abs_diff_eq!(prescriptiveness(1.0, 1.0, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        // Perfect policy scores 100%.
        assert_abs_diff_eq!(prescriptiveness(0.0, 1.0, 0.0).unwrap(), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prescriptiveness(0.8, 1.0, 0.0).unwrap(), 20.0, epsilon = 1e-12);
        assert!(prescriptiveness(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = std::env::temp_dir().join("csdro_data_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.csv");
        std::fs::write(
            &good,
            "a,b,c,d,e,y1,y2\n1,2,3,4,5,10,20\n6,7,8,9,0,30,40\n0,0,0,0,0,1,2\n",
        )
        .unwrap();
        let feats: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let outs: Vec<String> = ["y1", "y2"].iter().map(|s| s.to_string()).collect();
        let ds = load_csv(&good, &feats, &outs).unwrap();
        assert_eq!((ds.len(), ds.d_x, ds.d_y), (3, 5, 2));
        assert_abs_diff_eq!(ds.rows[1].y[1], 40.0, epsilon = 1e-15);

        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "a,y\n1,2\nx,3\n").unwrap();
        let err = load_csv(&bad, &["a".into()], &["y".into()]).unwrap_err();
        match err {
            DataError::NonNumeric { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("expected NonNumeric, got {other:?}"),
        }

        let empty = dir.join("empty.csv");
        std::fs::write(&empty, "a,y\n").unwrap();
        assert!(matches!(
            load_csv(&empty, &["a".into()], &["y".into()]),
            Err(DataError::NoDataRows { .. })
        ));

        let missing = load_csv(&good, &["zz".into()], &outs).unwrap_err();
        assert!(matches!(missing, DataError::MissingColumn { .. }));
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let cfg = NewsvendorGenConfig::default();
        let a = generate_newsvendor(&cfg).unwrap();
        let b = generate_newsvendor(&cfg).unwrap();
        assert_eq!(a, b);
        let pc = PortfolioGenConfig {
            n_days: 40,
            d_x: 3,
            d_y: 4,
            seed: 9,
        };
        assert_eq!(generate_portfolio(&pc).unwrap(), generate_portfolio(&pc).unwrap());
    }
}
