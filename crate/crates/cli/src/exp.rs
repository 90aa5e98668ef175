//! Shared experiment assembly: turning config keys into core types.
//!
//! Every subcommand goes through the same translations — application
//! and cost data from `[loss]`, transport settings from `[sinkhorn]`,
//! solver settings from `[train]`, decision-rule shape from `[policy]`,
//! and a dataset from `[data]` (synthetic generator or CSV). Keeping
//! them here means the config vocabulary is identical across commands
//! and documented once.

use anyhow::anyhow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csdro::data::{
    generate_inventory, generate_newsvendor, generate_portfolio, group_conditionals, Dataset,
    InventoryGenConfig, NewsvendorGenConfig, PortfolioGenConfig,
};
use csdro::kernels::SinkhornConfig;
use csdro::losses::{
    Application, InventoryCosts, NewsvendorCosts, PortfolioParams,
};
use csdro::objective::erm_objective;
use csdro::optimizer::{
    train_causal_sdro, train_gd, train_sdro, GdObjective, TraceRecord, TrainConfig,
};
use csdro::policies::{init_policy, Policy, PolicyHyper, PolicyKind};

use crate::config::Config;
use crate::{CliError, CliResult};

/// Hash-style mix of a run seed with a fixed stream tag, so the data
/// draw, the parameter init, and other random consumers of one run get
/// decorrelated but reproducible generator seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed stream tags (arguments to [`mix_seed`]).
pub mod streams {
    /// Policy parameter initialization.
    pub const INIT: u64 = 1;
    /// Synthetic data generation.
    pub const DATA: u64 = 2;
    /// Permutation-importance shuffles.
    pub const PERM: u64 = 3;
    /// Per-rebalance asset sampling in the rolling backtest.
    pub const ASSETS: u64 = 4;
    /// Penalty-weight search batches.
    pub const DUAL: u64 = 5;
}

/// The trained-model family a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Erm,
    CausalSdro,
    Sdro,
    KlDro,
}

impl ModelKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "erm" => Ok(ModelKind::Erm),
            "causal-sdro" => Ok(ModelKind::CausalSdro),
            "sdro" => Ok(ModelKind::Sdro),
            "kl-dro" => Ok(ModelKind::KlDro),
            other => Err(CliError::validation(anyhow!(
                "unknown model `{other}`; expected one of erm, causal-sdro, sdro, kl-dro"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Erm => "erm",
            ModelKind::CausalSdro => "causal-sdro",
            ModelKind::Sdro => "sdro",
            ModelKind::KlDro => "kl-dro",
        }
    }

    /// Whether this model needs the transport/KL penalty weight λ.
    pub fn is_dro(&self) -> bool {
        !matches!(self, ModelKind::Erm)
    }
}

/// Reads `experiment.application` (default `newsvendor`).
pub fn application_name(cfg: &Config) -> CliResult<String> {
    let name = cfg.get_str("experiment.application", "newsvendor");
    match name.as_str() {
        "newsvendor" | "inventory" | "portfolio" => Ok(name),
        other => Err(CliError::validation(anyhow!(
            "unknown application `{other}`; expected newsvendor, inventory, or portfolio"
        ))),
    }
}

/// Reads `experiment.model` (default `causal-sdro`).
pub fn model_from(cfg: &Config) -> CliResult<ModelKind> {
    ModelKind::parse(&cfg.get_str("experiment.model", "causal-sdro"))
}

/// Reads `experiment.policy` (default `srf`).
pub fn policy_kind_from(cfg: &Config) -> CliResult<PolicyKind> {
    let name = cfg.get_str("experiment.policy", "srf");
    name.parse::<PolicyKind>()
        .map_err(|e| CliError::validation(anyhow!("{e}")))
}

/// Builds the application (loss + cost data) for an outcome dimension
/// `d_y` from the `[loss]` section.
///
/// Keys: newsvendor `loss.h` (0.6), `loss.b` (1.0) — scalars broadcast
/// to `d_y` products; inventory `loss.h`, `loss.b`, `loss.c`, and
/// `loss.s` (the above-diagonal substitution costs row by row), all
/// defaulting to the three-product benchmark data; portfolio
/// `loss.omega` (5).
pub fn build_application(cfg: &Config, app_name: &str, d_y: usize) -> CliResult<Application> {
    match app_name {
        "newsvendor" => {
            let h = broadcast(cfg.get_f64_list("loss.h", &[0.6])?, d_y, "loss.h")?;
            let b = broadcast(cfg.get_f64_list("loss.b", &[1.0])?, d_y, "loss.b")?;
            let costs = NewsvendorCosts::new(h, b)
                .map_err(|e| CliError::validation(anyhow!("newsvendor costs: {e}")))?;
            Ok(Application::Newsvendor(costs))
        }
        "inventory" => {
            let h = cfg.get_f64_list("loss.h", &[1.0, 0.7, 0.6])?;
            let d = h.len();
            let b = cfg.get_f64_list("loss.b", &[1.8, 1.6, 1.2])?;
            let c = cfg.get_f64_list("loss.c", &vec![0.0; d])?;
            let s_upper = cfg.get_f64_list("loss.s", &[1.7, 2.0, 1.5])?;
            let want = d * (d - 1) / 2;
            if s_upper.len() != want {
                return Err(CliError::validation(anyhow!(
                    "loss.s needs the {want} above-diagonal substitution costs for {d} products, got {}",
                    s_upper.len()
                )));
            }
            let mut s = vec![vec![f64::INFINITY; d]; d];
            let mut it = s_upper.into_iter();
            for i in 0..d {
                s[i][i] = 0.0;
                for j in (i + 1)..d {
                    s[i][j] = it.next().expect("counted above");
                }
            }
            let costs = InventoryCosts { c, h, b, s };
            costs
                .validate()
                .map_err(|e| CliError::validation(anyhow!("inventory costs: {e}")))?;
            if costs.products() != d_y {
                return Err(CliError::validation(anyhow!(
                    "inventory costs describe {} products but the data has d_y={d_y}",
                    costs.products()
                )));
            }
            Ok(Application::Inventory(costs))
        }
        "portfolio" => {
            let omega = cfg.get_f64("loss.omega", 5.0)?;
            let params = PortfolioParams::new(omega, d_y)
                .map_err(|e| CliError::validation(anyhow!("portfolio parameters: {e}")))?;
            Ok(Application::Portfolio(params))
        }
        other => Err(CliError::validation(anyhow!(
            "unknown application `{other}`"
        ))),
    }
}

fn broadcast(vals: Vec<f64>, d: usize, key: &str) -> CliResult<Vec<f64>> {
    if vals.len() == d {
        Ok(vals)
    } else if vals.len() == 1 {
        Ok(vec![vals[0]; d])
    } else {
        Err(CliError::validation(anyhow!(
            "{key} has {} entries; expected 1 (broadcast) or d_y={d}",
            vals.len()
        )))
    }
}

/// Builds the transport settings from `[sinkhorn]`. Defaults: p=2,
/// eps=0.1, lambda=1, clip=1000, n1=1, n2=32, n3=32. When
/// `require_lambda` is set (any DRO model), `sinkhorn.lambda` must be
/// spelled out in the file — robustness radii should never be implicit.
pub fn sinkhorn_from(cfg: &Config, require_lambda: bool) -> CliResult<SinkhornConfig> {
    let p = cfg.get_u64("sinkhorn.p", 2)?;
    if p != 1 && p != 2 {
        return Err(CliError::validation(anyhow!(
            "sinkhorn.p must be 1 or 2, got {p}"
        )));
    }
    let eps = cfg.get_f64("sinkhorn.eps", 0.1)?;
    let lambda = if require_lambda {
        let raw = cfg
            .require_str("sinkhorn.lambda")
            .map_err(|_| {
                CliError::validation(anyhow!(
                    "sinkhorn.lambda is required for DRO models (set the penalty weight explicitly)"
                ))
            })?;
        raw.parse::<f64>().map_err(|_| {
            CliError::validation(anyhow!("sinkhorn.lambda: cannot parse `{raw}` as a number"))
        })?
    } else {
        cfg.get_f64("sinkhorn.lambda", 1.0)?
    };
    if !(eps > 0.0) || !(lambda > 0.0) {
        return Err(CliError::validation(anyhow!(
            "sinkhorn.eps and sinkhorn.lambda must be positive, got eps={eps}, lambda={lambda}"
        )));
    }
    let clip = cfg.get_f64("sinkhorn.clip", 1e3)?;
    let n1 = cfg.get_usize("sinkhorn.n1", 1)?;
    let n2 = cfg.get_usize("sinkhorn.n2", 32)?;
    let n3 = cfg.get_usize("sinkhorn.n3", 32)?;
    if n1 < 1 || n2 < 1 || n3 < 1 {
        return Err(CliError::validation(anyhow!(
            "sinkhorn sample counts must be at least 1, got n1={n1}, n2={n2}, n3={n3}"
        )));
    }
    Ok(SinkhornConfig {
        p: p as u8,
        eps,
        lambda,
        clip,
        n1,
        n2,
        n3,
    })
}

/// Builds the compositional-solver settings from `[train]`. Defaults:
/// iters=2000, c_alpha=1, c_beta=1, radius=1000, eval_cadence=100.
pub fn train_cfg_from(cfg: &Config, seed: u64, clip_leaves: bool) -> CliResult<TrainConfig> {
    let tcfg = TrainConfig {
        iters: cfg.get_usize("train.iters", 2000)?,
        c_alpha: cfg.get_f64("train.c_alpha", 1.0)?,
        c_beta: cfg.get_f64("train.c_beta", 1.0)?,
        radius: cfg.get_f64("train.radius", 1e3)?,
        clip_leaves,
        eval_cadence: cfg.get_usize("train.eval_cadence", 100)?,
        seed,
    };
    tcfg.validate()
        .map_err(|e| CliError::validation(anyhow!("{e}")))?;
    Ok(tcfg)
}

/// Full-batch gradient-descent settings for the ERM and KL baselines.
#[derive(Debug, Clone, Copy)]
pub struct GdParams {
    pub steps: usize,
    pub rate: f64,
}

/// Reads `train.gd_steps` (500) and `train.gd_rate` (0.05).
pub fn gd_params_from(cfg: &Config) -> CliResult<GdParams> {
    let steps = cfg.get_usize("train.gd_steps", 500)?;
    let rate = cfg.get_f64("train.gd_rate", 0.05)?;
    if steps < 1 || !(rate > 0.0) {
        return Err(CliError::validation(anyhow!(
            "need train.gd_steps ≥ 1 and train.gd_rate > 0, got {steps}, {rate}"
        )));
    }
    Ok(GdParams { steps, rate })
}

/// Reads the `[policy]` shape keys relevant to `kind`: srf uses
/// `policy.trees` (20), `policy.depth` (default ⌈log₂ d_x⌉+1), and
/// `policy.tau` (1.0); nn2 uses `policy.hidden` (default 64·d_x).
/// Depth and width defaults depend on the data dimension, so absent
/// keys stay `None` and the policy initializer fills them per dataset.
pub fn policy_hyper_from(cfg: &Config, kind: PolicyKind) -> CliResult<PolicyHyper> {
    let mut hyper = PolicyHyper::default();
    match kind {
        PolicyKind::Srf => {
            hyper.trees = Some(cfg.get_usize("policy.trees", 20)?);
            hyper.depth = cfg.opt_usize("policy.depth")?;
            hyper.tau = Some(cfg.get_f64("policy.tau", 1.0)?);
        }
        PolicyKind::Nn2 => {
            hyper.hidden = cfg.opt_usize("policy.hidden")?;
        }
    }
    Ok(hyper)
}

/// A loaded dataset plus the column names used for reports.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub ds: Dataset,
    pub feature_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

/// Default column names x1..x_{d_x} / y1..y_{d_y}.
pub fn default_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("{prefix}{j}")).collect()
}

/// Loads the dataset named by `[data]`: `data.source = synthetic`
/// (default) draws from the application's generator with the given
/// seed; `data.source = csv` reads `data.path` selecting
/// `data.feature_cols` and `data.outcome_cols` by header name.
///
/// Synthetic keys: newsvendor/inventory `data.n` (200), `data.d_x` (5),
/// and newsvendor `data.c_amp` (1.7); portfolio `data.n_days` (756),
/// `data.d_x` (5), `data.d_y` (60 universe assets).
pub fn load_data(cfg: &Config, app_name: &str, data_seed: u64) -> CliResult<DataSource> {
    let source = cfg.get_str("data.source", "synthetic");
    match source.as_str() {
        "synthetic" => {
            let ds = match app_name {
                "newsvendor" => {
                    let gen = NewsvendorGenConfig {
                        n: cfg.get_usize("data.n", 200)?,
                        d_x: cfg.get_usize("data.d_x", 5)?,
                        c_amp: cfg.get_f64("data.c_amp", 1.7)?,
                        seed: data_seed,
                        ..NewsvendorGenConfig::default()
                    };
                    generate_newsvendor(&gen)
                }
                "inventory" => {
                    let gen = InventoryGenConfig {
                        n: cfg.get_usize("data.n", 200)?,
                        d_x: cfg.get_usize("data.d_x", 5)?,
                        seed: data_seed,
                    };
                    generate_inventory(&gen)
                }
                "portfolio" => {
                    let gen = PortfolioGenConfig {
                        n_days: cfg.get_usize("data.n_days", 756)?,
                        d_x: cfg.get_usize("data.d_x", 5)?,
                        d_y: cfg.get_usize("data.d_y", 60)?,
                        seed: data_seed,
                    };
                    generate_portfolio(&gen)
                }
                other => {
                    return Err(CliError::validation(anyhow!(
                        "no synthetic generator for application `{other}`"
                    )))
                }
            }
            .map_err(|e| CliError::validation(anyhow!("generator: {e}")))?;
            let feature_names = default_names("x", ds.d_x);
            let outcome_names = default_names("y", ds.d_y);
            Ok(DataSource {
                ds,
                feature_names,
                outcome_names,
            })
        }
        "csv" => {
            let path = cfg.require_str("data.path")?;
            let feature_names = cfg.require_str_list("data.feature_cols")?;
            let outcome_names = cfg.require_str_list("data.outcome_cols")?;
            let ds = csdro::data::load_csv(
                std::path::Path::new(&path),
                &feature_names,
                &outcome_names,
            )
            .map_err(|e| CliError::validation(anyhow!("loading {path}: {e}")))?;
            Ok(DataSource {
                ds,
                feature_names,
                outcome_names,
            })
        }
        other => Err(CliError::validation(anyhow!(
            "data.source must be synthetic or csv, got `{other}`"
        ))),
    }
}

/// The unconditional decision used to initialize policy leaves: the
/// componentwise mean outcome mapped to decision space. For the
/// portfolio this is the equal-weight portfolio (zero logits) anchored
/// at its mean window return.
pub fn mean_outcome_decision(app: &Application, ds: &Dataset) -> Vec<f64> {
    let n = ds.len() as f64;
    let mut mean_y = vec![0.0; ds.d_y];
    for row in &ds.rows {
        for (acc, v) in mean_y.iter_mut().zip(&row.y) {
            *acc += v / n;
        }
    }
    match app {
        Application::Newsvendor(_) | Application::Inventory(_) => {
            mean_y.iter().map(|v| v.max(0.0)).collect()
        }
        Application::Portfolio(_) => {
            let ew_return = mean_y.iter().sum::<f64>() / ds.d_y as f64;
            let mut raw = vec![0.0; ds.d_y + 1];
            raw[0] = ew_return;
            raw
        }
    }
}

/// Initializes a fresh policy for `app` on dataset `ds`, deriving the
/// parameter-init generator from the run seed.
pub fn fresh_policy(
    kind: PolicyKind,
    hyper: &PolicyHyper,
    app: &Application,
    ds: &Dataset,
    seed: u64,
) -> CliResult<Policy> {
    let mean_dec = mean_outcome_decision(app, ds);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, streams::INIT));
    init_policy(kind, ds.d_x, app.decision_dim(), &mean_dec, hyper, &mut rng)
        .map_err(|e| CliError::validation(anyhow!("policy init: {e}")))
}

/// Trains `policy` on `train` under `model`, returning the trained
/// policy and its objective trace.
pub fn train_model(
    model: ModelKind,
    app: &Application,
    train: &Dataset,
    policy: Policy,
    scfg: &SinkhornConfig,
    tcfg: &TrainConfig,
    gd: &GdParams,
) -> CliResult<(Policy, Vec<TraceRecord>)> {
    let result = match model {
        ModelKind::Erm => train_gd(
            GdObjective::Erm,
            policy,
            app,
            train,
            gd.steps,
            gd.rate,
            tcfg.eval_cadence,
        ),
        ModelKind::KlDro => train_gd(
            GdObjective::Kl {
                lambda: scfg.lambda,
            },
            policy,
            app,
            train,
            gd.steps,
            gd.rate,
            tcfg.eval_cadence,
        ),
        ModelKind::Sdro => train_sdro(train, policy, app, scfg, tcfg),
        ModelKind::CausalSdro => {
            let grouped = group_conditionals(train)
                .map_err(|e| CliError::validation(anyhow!("grouping: {e}")))?;
            train_causal_sdro(&grouped, policy, app, scfg, tcfg)
        }
    };
    result.map_err(|e| CliError::runtime(anyhow!("training ({}): {e}", model.name())))
}

/// Mean loss of the mapped policy decisions over a test set.
pub fn mean_test_loss(policy: &Policy, app: &Application, test: &Dataset) -> CliResult<f64> {
    erm_objective(policy, app, test)
        .map_err(|e| CliError::runtime(anyhow!("test evaluation: {e}")))
}

/// Convenience: the loss of one raw policy output against one outcome.
pub fn row_loss(app: &Application, raw: &[f64], y: &[f64]) -> CliResult<f64> {
    app.loss_raw(raw, y)
        .map_err(|e| CliError::runtime(anyhow!("loss evaluation: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn mix_seed_separates_streams() {
        let a = mix_seed(7, streams::INIT);
        let b = mix_seed(7, streams::DATA);
        let c = mix_seed(8, streams::INIT);
        assert_ne!(a, b, "streams must decorrelate");
        assert_ne!(a, c, "seeds must decorrelate");
        assert_eq!(a, mix_seed(7, streams::INIT), "mixing is deterministic");
    }

    #[test]
    fn dro_models_require_explicit_lambda() {
        let cfg = Config::parse("[sinkhorn]\neps = 0.1\n").unwrap();
        let err = sinkhorn_from(&cfg, true).expect_err("lambda must be demanded");
        assert!(
            err.to_string().contains("lambda"),
            "error should mention lambda, got: {err}"
        );
        let ok = Config::parse("[sinkhorn]\nlambda = 0.5\n").unwrap();
        let scfg = sinkhorn_from(&ok, true).unwrap();
        assert_eq!(scfg.lambda, 0.5);
        assert_eq!(scfg.p, 2, "defaults fill the rest");
    }

    #[test]
    fn inventory_costs_default_to_benchmark_data() {
        let cfg = Config::parse("").unwrap();
        let app = build_application(&cfg, "inventory", 3).unwrap();
        match app {
            Application::Inventory(c) => {
                assert_eq!(c.h, vec![1.0, 0.7, 0.6]);
                assert_eq!(c.b, vec![1.8, 1.6, 1.2]);
                assert_eq!(c.s[0][1], 1.7);
                assert_eq!(c.s[0][2], 2.0);
                assert_eq!(c.s[1][2], 1.5);
                assert_eq!(c.s[1][0], f64::INFINITY);
            }
            other => panic!("expected inventory, got {other:?}"),
        }
    }

    #[test]
    fn newsvendor_costs_broadcast_scalars() {
        let cfg = Config::parse("[loss]\nh = 0.6\nb = 1.0\n").unwrap();
        let app = build_application(&cfg, "newsvendor", 2).unwrap();
        match app {
            Application::Newsvendor(c) => {
                assert_eq!(c.h, vec![0.6, 0.6]);
                assert_eq!(c.b, vec![1.0, 1.0]);
            }
            other => panic!("expected newsvendor, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_newsvendor_dataset_has_documented_shape() {
        let cfg = Config::parse("[data]\nn = 50\nd_x = 3\n").unwrap();
        let src = load_data(&cfg, "newsvendor", 5).unwrap();
        assert_eq!(src.ds.len(), 50);
        assert_eq!(src.ds.d_x, 3);
        assert_eq!(src.ds.d_y, 1);
        assert_eq!(src.feature_names, vec!["x1", "x2", "x3"]);
        assert_eq!(src.outcome_names, vec!["y1"]);
    }

    #[test]
    fn portfolio_mean_decision_is_equal_weight_logits() {
        let cfg = Config::parse("[data]\nn_days = 10\nd_y = 4\n").unwrap();
        let src = load_data(&cfg, "portfolio", 1).unwrap();
        let app = build_application(&Config::parse("").unwrap(), "portfolio", 4).unwrap();
        let dec = mean_outcome_decision(&app, &src.ds);
        assert_eq!(dec.len(), 5, "anchor plus one logit per asset");
        assert!(dec[1..].iter().all(|&v| v == 0.0), "zero logits → 1/d each");
        let mapped = app.map_decision(&dec);
        for w in &mapped[1..] {
            assert!((w - 0.25).abs() < 1e-12, "softmax of zeros is uniform");
        }
    }
}
