//! Table replication harness: generates data, fits every model cell, scores
//! it and renders the tables with pass/fail verdicts.
//!
//! Cells run on a bounded rayon pool; results are collected in cell order, so
//! outputs do not depend on scheduling.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    bundled_daily_series, censor_fleet, censor_partial, gen_synthetic, gen_trip_table,
    lagged_dataset, split, zero_quantile_fraction, CensoredDataset, MixtureQuantiles, Noise,
    SplitScheme, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::losses::Side;
use crate::metrics::{interval_metrics, subset_report, Prediction, Subset};
use crate::models::{predict_rows, InitScheme, MirrorWrapper, Net, NetSpec};
use crate::seeds::derive_seed;
use crate::tobit::{tobit_fit, tobit_quantiles, TobitOptions};
use crate::training::{
    fit, fit_with_lr_grid, impute_thresholds, latent_mean_ratio, mirror_fit, select_initialization,
    FitResult, InitScore, LossKind, TrainConfig,
};

/// Published Table 1 cells, rows = noise, columns = theta (0.05, 0.50, 0.95), percent.
pub const PAPER_TABLE1: [[f64; 3]; 3] = [[62.7, 23.9, 2.0], [68.0, 23.9, 11.4], [54.1, 23.9, 4.6]];

/// Published all-test R^2 at theta = 0.05 on the standard Gaussian data:
/// TL+linear, C+linear, C+ELU.
pub const PAPER_SG_005_R2: [f64; 3] = [0.220, 0.499, 0.690];

/// `2 * Phi^{-1}(0.95)`.
pub const UNIT_GAUSSIAN_MIL: f64 = 3.289_707_253_902_944;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Table {
    T1,
    T2,
    T3,
    T4Synthetic,
    BikeSynthetic,
}

impl Table {
    pub const ALL: [Table; 5] = [
        Table::T1,
        Table::T2,
        Table::T3,
        Table::T4Synthetic,
        Table::BikeSynthetic,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Table::T1 => "t1",
            Table::T2 => "t2",
            Table::T3 => "t3",
            Table::T4Synthetic => "t4-synthetic",
            Table::BikeSynthetic => "bike-synthetic",
        }
    }
}

impl std::str::FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Table::ALL
            .into_iter()
            .find(|t| t.slug() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown table `{s}` (expected t1, t2, t3, t4-synthetic, bike-synthetic)"
                ))
            })
    }
}

/// Models compared across the tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    /// Linear neuron, plain tilted loss.
    TlLinear,
    /// Linear neuron, censored loss.
    CLinear,
    /// ELU neuron, censored loss.
    CElu,
    /// Linear neuron with input dropout and L2, censored loss.
    CRegLinear,
    /// LSTM over the lags with a linear readout, censored loss.
    CLstm,
    Tobit,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::TlLinear,
        ModelId::CLinear,
        ModelId::CElu,
        ModelId::CRegLinear,
        ModelId::CLstm,
        ModelId::Tobit,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            ModelId::TlLinear => "tl-linear",
            ModelId::CLinear => "c-linear",
            ModelId::CElu => "c-elu",
            ModelId::CRegLinear => "c-reg-linear",
            ModelId::CLstm => "c-lstm",
            ModelId::Tobit => "tobit",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelId::TlLinear => "TL+linear",
            ModelId::CLinear => "C+linear",
            ModelId::CElu => "C+ELU",
            ModelId::CRegLinear => "C Reg+linear",
            ModelId::CLstm => "C LSTM+linear",
            ModelId::Tobit => "Tobit",
        }
    }

    pub fn net_spec(self) -> NetSpec {
        match self {
            ModelId::TlLinear | ModelId::CLinear | ModelId::Tobit => NetSpec::linear(),
            ModelId::CElu => NetSpec::elu(),
            ModelId::CRegLinear => NetSpec::regularized(),
            ModelId::CLstm => NetSpec::lstm(),
        }
    }

    pub fn is_censorship_aware(self) -> bool {
        !matches!(self, ModelId::TlLinear)
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.slug() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// A fitted quantile predictor in the orientation of the data it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    Direct { net: Net },
    Mirrored { wrapper: MirrorWrapper },
}

impl Predictor {
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Predictor::Direct { net } => predict_rows(net, rows),
            Predictor::Mirrored { wrapper } => rows.iter().map(|x| wrapper.predict(x)).collect(),
        }
    }
}

/// Fits one quantile-regression model at level `theta`. Censored losses on
/// right-censored data go through the mirror; the tilted loss needs none.
pub fn fit_quantile_model(
    model: ModelId,
    theta: f64,
    train: &CensoredDataset,
    val: &CensoredDataset,
    cfg: &TrainConfig,
    init: InitScheme,
    use_lr_grid: bool,
) -> Result<(Predictor, FitResult)> {
    if model == ModelId::Tobit {
        return Err(Error::Usage(
            "Tobit quantiles come from tobit_fit, not a quantile loss".into(),
        ));
    }
    let net = model
        .net_spec()
        .build(train.n_covariates())?
        .with_init(init);
    if model.is_censorship_aware() && train.side == Side::Right {
        let (wrapper, result) = mirror_fit(
            &net,
            LossKind::Censored { theta },
            train,
            val,
            cfg,
            use_lr_grid,
        )?;
        return Ok((Predictor::Mirrored { wrapper }, result));
    }
    let loss = if model.is_censorship_aware() {
        LossKind::Censored { theta }
    } else {
        LossKind::Tilted { theta }
    };
    let result = if use_lr_grid {
        fit_with_lr_grid(&net, loss, train, val, cfg)?
    } else {
        fit(&net, loss, train, val, cfg)?
    };
    Ok((
        Predictor::Direct {
            net: result.net.clone(),
        },
        result,
    ))
}

/// Harness settings shared by all tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateConfig {
    pub master_seed: u64,
    /// Replicate seeds per synthetic cell (Tables 1-3).
    pub synthetic_replicates: usize,
    pub n: usize,
    pub split: [f64; 3],
    /// Score mixture ground truth with the exact mixture law instead of the
    /// published closed form.
    pub exact_mixture: bool,
    /// Replace every synthetic noise by zero (debugging hook).
    pub zero_noise: bool,
    pub train: TrainConfig,
    /// Censoring replicates per (gamma, c-range) and per fleet share.
    pub real_replicates: usize,
    /// Random initializations per replicate in the partial-censoring protocol.
    pub inits: usize,
    pub gammas: Vec<f64>,
    pub c_ranges: Vec<(f64, f64)>,
    pub alphas: Vec<f64>,
    pub series_days: usize,
    pub lags: usize,
    pub fleet_vehicles: usize,
    pub fleet_rate: f64,
    pub fleet_amplitude: f64,
    /// Learning-rate grid search for the count-series protocols.
    pub real_lr_grid: bool,
    pub real_models: Vec<ModelId>,
    pub jobs: usize,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            synthetic_replicates: 20,
            n: 1000,
            split: [0.62, 0.15, 0.23],
            exact_mixture: false,
            zero_noise: false,
            train: TrainConfig::default(),
            real_replicates: 3,
            inits: 3,
            gammas: vec![0.0, 0.3, 0.6, 0.9],
            c_ranges: vec![(0.01, 0.33), (0.34, 0.66), (0.67, 0.99)],
            alphas: vec![0.1, 0.2, 0.3, 0.4],
            series_days: 730,
            lags: 7,
            fleet_vehicles: 300,
            fleet_rate: 2.0,
            fleet_amplitude: 0.3,
            real_lr_grid: true,
            real_models: vec![
                ModelId::TlLinear,
                ModelId::CLinear,
                ModelId::CRegLinear,
                ModelId::CLstm,
            ],
            jobs: 1,
        }
    }
}

impl ReplicateConfig {
    /// The paper's full bike-sharing grid: ten gammas, ten replicates and ten
    /// initializations.
    pub fn full_grid(mut self) -> Self {
        self.gammas = (0..10).map(|k| k as f64 / 10.0).collect();
        self.real_replicates = 10;
        self.inits = 10;
        self
    }

    fn mixture_mode(&self) -> MixtureQuantiles {
        if self.exact_mixture {
            MixtureQuantiles::Exact
        } else {
            MixtureQuantiles::ClosedForm
        }
    }

    fn noise(&self, noise: Noise) -> Noise {
        if self.zero_noise {
            Noise::Zero
        } else {
            noise
        }
    }

    fn seed(&self, path: &str) -> u64 {
        derive_seed(self.master_seed, path)
    }

    /// Synthetic draw of replicate `rep`; the seed path omits the noise so
    /// the covariates coincide across noises.
    fn synthetic(&self, table: &str, noise: Noise, rep: usize) -> Result<CensoredDataset> {
        let spec = SyntheticSpec::new(
            self.noise(noise),
            self.n,
            self.seed(&format!("{table}/rep{rep}/data")),
        )
        .with_mixture_quantiles(self.mixture_mode());
        gen_synthetic(&spec)
    }

    fn synthetic_split(
        &self,
        table: &str,
        noise: Noise,
        rep: usize,
    ) -> Result<(CensoredDataset, CensoredDataset, CensoredDataset)> {
        let ds = self.synthetic(table, noise, rep)?;
        let [p_train, p_val, p_test] = self.split;
        split(
            &ds,
            &SplitScheme::Random {
                p_train,
                p_val,
                p_test,
                seed: self.seed(&format!("{table}/rep{rep}/split")),
            },
        )
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    /// The synthetic tables' training setup: fixed learning rate, weights
    /// initialized to one.
    fn synthetic_train(&self) -> TrainConfig {
        self.train.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(criterion: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion: criterion.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.criterion,
            self.detail
        )
    }
}

/// Output of one replicated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRun {
    pub table: Table,
    pub rendered: String,
    pub raw_csv: String,
    pub verdicts: Vec<Verdict>,
}

impl TableRun {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

pub fn run_table(table: Table, cfg: &ReplicateConfig) -> Result<TableRun> {
    cfg.train.validate()?;
    let pool = cfg.pool()?;
    pool.install(|| match table {
        Table::T1 => run_t1(cfg),
        Table::T2 => run_t2(cfg),
        Table::T3 => run_t3(cfg),
        Table::T4Synthetic => run_fleet(cfg),
        Table::BikeSynthetic => run_bike(cfg),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------- Table 1

/// Draws `n` latent noise values and checks the coverage of the true
/// (0.05, 0.95) quantile pair.
pub fn ground_truth_coverage(
    noise: Noise,
    n: usize,
    seed: u64,
    mode: MixtureQuantiles,
) -> Result<f64> {
    let spec = SyntheticSpec::new(noise, n, seed).with_mixture_quantiles(mode);
    let ds = gen_synthetic(&spec)?;
    let lo = ds.latent_quantiles_for(0.05)?;
    let hi = ds.latent_quantiles_for(0.95)?;
    Ok(interval_metrics(lo, hi, ds.y_star()?)?.icp)
}

fn run_t1(cfg: &ReplicateConfig) -> Result<TableRun> {
    let thetas = [0.05, 0.50, 0.95];
    let cells: Vec<(usize, usize)> = (0..3)
        .flat_map(|j| (0..cfg.synthetic_replicates).map(move |r| (j, r)))
        .collect();
    let results: Vec<(f64, [f64; 3])> = cells
        .par_iter()
        .map(|&(j, r)| {
            let ds = cfg.synthetic("t1", Noise::BENCHMARKS[j], r)?;
            let mut z = [0.0; 3];
            for (k, &t) in thetas.iter().enumerate() {
                z[k] = zero_quantile_fraction(&ds, t)?;
            }
            Ok((ds.censored_fraction(), z))
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::new();
    let mut cens = [0.0; 3];
    let mut zero = [[0.0; 3]; 3];
    for (&(j, r), (c, z)) in cells.iter().zip(&results) {
        cens[j] += c / cfg.synthetic_replicates as f64;
        for k in 0..3 {
            zero[j][k] += z[k] / cfg.synthetic_replicates as f64;
            raw.push(vec![
                Noise::BENCHMARKS[j].slug().to_string(),
                r.to_string(),
                thetas[k].to_string(),
                c.to_string(),
                z[k].to_string(),
            ]);
        }
    }

    let mut out = String::new();
    writeln!(
        out,
        "Percent of zero conditional quantiles (mean over {} seeds)",
        cfg.synthetic_replicates
    )
    .unwrap();
    writeln!(
        out,
        "{:<20}{:>12}{:>12}{:>12}{:>12}",
        "Dataset", "theta=0.05", "theta=0.50", "theta=0.95", "censored"
    )
    .unwrap();
    for j in 0..3 {
        writeln!(
            out,
            "{:<20}{:>11.1}%{:>11.1}%{:>11.1}%{:>11.1}%",
            Noise::BENCHMARKS[j].label(),
            100.0 * zero[j][0],
            100.0 * zero[j][1],
            100.0 * zero[j][2],
            100.0 * cens[j]
        )
        .unwrap();
    }

    let mut verdicts = Vec::new();
    let cens_ok = cens.iter().all(|c| (c - 0.30).abs() <= 0.03);
    verdicts.push(Verdict::new(
        "AC1 censored fraction 0.30 +/- 0.03",
        cens_ok,
        format!("SG {:.4}, Het {:.4}, Mix {:.4}", cens[0], cens[1], cens[2]),
    ));
    let mut worst = (0.0_f64, String::new());
    for j in 0..3 {
        for k in 0..3 {
            let d = (100.0 * zero[j][k] - PAPER_TABLE1[j][k]).abs();
            if d > worst.0 {
                worst = (
                    d,
                    format!("{} theta={}", Noise::BENCHMARKS[j].label(), thetas[k]),
                );
            }
        }
    }
    verdicts.push(Verdict::new(
        "AC2 Table 1 cells within 5 points",
        worst.0 <= 5.0,
        format!("largest deviation {:.2} points at {}", worst.0, worst.1),
    ));
    let cover: Vec<f64> = Noise::BENCHMARKS
        .iter()
        .map(|&nz| {
            ground_truth_coverage(
                nz,
                10_000,
                cfg.seed(&format!("t1/coverage/{}", nz.slug())),
                MixtureQuantiles::Exact,
            )
        })
        .collect::<Result<_>>()?;
    verdicts.push(Verdict::new(
        "AC7 true-quantile coverage 0.90 +/- 0.02",
        cover.iter().all(|c| (c - 0.9).abs() <= 0.02),
        format!(
            "SG {:.4}, Het {:.4}, Mix {:.4}",
            cover[0], cover[1], cover[2]
        ),
    ));

    Ok(TableRun {
        table: Table::T1,
        rendered: out,
        raw_csv: csv_text(
            &[
                "noise",
                "replicate",
                "theta",
                "censored_fraction",
                "zero_quantile_fraction",
            ],
            raw,
        )?,
        verdicts,
    })
}

// ---------------------------------------------------------------- Table 2

const T2_MODELS: [ModelId; 3] = [ModelId::TlLinear, ModelId::CLinear, ModelId::CElu];
const THETAS: [f64; 3] = [0.05, 0.50, 0.95];

/// Mean metrics for one (subset, theta, model, noise) cell.
#[derive(Debug, Clone, Copy, Default)]
struct PointCell {
    r2: f64,
    mae: f64,
    rmse: f64,
}

fn run_t2(cfg: &ReplicateConfig) -> Result<TableRun> {
    let cells: Vec<(usize, usize)> = (0..3)
        .flat_map(|j| (0..cfg.synthetic_replicates).map(move |r| (j, r)))
        .collect();
    let train_cfg = cfg.synthetic_train();
    // per replicate: [theta][model][subset] -> (r2, mae, rmse, n)
    type Scores = Vec<(usize, usize, usize, Option<f64>, f64, f64, usize)>;
    let results: Vec<Scores> = cells
        .par_iter()
        .map(|&(j, r)| {
            let (train, val, test) = cfg.synthetic_split("t2", Noise::BENCHMARKS[j], r)?;
            let mut out = Vec::new();
            for (ti, &theta) in THETAS.iter().enumerate() {
                for (mi, &model) in T2_MODELS.iter().enumerate() {
                    let (pred, _) = fit_quantile_model(
                        model,
                        theta,
                        &train,
                        &val,
                        &train_cfg,
                        InitScheme::Ones,
                        false,
                    )?;
                    let p = pred.predict(&test.x)?;
                    for (si, subset) in Subset::BOTH.into_iter().enumerate() {
                        let rep = subset_report(
                            &Prediction::Quantile { theta, preds: &p },
                            &test,
                            subset,
                        )?;
                        out.push((
                            ti,
                            mi,
                            si,
                            rep.r2,
                            rep.mae.unwrap(),
                            rep.rmse.unwrap(),
                            rep.n,
                        ));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::new();
    let mut acc = [[[[PointCell::default(); 3]; 3]; 3]; 2]; // [subset][theta][model][noise]
    let mut r2_lists = vec![vec![vec![vec![Vec::new(); 3]; 3]; 3]; 2];
    let k = cfg.synthetic_replicates as f64;
    for (&(j, r), scores) in cells.iter().zip(&results) {
        for &(ti, mi, si, r2, mae, rmse, n) in scores {
            raw.push(vec![
                Noise::BENCHMARKS[j].slug().to_string(),
                r.to_string(),
                THETAS[ti].to_string(),
                T2_MODELS[mi].slug().to_string(),
                Subset::BOTH[si].slug().to_string(),
                n.to_string(),
                fmt_opt(r2),
                mae.to_string(),
                rmse.to_string(),
            ]);
            let c = &mut acc[si][ti][mi][j];
            c.r2 += r2.unwrap_or(f64::NAN) / k;
            c.mae += mae / k;
            c.rmse += rmse / k;
            r2_lists[si][ti][mi][j].push(r2.unwrap_or(f64::NAN));
        }
    }

    let mut out = String::new();
    writeln!(
        out,
        "Predictive quality for conditional quantiles of y* (mean over {} seeds)",
        cfg.synthetic_replicates
    )
    .unwrap();
    write!(out, "{:<6}{:<14}", "theta", "Model").unwrap();
    for nz in Noise::BENCHMARKS {
        write!(out, "| {:<26}", nz.label()).unwrap();
    }
    writeln!(out).unwrap();
    write!(out, "{:<20}", "").unwrap();
    for _ in 0..3 {
        write!(out, "|{:>8} {:>8} {:>8} ", "R2", "MAE", "RMSE").unwrap();
    }
    writeln!(out).unwrap();
    for (si, subset) in ["All Test Data", "Only Non-Censored"].iter().enumerate() {
        writeln!(out, "--- {subset} ---").unwrap();
        for ti in 0..3 {
            for mi in 0..3 {
                write!(
                    out,
                    "{:<6}{:<14}",
                    if mi == 0 {
                        format!("{:.2}", THETAS[ti])
                    } else {
                        String::new()
                    },
                    T2_MODELS[mi].label()
                )
                .unwrap();
                for j in 0..3 {
                    let c = acc[si][ti][mi][j];
                    write!(out, "|{:>8.3} {:>8.3} {:>8.3} ", c.r2, c.mae, c.rmse).unwrap();
                }
                writeln!(out).unwrap();
            }
        }
    }

    let mut verdicts = Vec::new();
    // median row
    let (tl, cl) = (0, 1);
    let mut fails = Vec::new();
    let mut detail = Vec::new();
    for j in 0..3 {
        let c = acc[0][1][cl][j];
        let t = acc[0][1][tl][j];
        detail.push(format!(
            "{}: C+linear R2 {:.4} MAE {:.4}, TL+linear R2 {:.4}",
            Noise::BENCHMARKS[j].slug(),
            c.r2,
            c.mae,
            t.r2
        ));
        if !(c.r2 >= 0.99 && c.mae <= 0.05) {
            fails.push(format!("C+linear {}", Noise::BENCHMARKS[j].slug()));
        }
        if !(0.85..=0.95).contains(&t.r2) {
            fails.push(format!("TL+linear {}", Noise::BENCHMARKS[j].slug()));
        }
    }
    // per (noise, theta) cell the best censorship-aware model must match the unaware one
    let mut order_fails = Vec::new();
    for si in 0..2 {
        for ti in 0..3 {
            for j in 0..3 {
                let tl_r2 = acc[si][ti][tl][j].r2;
                let best = [1, 2]
                    .map(|mi| acc[si][ti][mi][j].r2)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                if !(best >= tl_r2) {
                    order_fails.push(format!(
                        "{} {} theta={} best aware {best:.3} < TL+linear {tl_r2:.3}",
                        Subset::BOTH[si].slug(),
                        Noise::BENCHMARKS[j].slug(),
                        THETAS[ti],
                    ));
                }
            }
        }
    }
    verdicts.push(Verdict::new(
        "AC3 median row accuracy",
        fails.is_empty(),
        if fails.is_empty() {
            detail.join("; ")
        } else {
            format!("failed: {}; {}", fails.join(", "), detail.join("; "))
        },
    ));
    verdicts.push(Verdict::new(
        "AC3 best censorship-aware >= unaware R2 in every (noise, theta) cell",
        order_fails.is_empty(),
        if order_fails.is_empty() {
            "all 36 comparisons hold".into()
        } else {
            format!("violations: {}", order_fails.join(", "))
        },
    ));
    let sg = [acc[0][0][0][0].r2, acc[0][0][1][0].r2, acc[0][0][2][0].r2];
    let ordered = sg[2] > sg[1] && sg[1] > sg[0];
    let close = sg
        .iter()
        .zip(PAPER_SG_005_R2)
        .all(|(a, b)| (a - b).abs() <= 0.15);
    verdicts.push(Verdict::new(
        "AC4 theta=0.05 SG ordering C+ELU > C+linear > TL+linear, within 0.15 of paper",
        ordered && close,
        format!(
            "C+ELU {:.3} (sd {:.3}), C+linear {:.3} (sd {:.3}), TL+linear {:.3} (sd {:.3}); paper 0.690/0.499/0.220",
            sg[2],
            std_dev(&r2_lists[0][0][2][0]),
            sg[1],
            std_dev(&r2_lists[0][0][1][0]),
            sg[0],
            std_dev(&r2_lists[0][0][0][0])
        ),
    ));

    Ok(TableRun {
        table: Table::T2,
        rendered: out,
        raw_csv: csv_text(
            &[
                "noise",
                "replicate",
                "theta",
                "model",
                "subset",
                "n",
                "r2",
                "mae",
                "rmse",
            ],
            raw,
        )?,
        verdicts,
    })
}

// ---------------------------------------------------------------- Table 3

fn run_t3(cfg: &ReplicateConfig) -> Result<TableRun> {
    let cells: Vec<(usize, usize)> = (0..3)
        .flat_map(|j| (0..cfg.synthetic_replicates).map(move |r| (j, r)))
        .collect();
    let train_cfg = cfg.synthetic_train();
    // per replicate: [model][subset] -> (icp, mil, n)
    let results: Vec<[[(f64, f64, usize); 2]; 2]> = cells
        .par_iter()
        .map(|&(j, r)| {
            let (train, val, test) = cfg.synthetic_split("t3", Noise::BENCHMARKS[j], r)?;
            let (tobit, _) = tobit_fit(&train, &val, &train_cfg, &TobitOptions::default())?;
            let t_lo = test
                .x
                .iter()
                .map(|x| tobit_quantiles(&tobit, x, 0.05))
                .collect::<Result<Vec<_>>>()?;
            let t_hi = test
                .x
                .iter()
                .map(|x| tobit_quantiles(&tobit, x, 0.95))
                .collect::<Result<Vec<_>>>()?;
            let (lo, _) = fit_quantile_model(
                ModelId::CLinear,
                0.05,
                &train,
                &val,
                &train_cfg,
                InitScheme::Ones,
                false,
            )?;
            let (hi, _) = fit_quantile_model(
                ModelId::CLinear,
                0.95,
                &train,
                &val,
                &train_cfg,
                InitScheme::Ones,
                false,
            )?;
            let (c_lo, c_hi) = (lo.predict(&test.x)?, hi.predict(&test.x)?);
            let mut out = [[(0.0, 0.0, 0); 2]; 2];
            for (mi, (l, h)) in [(&t_lo, &t_hi), (&c_lo, &c_hi)].into_iter().enumerate() {
                for (si, subset) in Subset::BOTH.into_iter().enumerate() {
                    let rep =
                        subset_report(&Prediction::Interval { lower: l, upper: h }, &test, subset)?;
                    out[mi][si] = (rep.icp.unwrap(), rep.mil.unwrap(), rep.n);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let labels = ["Tobit", "C+linear"];
    let mut raw = Vec::new();
    let mut acc = [[[(0.0, 0.0); 2]; 2]; 3]; // [noise][model][subset] -> (icp, mil)
    let k = cfg.synthetic_replicates as f64;
    for (&(j, r), res) in cells.iter().zip(&results) {
        for mi in 0..2 {
            for si in 0..2 {
                let (icp, mil, n) = res[mi][si];
                acc[j][mi][si].0 += icp / k;
                acc[j][mi][si].1 += mil / k;
                raw.push(vec![
                    Noise::BENCHMARKS[j].slug().to_string(),
                    r.to_string(),
                    labels[mi].to_string(),
                    Subset::BOTH[si].slug().to_string(),
                    n.to_string(),
                    icp.to_string(),
                    mil.to_string(),
                ]);
            }
        }
    }

    let mut out = String::new();
    writeln!(
        out,
        "Non-parametric QR vs. parametric Tobit (mean over {} seeds)",
        cfg.synthetic_replicates
    )
    .unwrap();
    writeln!(
        out,
        "{:<20}{:<10}| {:>7} {:>7} | {:>7} {:>7}",
        "", "", "All", "", "NonCens", ""
    )
    .unwrap();
    writeln!(
        out,
        "{:<20}{:<10}| {:>7} {:>7} | {:>7} {:>7}",
        "Dataset", "Model", "ICP", "MIL", "ICP", "MIL"
    )
    .unwrap();
    for j in 0..3 {
        for mi in 0..2 {
            let a = acc[j][mi];
            writeln!(
                out,
                "{:<20}{:<10}| {:>7.3} {:>7.3} | {:>7.3} {:>7.3}",
                if mi == 0 {
                    Noise::BENCHMARKS[j].label()
                } else {
                    ""
                },
                labels[mi],
                a[0].0,
                a[0].1,
                a[1].0,
                a[1].1
            )
            .unwrap();
        }
    }

    let mils: Vec<f64> = (0..3)
        .flat_map(|j| [acc[j][0][0].1, acc[j][0][1].1])
        .collect();
    let mil_ok = mils.iter().all(|m| (m - 3.290).abs() <= 0.005);
    let sg_icp = acc[0][0][0].0;
    let cmp_ok = [1, 2]
        .iter()
        .all(|&j| (acc[j][1][1].0 - 0.9).abs() <= (acc[j][0][1].0 - 0.9).abs());
    let verdicts = vec![
        Verdict::new(
            "AC5 Tobit MIL 3.290 +/- 0.005 on every dataset",
            mil_ok,
            format!(
                "MILs {}",
                mils.iter()
                    .map(|m| format!("{m:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
        Verdict::new(
            "AC5 Tobit SG ICP 0.909 +/- 0.03",
            (sg_icp - 0.909).abs() <= 0.03,
            format!("ICP {sg_icp:.4}"),
        ),
        Verdict::new(
            "AC5 C+linear non-censored ICP at least as close to 0.9 as Tobit (Het, Mix)",
            cmp_ok,
            format!(
                "Het C {:.4} vs Tobit {:.4}; Mix C {:.4} vs Tobit {:.4}",
                acc[1][1][1].0, acc[1][0][1].0, acc[2][1][1].0, acc[2][0][1].0
            ),
        ),
    ];

    Ok(TableRun {
        table: Table::T3,
        rendered: out,
        raw_csv: csv_text(
            &["noise", "replicate", "model", "subset", "n", "icp", "mil"],
            raw,
        )?,
        verdicts,
    })
}

// ---------------------------------------------------------------- count series

/// Divides features, targets, thresholds and latent values by `s`.
pub fn scale_dataset(ds: &CensoredDataset, s: f64) -> CensoredDataset {
    let mut out = ds.clone();
    for row in &mut out.x {
        for v in &mut row[1..] {
            *v /= s;
        }
    }
    for v in out.y.iter_mut().chain(out.tau.iter_mut()) {
        *v /= s;
    }
    if let Some(ys) = &mut out.y_star {
        for v in ys {
            *v /= s;
        }
    }
    out
}

/// Interval fitted on scaled series data, reported in original units.
struct IntervalFit {
    val: (Vec<f64>, Vec<f64>),
    test: (Vec<f64>, Vec<f64>),
}

fn fit_interval(
    cfg: &ReplicateConfig,
    model: ModelId,
    parts: &[CensoredDataset; 3],
    scale: f64,
    init_seed: u64,
) -> Result<IntervalFit> {
    let [train, val, test] = parts;
    // each quantile net gets its own draw
    let init = |path: &str| InitScheme::StandardNormal {
        seed: derive_seed(init_seed, path),
    };
    let (lo, _) = fit_quantile_model(
        model,
        0.05,
        train,
        val,
        &cfg.train,
        init("lower"),
        cfg.real_lr_grid,
    )?;
    let (hi, _) = fit_quantile_model(
        model,
        0.95,
        train,
        val,
        &cfg.train,
        init("upper"),
        cfg.real_lr_grid,
    )?;
    let back = |v: Vec<f64>| v.into_iter().map(|q| q * scale).collect::<Vec<_>>();
    Ok(IntervalFit {
        val: (back(lo.predict(&val.x)?), back(hi.predict(&val.x)?)),
        test: (back(lo.predict(&test.x)?), back(hi.predict(&test.x)?)),
    })
}

/// Splits a lagged series consecutively and scales it by the observed
/// training mean. Returns the unscaled parts, the scaled parts and the scale.
fn prepare_series(
    lagged: &CensoredDataset,
) -> Result<([CensoredDataset; 3], [CensoredDataset; 3], f64)> {
    let (train, val, test) = split(lagged, &SplitScheme::ConsecutiveThirds)?;
    let s = mean(&train.y);
    if !(s > 0.0) {
        return Err(Error::Degenerate(format!("observed training mean is {s}")));
    }
    let scaled = [
        scale_dataset(&train, s),
        scale_dataset(&val, s),
        scale_dataset(&test, s),
    ];
    Ok(([train, val, test], scaled, s))
}

// ---------------------------------------------------------------- Table 4 stand-in

fn run_fleet(cfg: &ReplicateConfig) -> Result<TableRun> {
    let trips = gen_trip_table(
        cfg.series_days,
        cfg.fleet_vehicles,
        cfg.fleet_rate,
        cfg.fleet_amplitude,
        cfg.seed("fleet/trips"),
    )?;
    let models = &cfg.real_models;
    let cells: Vec<(usize, usize, usize)> = (0..cfg.alphas.len())
        .flat_map(|a| {
            (0..cfg.real_replicates).flat_map(move |r| (0..models.len()).map(move |m| (a, r, m)))
        })
        .collect();
    let results: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(a, r, m)| {
            let alpha = cfg.alphas[a];
            let ds = censor_fleet(
                &trips,
                alpha,
                cfg.seed(&format!("fleet/alpha{alpha}/rep{r}/censor")),
            )?;
            let lagged = lagged_dataset(&ds, cfg.lags)?;
            let (raw_parts, scaled, s) = prepare_series(&lagged)?;
            let ratio = mean(&ds.y) / mean(ds.y_star()?);
            let seed = cfg.seed(&format!(
                "fleet/alpha{alpha}/rep{r}/{}/init",
                models[m].slug()
            ));
            let f = fit_interval(cfg, models[m], &scaled, s, seed)?;
            let test = &raw_parts[2];
            let rep = subset_report(
                &Prediction::Interval {
                    lower: &f.test.0,
                    upper: &f.test.1,
                },
                test,
                Subset::AllTest,
            )?;
            Ok((rep.icp.unwrap(), rep.mil.unwrap(), ratio))
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::new();
    let na = cfg.alphas.len();
    let mut icps = vec![vec![Vec::new(); na]; models.len()];
    let mut mils = vec![vec![Vec::new(); na]; models.len()];
    let mut ratios = vec![Vec::new(); na];
    for (&(a, r, m), &(icp, mil, ratio)) in cells.iter().zip(&results) {
        icps[m][a].push(icp);
        mils[m][a].push(mil);
        if m == 0 {
            ratios[a].push(ratio);
        }
        raw.push(vec![
            cfg.alphas[a].to_string(),
            r.to_string(),
            models[m].slug().to_string(),
            icp.to_string(),
            mil.to_string(),
            ratio.to_string(),
        ]);
    }

    let mut out = String::new();
    writeln!(
        out,
        "Complete censoring by fleet reduction, synthetic trip table (directional; mean +/- sd over {} replicates)",
        cfg.real_replicates
    )
    .unwrap();
    write!(out, "{:<16}", "Model").unwrap();
    for &alpha in &cfg.alphas {
        write!(out, "| {:<26}", format!("alpha={:.0}%", alpha * 100.0)).unwrap();
    }
    writeln!(out).unwrap();
    for m in 0..models.len() {
        write!(out, "{:<16}", models[m].label()).unwrap();
        for a in 0..na {
            write!(
                out,
                "| {:.3}+/-{:.2} {:>7.1}+/-{:<5.1}",
                mean(&icps[m][a]),
                std_dev(&icps[m][a]),
                mean(&mils[m][a]),
                std_dev(&mils[m][a])
            )
            .unwrap();
        }
        writeln!(out).unwrap();
    }

    let mut verdicts = Vec::new();
    if let Some(a) = cfg.alphas.iter().position(|&x| (x - 0.4).abs() < 1e-12) {
        let ratio = mean(&ratios[a]);
        verdicts.push(Verdict::new(
            "AC8 fleet alpha=0.4 mean(y)/mean(y*) = 0.60 +/- 0.02",
            (ratio - 0.6).abs() <= 0.02,
            format!("ratio {ratio:.4}"),
        ));
    }
    let mut broken = Vec::new();
    for m in 0..models.len() {
        let means: Vec<f64> = (0..na).map(|a| mean(&icps[m][a])).collect();
        if !means.windows(2).all(|w| w[1] < w[0]) {
            broken.push(format!(
                "{} {:?}",
                models[m].slug(),
                means
                    .iter()
                    .map(|v| (v * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>()
            ));
        }
    }
    verdicts.push(Verdict::new(
        "AC9 fleet ICP decreases in alpha for every model",
        broken.is_empty(),
        if broken.is_empty() {
            "monotone for all models".into()
        } else {
            format!("non-monotone: {}", broken.join("; "))
        },
    ));

    Ok(TableRun {
        table: Table::T4Synthetic,
        rendered: out,
        raw_csv: csv_text(
            &[
                "alpha",
                "replicate",
                "model",
                "icp",
                "mil",
                "observed_to_latent_mean",
            ],
            raw,
        )?,
        verdicts,
    })
}

// ---------------------------------------------------------------- partial censoring

/// Selected test scores of one (gamma, c-range, replicate, model) cell.
#[derive(Debug, Clone, Copy)]
struct BikeCell {
    icp: [f64; 2],
    mil: [f64; 2],
    fallback: bool,
    init: usize,
}

fn run_bike(cfg: &ReplicateConfig) -> Result<TableRun> {
    let series = bundled_daily_series(cfg.series_days, cfg.seed("bike/series"));
    let models = &cfg.real_models;
    let (ng, nc) = (cfg.gammas.len(), cfg.c_ranges.len());
    let cells: Vec<(usize, usize, usize, usize)> = (0..ng)
        .flat_map(|g| {
            (0..nc).flat_map(move |c| {
                (0..cfg.real_replicates)
                    .flat_map(move |r| (0..models.len()).map(move |m| (g, c, r, m)))
            })
        })
        .collect();
    let results: Vec<BikeCell> = cells
        .par_iter()
        .map(|&(g, c, r, m)| {
            let gamma = cfg.gammas[g];
            let (c1, c2) = cfg.c_ranges[c];
            let ds = censor_partial(
                &series,
                gamma,
                c1,
                c2,
                cfg.seed(&format!("bike/g{gamma}/c{c1}-{c2}/rep{r}/censor")),
            )?;
            let lagged = lagged_dataset(&ds, cfg.lags)?;
            let (train, val, test) = split(&lagged, &SplitScheme::ConsecutiveThirds)?;
            let ratio = latent_mean_ratio(&train)?;
            let imputed = [
                impute_thresholds(ratio, &train)?,
                impute_thresholds(ratio, &val)?,
                impute_thresholds(ratio, &test)?,
            ];
            let s = mean(&imputed[0].y);
            if !(s > 0.0) {
                return Err(Error::Degenerate(format!("observed training mean is {s}")));
            }
            let scaled = [
                scale_dataset(&imputed[0], s),
                scale_dataset(&imputed[1], s),
                scale_dataset(&imputed[2], s),
            ];
            let mut fits = Vec::with_capacity(cfg.inits);
            let mut scores = Vec::with_capacity(cfg.inits);
            for k in 0..cfg.inits {
                let seed = cfg.seed(&format!(
                    "bike/g{gamma}/c{c1}-{c2}/rep{r}/{}/init{k}",
                    models[m].slug()
                ));
                let f = fit_interval(cfg, models[m], &scaled, s, seed)?;
                let v = interval_metrics(&f.val.0, &f.val.1, imputed[1].y_star()?)?;
                scores.push(InitScore {
                    val_icp: v.icp,
                    val_mil: v.mil,
                    train_mean: s,
                });
                fits.push(f);
            }
            let sel = select_initialization(&scores)?;
            let f = &fits[sel.index];
            let mut cell = BikeCell {
                icp: [0.0; 2],
                mil: [0.0; 2],
                fallback: sel.fallback,
                init: sel.index,
            };
            for (si, subset) in Subset::BOTH.into_iter().enumerate() {
                let rep = subset_report(
                    &Prediction::Interval {
                        lower: &f.test.0,
                        upper: &f.test.1,
                    },
                    &imputed[2],
                    subset,
                )?;
                cell.icp[si] = rep.icp.unwrap();
                cell.mil[si] = rep.mil.unwrap();
            }
            Ok(cell)
        })
        .collect::<Result<_>>()?;

    let mut raw = Vec::new();
    // [g][c][m][subset] -> list of |icp - 0.9| and mil
    let mut dist = vec![vec![vec![[Vec::new(), Vec::new()]; models.len()]; nc]; ng];
    let mut mil = vec![vec![vec![[Vec::new(), Vec::new()]; models.len()]; nc]; ng];
    for (&(g, c, r, m), cell) in cells.iter().zip(&results) {
        for si in 0..2 {
            dist[g][c][m][si].push((cell.icp[si] - 0.9).abs());
            mil[g][c][m][si].push(cell.mil[si]);
            raw.push(vec![
                cfg.gammas[g].to_string(),
                format!("{}-{}", cfg.c_ranges[c].0, cfg.c_ranges[c].1),
                r.to_string(),
                models[m].slug().to_string(),
                Subset::BOTH[si].slug().to_string(),
                cell.init.to_string(),
                cell.fallback.to_string(),
                cell.icp[si].to_string(),
                cell.mil[si].to_string(),
            ]);
        }
    }

    let mut out = String::new();
    writeln!(
        out,
        "Partial censoring of the bundled daily series (directional; mean |ICP-0.9| and MIL over {} replicates, {} inits each)",
        cfg.real_replicates, cfg.inits
    )
    .unwrap();
    for (si, subset) in ["All Test Data", "Only Non-Censored"].iter().enumerate() {
        writeln!(out, "--- {subset} ---").unwrap();
        for c in 0..nc {
            writeln!(
                out,
                "(c1, c2) = ({}, {})",
                cfg.c_ranges[c].0, cfg.c_ranges[c].1
            )
            .unwrap();
            write!(out, "{:<16}", "Model").unwrap();
            for &gamma in &cfg.gammas {
                write!(out, "| g={:<13.1}", gamma).unwrap();
            }
            writeln!(out).unwrap();
            for m in 0..models.len() {
                write!(out, "{:<16}", models[m].label()).unwrap();
                for g in 0..ng {
                    let d = dist[g][c][m][si].as_slice();
                    let l = mil[g][c][m][si].as_slice();
                    write!(out, "| {:.3} {:>9.1} ", mean(d), mean(l)).unwrap();
                }
                writeln!(out).unwrap();
            }
        }
    }

    let mut verdicts = Vec::new();
    if let (Some(cl), Some(tl)) = (
        models.iter().position(|&m| m == ModelId::CLinear),
        models.iter().position(|&m| m == ModelId::TlLinear),
    ) {
        let mut failing = Vec::new();
        let mut checked = 0;
        for g in 0..ng {
            if cfg.gammas[g] < 0.3 - 1e-12 {
                continue;
            }
            for si in 0..2 {
                checked += 1;
                let wins = (0..nc)
                    .filter(|&c| mean(&dist[g][c][cl][si]) <= mean(&dist[g][c][tl][si]))
                    .count();
                if wins * 3 < 2 * nc {
                    failing.push(format!(
                        "gamma={} {} ({wins}/{nc})",
                        cfg.gammas[g],
                        Subset::BOTH[si].slug()
                    ));
                }
            }
        }
        verdicts.push(Verdict::new(
            "AC9 partial censoring: C+linear |ICP-0.9| <= TL+linear for >= 2/3 c-ranges",
            failing.is_empty() && checked > 0,
            if failing.is_empty() {
                format!("{checked} (gamma, subset) groups hold")
            } else {
                format!("failing: {}", failing.join(", "))
            },
        ));
    }

    Ok(TableRun {
        table: Table::BikeSynthetic,
        rendered: out,
        raw_csv: csv_text(
            &[
                "gamma",
                "c_range",
                "replicate",
                "model",
                "subset",
                "selected_init",
                "fallback",
                "icp",
                "mil",
            ],
            raw,
        )?,
        verdicts,
    })
}
