use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cqrnn::datagen::{
    attach_latent_quantiles, bundled_daily_series, censor_fleet, censor_partial, gen_synthetic,
    gen_trip_table, lagged_dataset, split, CensoredDataset, MixtureQuantiles, Noise, SplitScheme,
    SyntheticSpec, BENCHMARK_THETAS,
};
use cqrnn::io::{dataset_to_csv, read_dataset, read_series, read_to_string, write_atomic};
use cqrnn::losses::Side;
use cqrnn::metrics::{reports_to_csv, subset_report, EvalReport, Prediction, Subset};
use cqrnn::models::InitScheme;
use cqrnn::replicate::{
    fit_quantile_model, run_table, scale_dataset, ModelId, Predictor, ReplicateConfig, Table,
};
use cqrnn::seeds::derive_seed;
use cqrnn::tobit::{tobit_fit, tobit_quantiles, TobitModel, TobitOptions};
use cqrnn::training::{impute_thresholds, latent_mean_ratio, FitResult, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{manifest_path, Manifest};
use crate::{Cli, Command, EvaluateArgs, FitArgs, GenerateArgs, ReplicateArgs};

const DEFAULT_SEED: u64 = 42;

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: Option<TrainConfig>,
    pub replicate: Option<ReplicateConfig>,
}

struct Ctx<'a> {
    cli: &'a Cli,
    file: FileConfig,
    seed: u64,
    jobs: usize,
}

impl Ctx<'_> {
    fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cli.out_dir.join(rel)
    }

    fn train_config(&self) -> TrainConfig {
        self.file
            .train
            .clone()
            .or_else(|| self.file.replicate.as_ref().map(|r| r.train.clone()))
            .unwrap_or_default()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| anyhow!("worker pool: {e}"))
    }
}

/// Runs the selected command; `Ok(false)` means an acceptance check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(path) => {
            let text = read_to_string(path)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let seed = cli
        .seed
        .or_else(|| file.replicate.as_ref().map(|r| r.master_seed))
        .unwrap_or(DEFAULT_SEED);
    let jobs = cli
        .jobs
        .or_else(|| file.replicate.as_ref().map(|r| r.jobs))
        .unwrap_or(1)
        .max(1);
    let ctx = Ctx {
        cli,
        file,
        seed,
        jobs,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a).map(|_| true),
        Command::Fit(a) => fit_cmd(&ctx, a).map(|_| true),
        Command::Evaluate(a) => evaluate(&ctx, a).map(|_| true),
        Command::Replicate(a) => replicate(&ctx, a),
    }
}

fn parse_side(s: &str) -> Result<Side> {
    match s.to_ascii_lowercase().as_str() {
        "left" => Ok(Side::Left),
        "right" => Ok(Side::Right),
        other => bail!("unknown side `{other}` (expected left or right)"),
    }
}

fn parse_init(s: &str, seed: u64) -> Result<InitScheme> {
    match s.to_ascii_lowercase().as_str() {
        "ones" => Ok(InitScheme::Ones),
        "normal" => Ok(InitScheme::StandardNormal { seed }),
        other => bail!("unknown init `{other}` (expected ones or normal)"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------- generate

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let mut manifest = Manifest::new(ctx.seed, &ctx.file)?;
    let (ds, name) = match (&a.synthetic, a.censor.as_deref()) {
        (Some(noise), None) => {
            let noise: Noise = noise.parse()?;
            let path = "generate/synthetic/rep0/data".to_string();
            let seed = derive_seed(ctx.seed, &path);
            manifest.seed_paths.insert(path, seed);
            let spec = SyntheticSpec::new(noise, a.n, seed);
            let ds = gen_synthetic(&spec)?;
            manifest.synthetic = Some(spec);
            (ds, format!("synthetic_{}", noise.slug()))
        }
        (None, Some(scheme)) => {
            let series = match &a.series {
                Some(path) => read_series(path)?,
                None => {
                    let path = "generate/series".to_string();
                    let seed = derive_seed(ctx.seed, &path);
                    manifest.seed_paths.insert(path, seed);
                    bundled_daily_series(a.days, seed)
                }
            };
            match scheme {
                "partial" => {
                    let path = "generate/censor/partial".to_string();
                    let seed = derive_seed(ctx.seed, &path);
                    manifest.seed_paths.insert(path, seed);
                    (
                        censor_partial(&series, a.gamma, a.c1, a.c2, seed)?,
                        format!("partial_g{}", a.gamma),
                    )
                }
                "fleet" => {
                    if a.series.is_some() {
                        bail!("fleet censoring simulates its own trips; drop --series");
                    }
                    let path = "generate/trips".to_string();
                    let seed = derive_seed(ctx.seed, &path);
                    manifest.seed_paths.insert(path, seed);
                    let trips = gen_trip_table(a.days, a.vehicles, a.rate, a.amplitude, seed)?;
                    let path = "generate/censor/fleet".to_string();
                    let seed = derive_seed(ctx.seed, &path);
                    manifest.seed_paths.insert(path, seed);
                    (
                        censor_fleet(&trips, a.alpha, seed)?,
                        format!("fleet_a{}", a.alpha),
                    )
                }
                other => bail!("unknown censoring scheme `{other}` (expected partial or fleet)"),
            }
        }
        (None, None) => bail!("generate needs --synthetic <noise> or --censor <partial|fleet>"),
        (Some(_), Some(_)) => unreachable!("clap rejects --synthetic with --censor"),
    };
    let name = a.name.clone().unwrap_or(name);
    let csv_path = ctx.out(format!("{name}.csv"));
    write_text(&csv_path, &dataset_to_csv(&ds)?)?;
    manifest.side = Some(ds.side);
    manifest.stats = serde_json::json!({
        "rows": ds.len(),
        "censored": ds.n_censored(),
        "censored_fraction": ds.censored_fraction(),
    });
    manifest.outputs.push(path_str(&csv_path));
    manifest.write(&manifest_path(&csv_path))?;
    println!(
        "wrote {} ({} rows, {:.1}% censored)",
        csv_path.display(),
        ds.len(),
        100.0 * ds.censored_fraction()
    );
    Ok(())
}

// ---------------------------------------------------------------- fit

/// One fitted cell as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: ModelId,
    pub theta: Option<f64>,
    pub seed: u64,
    /// Requested learning rate, or `grid`.
    pub lr: String,
    /// Features and targets were divided by this before fitting.
    pub scale: f64,
    pub predictor: Option<Predictor>,
    pub tobit: Option<TobitModel>,
    pub result: FitResult,
}

impl FitRecord {
    fn scaled_rows(&self, ds: &CensoredDataset) -> Vec<Vec<f64>> {
        scale_dataset(ds, self.scale).x
    }

    /// Predictions in the dataset's units at `theta`.
    fn predict(&self, ds: &CensoredDataset, theta: f64) -> Result<Vec<f64>> {
        let rows = self.scaled_rows(ds);
        let raw = match (&self.predictor, &self.tobit) {
            (Some(p), _) => p.predict(&rows)?,
            (None, Some(t)) => rows
                .iter()
                .map(|x| tobit_quantiles(t, x, theta))
                .collect::<cqrnn::Result<_>>()?,
            (None, None) => bail!("fit record holds no model"),
        };
        Ok(raw.into_iter().map(|v| v * self.scale).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    model: ModelId,
    theta: Option<f64>,
    seed: u64,
    lr: Option<f64>,
}

impl Cell {
    fn lr_label(&self) -> String {
        self.lr
            .map(|l| format!("{l}"))
            .unwrap_or_else(|| "grid".into())
    }

    fn file_name(&self) -> String {
        match self.theta {
            Some(t) => format!(
                "{}_t{t:.2}_s{}_lr{}.json",
                self.model.slug(),
                self.seed,
                self.lr_label()
            ),
            None => format!(
                "{}_s{}_lr{}.json",
                self.model.slug(),
                self.seed,
                self.lr_label()
            ),
        }
    }
}

fn load_side(data: &Path, flag: Option<&str>) -> Result<(Side, Option<Manifest>)> {
    let mpath = manifest_path(data);
    let manifest = if mpath.exists() {
        Some(Manifest::read(&mpath)?)
    } else {
        None
    };
    let side = match (flag, manifest.as_ref().and_then(|m| m.side)) {
        (Some(s), _) => parse_side(s)?,
        (None, Some(s)) => s,
        (None, None) => Side::Left,
    };
    Ok((side, manifest))
}

fn fit_cmd(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let (side, data_manifest) = load_side(&a.data, a.side.as_deref())?;
    let mut ds = read_dataset(&a.data, side)?;
    if let Some(lags) = a.lags {
        ds = lagged_dataset(&ds, lags)?;
    }
    let mut manifest = Manifest::new(ctx.seed, &(&ctx.file, &ctx.train_config()))?;
    manifest.side = Some(side);
    manifest.synthetic = data_manifest.and_then(|m| m.synthetic);
    if a.lags.is_some() {
        // lagged rows no longer line up with the generator's covariates
        manifest.synthetic = None;
    }

    let [p_train, p_val, p_test] = <[f64; 3]>::try_from(a.proportions.as_slice())
        .map_err(|_| anyhow!("--proportions needs three values"))?;
    let scheme = match a.split.as_str() {
        "random" => {
            let path = "fit/split".to_string();
            let seed = derive_seed(ctx.seed, &path);
            manifest.seed_paths.insert(path, seed);
            SplitScheme::Random {
                p_train,
                p_val,
                p_test,
                seed,
            }
        }
        "consecutive" => SplitScheme::Consecutive {
            p_train,
            p_val,
            p_test,
        },
        other => bail!("unknown split `{other}` (expected random or consecutive)"),
    };
    let (mut train, mut val, test) = split(&ds, &scheme)?;

    let splits_dir = ctx.out("splits");
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let p = splits_dir.join(format!("{name}.csv"));
        write_text(&p, &dataset_to_csv(part)?)?;
        manifest.outputs.push(path_str(&p));
    }
    manifest.stats = serde_json::json!({
        "split": scheme,
        "rows": [train.len(), val.len(), test.len()],
        "lags": a.lags,
    });
    manifest.write(&splits_dir.join("test.manifest.json"))?;

    if side == Side::Right && train.tau.iter().any(|t| t.is_infinite()) {
        let ratio = latent_mean_ratio(&train)?;
        train = impute_thresholds(ratio, &train)?;
        val = impute_thresholds(ratio, &val)?;
    }
    let scale = if a.scale {
        let observed: Vec<f64> = (0..train.len())
            .filter(|&i| !train.censored[i])
            .map(|i| train.y[i])
            .collect();
        if observed.is_empty() {
            bail!("--scale needs observed training rows");
        }
        observed.iter().sum::<f64>() / observed.len() as f64
    } else {
        1.0
    };
    let (train, val) = (scale_dataset(&train, scale), scale_dataset(&val, scale));

    let models: Vec<ModelId> = a
        .models
        .iter()
        .map(|m| m.parse())
        .collect::<cqrnn::Result<_>>()?;
    let lrs: Vec<Option<f64>> = if a.lr_grid {
        vec![None]
    } else if a.lr.is_empty() {
        vec![Some(ctx.train_config().learning_rate)]
    } else {
        a.lr.iter().copied().map(Some).collect()
    };
    let mut cells = Vec::new();
    for &model in &models {
        let thetas: Vec<Option<f64>> = if model == ModelId::Tobit {
            vec![None]
        } else {
            a.thetas.iter().copied().map(Some).collect()
        };
        for &theta in &thetas {
            for &seed in &a.seeds {
                for &lr in &lrs {
                    cells.push(Cell {
                        model,
                        theta,
                        seed,
                        lr,
                    });
                }
            }
        }
    }

    let fits_dir = ctx.out("fits");
    let todo: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|c| ctx.cli.force || !fits_dir.join(c.file_name()).exists())
        .collect();
    let skipped = cells.len() - todo.len();
    let base = ctx.train_config();
    let master = ctx.seed;
    let init = a.init.clone();
    let results: Vec<Result<()>> = ctx.pool()?.install(|| {
        todo.par_iter()
            .map(|cell| {
                let mut cfg = base.clone();
                cfg.seed = derive_seed(master, &format!("fit/seed{}/train", cell.seed));
                if let Some(lr) = cell.lr {
                    cfg = cfg.with_learning_rate(lr);
                }
                let init = parse_init(
                    &init,
                    derive_seed(master, &format!("fit/seed{}/init", cell.seed)),
                )?;
                let record = match cell.theta {
                    Some(theta) => {
                        let (pred, result) = fit_quantile_model(
                            cell.model,
                            theta,
                            &train,
                            &val,
                            &cfg,
                            init,
                            cell.lr.is_none(),
                        )?;
                        FitRecord {
                            model: cell.model,
                            theta: Some(theta),
                            seed: cell.seed,
                            lr: cell.lr_label(),
                            scale,
                            predictor: Some(pred),
                            tobit: None,
                            result,
                        }
                    }
                    None => {
                        let opts = TobitOptions {
                            init,
                            use_lr_grid: cell.lr.is_none(),
                            ..TobitOptions::default()
                        };
                        let (model, result) = tobit_fit(&train, &val, &cfg, &opts)?;
                        FitRecord {
                            model: cell.model,
                            theta: None,
                            seed: cell.seed,
                            lr: cell.lr_label(),
                            scale,
                            predictor: None,
                            tobit: Some(model),
                            result,
                        }
                    }
                };
                let path = fits_dir.join(cell.file_name());
                write_text(&path, &serde_json::to_string_pretty(&record)?)
                    .with_context(|| format!("writing {}", path.display()))
            })
            .collect()
    });
    for r in results {
        r?;
    }
    println!(
        "fitted {} cells, skipped {skipped} existing, results in {}",
        todo.len(),
        fits_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MetricKind {
    Auto,
    Quantile,
    Interval,
    Both,
}

fn parse_metrics(s: &str) -> Result<MetricKind> {
    Ok(match s {
        "auto" => MetricKind::Auto,
        "quantile" => MetricKind::Quantile,
        "interval" => MetricKind::Interval,
        "both" => MetricKind::Both,
        other => bail!("unknown metrics `{other}` (expected auto, quantile, interval or both)"),
    })
}

fn load_records(dir: &Path) -> Result<Vec<FitRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading fits directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            serde_json::from_str(&read_to_string(p)?)
                .with_context(|| format!("parsing fit record {}", p.display()))
        })
        .collect()
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let fits_dir = a.fits.clone().unwrap_or_else(|| ctx.out("fits"));
    let test_path = a.test.clone().unwrap_or_else(|| ctx.out("splits/test.csv"));
    let (side, manifest) = load_side(&test_path, None)?;
    let mut test = read_dataset(&test_path, side)?;
    let records = load_records(&fits_dir)?;
    if records.is_empty() {
        bail!("no fit records in {}", fits_dir.display());
    }
    let subsets: Vec<Subset> = match a.subset.as_str() {
        "both" => Subset::BOTH.to_vec(),
        s => vec![s.parse()?],
    };
    let kind = parse_metrics(&a.metrics)?;

    let noise_mode = match (
        &a.noise,
        manifest.as_ref().and_then(|m| m.synthetic.as_ref()),
    ) {
        (Some(n), _) => {
            let mode = if a.exact_mixture {
                MixtureQuantiles::Exact
            } else {
                MixtureQuantiles::ClosedForm
            };
            Some((n.parse::<Noise>()?, mode))
        }
        (None, Some(spec)) => Some((spec.noise, spec.mixture_quantiles)),
        (None, None) => None,
    };
    let mut thetas: BTreeSet<String> = BENCHMARK_THETAS.iter().map(|t| format!("{t}")).collect();
    thetas.extend(
        records
            .iter()
            .filter_map(|r| r.theta)
            .map(|t| format!("{t}")),
    );
    if let Some((noise, mode)) = noise_mode {
        let levels: Vec<f64> = thetas
            .iter()
            .map(|t| t.parse().expect("formatted float"))
            .collect();
        attach_latent_quantiles(&mut test, noise, &levels, mode)?;
    }

    let want_quantile = match kind {
        MetricKind::Auto => test.latent_quantiles.is_some(),
        MetricKind::Quantile | MetricKind::Both => true,
        MetricKind::Interval => false,
    };
    let want_interval = match kind {
        MetricKind::Auto => test.y_star.is_some(),
        MetricKind::Interval | MetricKind::Both => true,
        MetricKind::Quantile => false,
    };
    if want_quantile && test.latent_quantiles.is_none() {
        bail!(
            "quantile metrics need ground-truth quantiles: pass --noise or evaluate a synthetic test set with its manifest"
        );
    }
    if want_interval && test.y_star.is_none() {
        bail!("interval metrics (ICP, MIL) need latent values: the test set has no y_star column");
    }
    let dataset = test_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut bounds: BTreeMap<(String, u64, String), (Option<Vec<f64>>, Option<Vec<f64>>)> =
        BTreeMap::new();
    for r in &records {
        let label = format!("{}/s{}/lr{}", r.model.slug(), r.seed, r.lr);
        let levels: Vec<f64> = match r.theta {
            Some(t) => vec![t],
            None => BENCHMARK_THETAS.to_vec(),
        };
        for theta in levels {
            let preds = r.predict(&test, theta)?;
            if want_quantile {
                for &s in &subsets {
                    let rep = subset_report(
                        &Prediction::Quantile {
                            theta,
                            preds: &preds,
                        },
                        &test,
                        s,
                    )?;
                    reports.push(rep.labeled(&dataset, &label));
                }
            }
            let entry = bounds
                .entry((r.model.slug().to_string(), r.seed, r.lr.clone()))
                .or_default();
            if (theta - 0.05).abs() < 1e-12 {
                entry.0 = Some(preds);
            } else if (theta - 0.95).abs() < 1e-12 {
                entry.1 = Some(preds);
            }
        }
    }
    if want_interval {
        let mut any = false;
        for ((model, seed, lr), (lo, hi)) in &bounds {
            if let (Some(lower), Some(upper)) = (lo, hi) {
                any = true;
                for &s in &subsets {
                    let rep = subset_report(&Prediction::Interval { lower, upper }, &test, s)?;
                    reports.push(rep.labeled(&dataset, &format!("{model}/s{seed}/lr{lr}")));
                }
            }
        }
        if !any && kind != MetricKind::Auto {
            bail!("interval metrics need fits at both 0.05 and 0.95");
        }
    }

    let dir = ctx.out("eval");
    let csv_path = dir.join("reports.csv");
    let json_path = dir.join("reports.json");
    write_text(&csv_path, &reports_to_csv(&reports)?)?;
    write_text(&json_path, &serde_json::to_string_pretty(&reports)?)?;
    let mut m = Manifest::new(ctx.seed, &ctx.file)?;
    m.side = Some(side);
    m.synthetic = manifest.and_then(|m| m.synthetic);
    m.stats = serde_json::json!({ "reports": reports.len(), "fits": records.len() });
    m.outputs = vec![path_str(&csv_path), path_str(&json_path)];
    m.write(&dir.join("reports.manifest.json"))?;
    print!("{}", reports_to_csv(&reports)?);
    Ok(())
}

// ---------------------------------------------------------------- replicate

fn replicate(ctx: &Ctx, a: &ReplicateArgs) -> Result<bool> {
    let table: Table = a.table.parse()?;
    let mut cfg = ctx.file.replicate.clone().unwrap_or_default();
    if let Some(train) = &ctx.file.train {
        cfg.train = train.clone();
    }
    if a.full_grid {
        cfg = cfg.full_grid();
    }
    cfg.master_seed = ctx.seed;
    cfg.jobs = ctx.jobs;
    cfg.exact_mixture |= a.exact_mixture;
    cfg.zero_noise |= a.zero_noise;
    if a.no_lr_grid {
        cfg.real_lr_grid = false;
    }
    if let Some(r) = a.replicates {
        cfg.synthetic_replicates = r;
    }
    if let Some(r) = a.real_replicates {
        cfg.real_replicates = r;
    }
    if let Some(i) = a.inits {
        cfg.inits = i;
    }

    let run = run_table(table, &cfg)?;
    let dir = ctx.out(table.slug());
    let txt = dir.join("table.txt");
    let raw = dir.join("raw.csv");
    let verdicts = dir.join("verdicts.json");
    write_text(&txt, &run.rendered)?;
    write_text(&raw, &run.raw_csv)?;
    write_text(&verdicts, &serde_json::to_string_pretty(&run.verdicts)?)?;
    let mut m = Manifest::new(ctx.seed, &cfg)?;
    m.stats = serde_json::json!({ "config": cfg, "all_passed": run.all_passed() });
    m.outputs = vec![path_str(&txt), path_str(&raw), path_str(&verdicts)];
    m.write(&dir.join("manifest.json"))?;

    print!("{}", run.rendered);
    for v in &run.verdicts {
        println!("{}", v.line());
    }
    Ok(run.all_passed())
}
