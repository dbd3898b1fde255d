//! Synthetic benchmarks with analytic latent quantiles, the censoring
//! schemes used on count series, dataset splitting and lag features.

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CensoredPoint, QuantileLevel, Side};
use crate::models::negate_features;
use crate::normal::{std_normal_cdf, std_normal_quantile};

/// `1 - theta`, snapped to 12 decimals so that mirroring twice is exact.
pub(crate) fn mirror_level(theta: f64) -> f64 {
    ((1.0 - theta) * 1e12).round() / 1e12
}

/// Quantile levels evaluated by the synthetic benchmarks.
pub const BENCHMARK_THETAS: [f64; 3] = [0.05, 0.50, 0.95];

/// Latent quantiles `q_theta(y* | x_i)` keyed by level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantileTable(pub Vec<(f64, Vec<f64>)>);

impl QuantileTable {
    pub fn get(&self, theta: f64) -> Option<&[f64]> {
        self.0
            .iter()
            .find(|(t, _)| (t - theta).abs() < 1e-12)
            .map(|(_, v)| v.as_slice())
    }

    pub fn levels(&self) -> Vec<f64> {
        self.0.iter().map(|(t, _)| *t).collect()
    }

    fn select(&self, rows: &[usize]) -> Self {
        QuantileTable(
            self.0
                .iter()
                .map(|(t, v)| (*t, rows.iter().map(|&i| v[i]).collect()))
                .collect(),
        )
    }
}

/// Covariates, clipped targets and thresholds, plus whatever ground truth
/// the source can provide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredDataset {
    /// Covariate rows; slot 0 is the intercept `1.0`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub tau: Vec<f64>,
    pub censored: Vec<bool>,
    pub y_star: Option<Vec<f64>>,
    pub latent_quantiles: Option<QuantileTable>,
    pub side: Side,
}

impl CensoredDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn points(&self) -> Vec<CensoredPoint> {
        self.y
            .iter()
            .zip(&self.tau)
            .zip(&self.censored)
            .map(|((&y, &tau), &c)| CensoredPoint::new(y, tau, c))
            .collect()
    }

    pub fn n_censored(&self) -> usize {
        self.censored.iter().filter(|c| **c).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.n_censored() as f64 / self.len() as f64
    }

    /// Checks column lengths and the clamp relation row by row. A censored
    /// row must sit exactly on its threshold; an uncensored row may touch it
    /// only when imputation produced a unit ratio.
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if self.x.len() != n {
            return Err(Error::shape("dataset covariate rows", n, self.x.len()));
        }
        if self.tau.len() != n {
            return Err(Error::shape("dataset thresholds", n, self.tau.len()));
        }
        if self.censored.len() != n {
            return Err(Error::shape(
                "dataset censoring flags",
                n,
                self.censored.len(),
            ));
        }
        if let Some(ys) = &self.y_star {
            if ys.len() != n {
                return Err(Error::shape("dataset latent targets", n, ys.len()));
            }
        }
        if let Some(t) = &self.latent_quantiles {
            for (_, v) in &t.0 {
                if v.len() != n {
                    return Err(Error::shape("dataset latent quantiles", n, v.len()));
                }
            }
        }
        let p = self.n_covariates();
        for (i, row) in self.x.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Parse {
                    location: format!("row {i}"),
                    message: format!("expected {p} covariates, found {}", row.len()),
                });
            }
        }
        for (i, pt) in self.points().iter().enumerate() {
            if !pt.is_consistent(self.side) {
                return Err(Error::Degenerate(format!(
                    "row {i} violates the {:?}-censoring clamp: y = {}, tau = {}, censored = {}",
                    self.side, pt.y, pt.tau, pt.censored
                )));
            }
        }
        Ok(())
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: pick(&self.y),
            tau: pick(&self.tau),
            censored: rows.iter().map(|&i| self.censored[i]).collect(),
            y_star: self.y_star.as_deref().map(pick),
            latent_quantiles: self.latent_quantiles.as_ref().map(|t| t.select(rows)),
            side: self.side,
        }
    }

    /// The negated problem: features, targets, thresholds and ground truth
    /// change sign, quantile levels mirror and the censoring side flips.
    pub fn mirrored(&self) -> Self {
        let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<_>>();
        Self {
            x: self.x.iter().map(|r| negate_features(r)).collect(),
            y: neg(&self.y),
            tau: neg(&self.tau),
            censored: self.censored.clone(),
            y_star: self.y_star.as_deref().map(neg),
            latent_quantiles: self.latent_quantiles.as_ref().map(|t| {
                let mut levels: Vec<_> =
                    t.0.iter()
                        .map(|(th, v)| (mirror_level(*th), neg(v)))
                        .collect();
                levels.sort_by(|a, b| a.0.total_cmp(&b.0));
                QuantileTable(levels)
            }),
            side: self.side.flipped(),
        }
    }

    pub fn latent_quantiles_for(&self, theta: f64) -> Result<&[f64]> {
        self.latent_quantiles
            .as_ref()
            .and_then(|t| t.get(theta))
            .ok_or_else(|| {
                Error::Usage(format!(
                    "dataset carries no ground-truth quantiles for theta = {theta}"
                ))
            })
    }

    /// Quantiles of the observed variable: the latent quantile clipped at the
    /// row's threshold.
    pub fn true_quantiles(&self, theta: f64) -> Result<Vec<f64>> {
        let lat = self.latent_quantiles_for(theta)?;
        Ok(lat
            .iter()
            .zip(&self.tau)
            .map(|(&q, &t)| match self.side {
                Side::Left => q.max(t),
                Side::Right => q.min(t),
            })
            .collect())
    }

    pub fn y_star(&self) -> Result<&[f64]> {
        self.y_star
            .as_deref()
            .ok_or_else(|| Error::Usage("dataset carries no latent targets (y_star)".into()))
    }
}

/// Noise families of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    StandardGaussian,
    Heteroskedastic,
    GaussianMixture,
    /// `eps = 0`; a debugging hook with exactly recoverable quantiles.
    Zero,
}

impl Noise {
    pub const BENCHMARKS: [Noise; 3] = [
        Noise::StandardGaussian,
        Noise::Heteroskedastic,
        Noise::GaussianMixture,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Noise::StandardGaussian => "Standard Gaussian",
            Noise::Heteroskedastic => "Heteroskedastic",
            Noise::GaussianMixture => "Gaussian Mixture",
            Noise::Zero => "Zero noise",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Noise::StandardGaussian => "standard_gaussian",
            Noise::Heteroskedastic => "heteroskedastic",
            Noise::GaussianMixture => "gaussian_mixture",
            Noise::Zero => "zero",
        }
    }
}

impl std::str::FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "standard_gaussian" | "gaussian" | "sg" => Ok(Noise::StandardGaussian),
            "heteroskedastic" | "het" => Ok(Noise::Heteroskedastic),
            "gaussian_mixture" | "mixture" | "mix" => Ok(Noise::GaussianMixture),
            "zero" | "none" => Ok(Noise::Zero),
            other => Err(Error::Config(format!("unknown noise `{other}`"))),
        }
    }
}

/// How ground-truth quantiles of the mixture noise are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureQuantiles {
    /// Bisection on the CDF of `0.75 N(0,1) + 0.25 N(0,4)`.
    #[default]
    Exact,
    /// The published pipeline: noise drawn as the weighted sum
    /// `0.75 z1 + 0.25 (2 z2)` and scored against a single Gaussian of scale
    /// `sqrt(0.75^2 + 0.25^2)`.
    ClosedForm,
}

/// Mixture weight of the unit-variance component.
pub const MIXTURE_WEIGHT: f64 = 0.75;
/// Scale of the wide mixture component.
pub const MIXTURE_WIDE_SD: f64 = 2.0;

pub fn mixture_cdf(e: f64) -> f64 {
    MIXTURE_WEIGHT * std_normal_cdf(e)
        + (1.0 - MIXTURE_WEIGHT) * std_normal_cdf(e / MIXTURE_WIDE_SD)
}

/// `theta`-quantile of the mixture noise by bisection.
pub fn mixture_quantile(theta: QuantileLevel) -> f64 {
    let t = theta.value();
    let (mut lo, mut hi) = (-60.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quantile of the noise term at level `theta` for covariate row `x`.
fn noise_quantile(
    noise: Noise,
    theta: QuantileLevel,
    x: &[f64],
    mode: MixtureQuantiles,
) -> Result<f64> {
    let z = std_normal_quantile(theta.value())?;
    Ok(match noise {
        Noise::StandardGaussian => z,
        Noise::Heteroskedastic => (1.0 + x[2]).abs() * z,
        Noise::GaussianMixture => match mode {
            MixtureQuantiles::Exact => mixture_quantile(theta),
            MixtureQuantiles::ClosedForm => {
                (MIXTURE_WEIGHT.powi(2) + (1.0 - MIXTURE_WEIGHT).powi(2)).sqrt() * z
            }
        },
        Noise::Zero => 0.0,
    })
}

fn check_benchmark_row(x: &[f64]) -> Result<()> {
    if x.len() != 3 {
        return Err(Error::shape("benchmark covariate row", 3, x.len()));
    }
    Ok(())
}

/// `q_theta(y* | x) = x0 + x1 + x2 + q_theta(eps | x)`.
pub fn latent_quantile(noise: Noise, theta: f64, x: &[f64], mode: MixtureQuantiles) -> Result<f64> {
    let theta = QuantileLevel::new(theta)?;
    check_benchmark_row(x)?;
    Ok(x.iter().sum::<f64>() + noise_quantile(noise, theta, x, mode)?)
}

/// Conditional quantile of the observed `y = max(0, y*)`.
pub fn true_quantile(noise: Noise, theta: f64, x: &[f64]) -> Result<f64> {
    true_quantile_with(noise, theta, x, MixtureQuantiles::Exact)
}

pub fn true_quantile_with(
    noise: Noise,
    theta: f64,
    x: &[f64],
    mode: MixtureQuantiles,
) -> Result<f64> {
    Ok(latent_quantile(noise, theta, x, mode)?.max(0.0))
}

/// Parameters of one synthetic benchmark draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub noise: Noise,
    #[serde(default = "default_n")]
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub mixture_quantiles: MixtureQuantiles,
}

fn default_n() -> usize {
    1000
}

fn default_thetas() -> Vec<f64> {
    BENCHMARK_THETAS.to_vec()
}

impl SyntheticSpec {
    pub fn new(noise: Noise, n: usize, seed: u64) -> Self {
        Self {
            noise,
            n,
            seed,
            thetas: default_thetas(),
            mixture_quantiles: MixtureQuantiles::Exact,
        }
    }

    pub fn with_mixture_quantiles(mut self, mode: MixtureQuantiles) -> Self {
        self.mixture_quantiles = mode;
        self
    }
}

/// Draws `y* = x0 + x1 + x2 + eps` with `x0 = 1`, `x1 ~ U{-1, 1}`,
/// `x2 ~ N(0, 1)` and observes `y = max(0, y*)`.
///
/// Every row consumes the same four draws whatever the noise, so one seed
/// yields identical covariates across the noise families.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<CensoredDataset> {
    if spec.n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    let thetas = spec
        .thetas
        .iter()
        .map(|&t| QuantileLevel::new(t))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y_star = Vec::with_capacity(n);
    let mut censored = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let x2: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let eps = match spec.noise {
            Noise::StandardGaussian => z,
            Noise::Heteroskedastic => (1.0 + x2) * z,
            Noise::GaussianMixture => match spec.mixture_quantiles {
                MixtureQuantiles::Exact if u < MIXTURE_WEIGHT => z,
                MixtureQuantiles::Exact => MIXTURE_WIDE_SD * z,
                MixtureQuantiles::ClosedForm => {
                    let z2 = std_normal_quantile(u.max(f64::MIN_POSITIVE))?;
                    MIXTURE_WEIGHT * z + (1.0 - MIXTURE_WEIGHT) * MIXTURE_WIDE_SD * z2
                }
            },
            Noise::Zero => 0.0,
        };
        let ys = 1.0 + x1 + x2 + eps;
        x.push(vec![1.0, x1, x2]);
        y_star.push(ys);
        y.push(ys.max(0.0));
        censored.push(ys <= 0.0);
    }
    let mut table = Vec::with_capacity(thetas.len());
    for &t in &thetas {
        let q = x
            .iter()
            .map(|row| {
                Ok(row.iter().sum::<f64>()
                    + noise_quantile(spec.noise, t, row, spec.mixture_quantiles)?)
            })
            .collect::<Result<Vec<_>>>()?;
        table.push((t.value(), q));
    }
    Ok(CensoredDataset {
        tau: vec![0.0; n],
        x,
        y,
        censored,
        y_star: Some(y_star),
        latent_quantiles: Some(QuantileTable(table)),
        side: Side::Left,
    })
}

/// Recomputes the benchmark's latent quantiles from the covariates, e.g.
/// after loading a dataset CSV that does not store them.
pub fn attach_latent_quantiles(
    dataset: &mut CensoredDataset,
    noise: Noise,
    thetas: &[f64],
    mode: MixtureQuantiles,
) -> Result<()> {
    let mut table = Vec::with_capacity(thetas.len());
    for &t in thetas {
        let q = dataset
            .x
            .iter()
            .map(|row| latent_quantile(noise, t, row, mode))
            .collect::<Result<Vec<_>>>()?;
        table.push((t, q));
    }
    dataset.latent_quantiles = Some(QuantileTable(table));
    Ok(())
}

/// Share of rows whose observed-variable quantile is clipped to the
/// threshold, i.e. `q_theta(y* | x) <= tau`.
pub fn zero_quantile_fraction(dataset: &CensoredDataset, theta: f64) -> Result<f64> {
    let lat = dataset.latent_quantiles_for(theta)?;
    let clipped = lat
        .iter()
        .zip(&dataset.tau)
        .filter(|(&q, &t)| match dataset.side {
            Side::Left => q <= t,
            Side::Right => q >= t,
        })
        .count();
    Ok(clipped as f64 / dataset.len() as f64)
}

/// Wraps a plain series as an intercept-only, uncensored right-side dataset.
fn series_dataset(
    y: Vec<f64>,
    y_star: Vec<f64>,
    tau: Vec<f64>,
    censored: Vec<bool>,
) -> CensoredDataset {
    CensoredDataset {
        x: vec![vec![1.0]; y.len()],
        y,
        tau,
        censored,
        y_star: Some(y_star),
        latent_quantiles: None,
        side: Side::Right,
    }
}

/// Partial censoring of a count series: a `gamma` share of the rows is
/// scaled by `1 - delta`, `delta ~ U[c1, c2]`, and flagged right-censored at
/// the new value. Other rows keep `y = y*` with an open threshold (`+inf`)
/// until [`crate::training::impute_thresholds`] fills it.
pub fn censor_partial(
    series: &[f64],
    gamma: f64,
    c1: f64,
    c2: f64,
    seed: u64,
) -> Result<CensoredDataset> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain {
            name: "gamma",
            value: gamma,
            expected: "0 <= gamma <= 1",
        });
    }
    if !(c1 > 0.0 && c1 <= c2) {
        return Err(Error::Domain {
            name: "c1",
            value: c1,
            expected: "0 < c1 <= c2",
        });
    }
    if c2 >= 1.0 {
        return Err(Error::Domain {
            name: "c2",
            value: c2,
            expected: "c2 < 1",
        });
    }
    let n = series.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ((gamma * n as f64).round() as usize).min(n);
    let mut selected = index::sample(&mut rng, n, k).into_vec();
    selected.sort_unstable();
    let mut y = series.to_vec();
    let mut tau = vec![f64::INFINITY; n];
    let mut censored = vec![false; n];
    for &i in &selected {
        let delta = if c1 == c2 {
            c1
        } else {
            rng.random_range(c1..=c2)
        };
        y[i] = (1.0 - delta) * series[i];
        tau[i] = y[i];
        censored[i] = true;
    }
    Ok(series_dataset(y, series.to_vec(), tau, censored))
}

/// A trip log reduced to (day, vehicle) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub day: u32,
    pub vehicle: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripTable {
    pub n_days: usize,
    pub n_vehicles: usize,
    pub trips: Vec<Trip>,
}

impl TripTable {
    /// Trip starts per day over the whole horizon.
    pub fn daily_counts(&self) -> Vec<f64> {
        self.counts_where(|_| true)
    }

    fn counts_where(&self, keep: impl Fn(u32) -> bool) -> Vec<f64> {
        let mut out = vec![0.0; self.n_days];
        for t in &self.trips {
            if keep(t.vehicle) {
                out[t.day as usize] += 1.0;
            }
        }
        out
    }
}

/// Poisson trip counts per (day, vehicle) with a weekly sinusoidal rate
/// `rate * (1 + amplitude * sin(2 pi day / 7))`.
pub fn gen_trip_table(
    n_days: usize,
    n_vehicles: usize,
    per_vehicle_rate: f64,
    weekly_amplitude: f64,
    seed: u64,
) -> Result<TripTable> {
    if n_days == 0 {
        return Err(Error::Config("trip table needs at least one day".into()));
    }
    if !(per_vehicle_rate >= 0.0 && per_vehicle_rate.is_finite()) {
        return Err(Error::Domain {
            name: "per_vehicle_rate",
            value: per_vehicle_rate,
            expected: "rate >= 0",
        });
    }
    if !(0.0..=1.0).contains(&weekly_amplitude) {
        return Err(Error::Domain {
            name: "weekly_amplitude",
            value: weekly_amplitude,
            expected: "0 <= amplitude <= 1",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trips = Vec::new();
    for day in 0..n_days {
        let season = 1.0 + weekly_amplitude * (2.0 * std::f64::consts::PI * day as f64 / 7.0).sin();
        let lambda = per_vehicle_rate * season;
        if lambda <= 0.0 {
            continue;
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::Config(format!("poisson rate: {e}")))?;
        for vehicle in 0..n_vehicles {
            let k: f64 = dist.sample(&mut rng);
            for _ in 0..k as u64 {
                trips.push(Trip {
                    day: day as u32,
                    vehicle: vehicle as u32,
                });
            }
        }
    }
    Ok(TripTable {
        n_days,
        n_vehicles,
        trips,
    })
}

/// Complete censoring by fleet reduction: drops every trip of an `alpha`
/// share of vehicles. All days are right-censored at the remaining count.
pub fn censor_fleet(trips: &TripTable, alpha: f64, seed: u64) -> Result<CensoredDataset> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "0 <= alpha < 1",
        });
    }
    if trips.n_vehicles == 0 {
        return Err(Error::Usage(
            "fleet censoring needs a non-empty fleet".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = ((alpha * trips.n_vehicles as f64).round() as usize).min(trips.n_vehicles);
    let mut removed = vec![false; trips.n_vehicles];
    for v in index::sample(&mut rng, trips.n_vehicles, k) {
        removed[v] = true;
    }
    let y = trips.counts_where(|v| !removed[v as usize]);
    let y_star = trips.daily_counts();
    let n = y.len();
    Ok(series_dataset(y.clone(), y_star, y, vec![true; n]))
}

/// Stand-in for a daily pickup series: Poisson counts around a level with
/// weekly seasonality and AR(1) log-rate fluctuations.
pub fn bundled_daily_series(n_days: usize, seed: u64) -> Vec<f64> {
    const LEVEL: f64 = 60.0;
    const WEEKLY: f64 = 0.35;
    const AR: f64 = 0.7;
    const SHOCK_SD: f64 = 0.15;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = 0.0_f64;
    (0..n_days)
        .map(|t| {
            let shock: f64 = rng.sample(StandardNormal);
            state = AR * state + SHOCK_SD * shock;
            let season = WEEKLY * (2.0 * std::f64::consts::PI * t as f64 / 7.0).sin();
            let lambda = LEVEL * (season + state).exp();
            let k: f64 = Poisson::new(lambda)
                .expect("positive rate")
                .sample(&mut rng);
            k
        })
        .collect()
}

/// Covariate rows `(1, y_{t-1}, ..., y_{t-lags})` and aligned targets `y_t`
/// for `t = lags .. n`.
pub fn lag_features(series: &[f64], lags: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if lags == 0 {
        return Err(Error::Config("lag window must be positive".into()));
    }
    if series.len() <= lags {
        return Err(Error::Usage(format!(
            "series of length {} is too short for {lags} lags",
            series.len()
        )));
    }
    let rows = (lags..series.len())
        .map(|t| {
            let mut r = Vec::with_capacity(lags + 1);
            r.push(1.0);
            r.extend((1..=lags).map(|k| series[t - k]));
            r
        })
        .collect();
    Ok((rows, series[lags..].to_vec()))
}

/// Replaces the covariates of a series dataset by lags of its observed
/// values, dropping the first `lags` rows.
pub fn lagged_dataset(series: &CensoredDataset, lags: usize) -> Result<CensoredDataset> {
    let (rows, _) = lag_features(&series.y, lags)?;
    let keep: Vec<usize> = (lags..series.len()).collect();
    let mut out = series.subset(&keep);
    out.x = rows;
    Ok(out)
}

/// Row-partitioning schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SplitScheme {
    Random {
        p_train: f64,
        p_val: f64,
        p_test: f64,
        seed: u64,
    },
    /// Contiguous blocks in time order.
    Consecutive {
        p_train: f64,
        p_val: f64,
        p_test: f64,
    },
    ConsecutiveThirds,
}

impl SplitScheme {
    fn proportions(&self) -> [f64; 3] {
        match *self {
            SplitScheme::Random {
                p_train,
                p_val,
                p_test,
                ..
            }
            | SplitScheme::Consecutive {
                p_train,
                p_val,
                p_test,
            } => [p_train, p_val, p_test],
            SplitScheme::ConsecutiveThirds => [1.0 / 3.0; 3],
        }
    }
}

/// Largest-remainder apportionment of `n` items to `props`; leftover items
/// go to the largest fractional parts, earlier parts first on ties.
pub fn apportion(n: usize, props: &[f64]) -> Result<Vec<usize>> {
    if props.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Config(format!(
            "split proportions must be positive: {props:?}"
        )));
    }
    let total: f64 = props.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split proportions sum to {total}, not 1"
        )));
    }
    let exact: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Partitions rows into (train, validation, test).
pub fn split(
    dataset: &CensoredDataset,
    scheme: &SplitScheme,
) -> Result<(CensoredDataset, CensoredDataset, CensoredDataset)> {
    let parts = split_indices(dataset.len(), scheme)?;
    Ok((
        dataset.subset(&parts[0]),
        dataset.subset(&parts[1]),
        dataset.subset(&parts[2]),
    ))
}

/// Row indices of each part; random parts are sorted ascending.
pub fn split_indices(n: usize, scheme: &SplitScheme) -> Result<[Vec<usize>; 3]> {
    let counts = apportion(n, &scheme.proportions())?;
    let mut order: Vec<usize> = (0..n).collect();
    if let SplitScheme::Random { seed, .. } = scheme {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        order = index::sample(&mut rng, n, n).into_vec();
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut start = 0;
    for (part, &c) in parts.iter_mut().zip(&counts) {
        *part = order[start..start + c].to_vec();
        if matches!(scheme, SplitScheme::Random { .. }) {
            part.sort_unstable();
        }
        start += c;
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_row_arithmetic() {
        let spec = SyntheticSpec::new(Noise::Zero, 200, 3);
        let ds = gen_synthetic(&spec).unwrap();
        for (i, row) in ds.x.iter().enumerate() {
            let ys = row.iter().sum::<f64>();
            assert_eq!(ds.y_star.as_ref().unwrap()[i], ys);
            assert_eq!(ds.y[i], ys.max(0.0));
        }
        // the hand-checked row of the degenerate generator
        let x = [1.0, -1.0, -0.5];
        let ys: f64 = x.iter().sum();
        assert_eq!(ys, -0.5);
        assert_eq!(ys.max(0.0), 0.0);
        assert_eq!(
            latent_quantile(Noise::Zero, 0.3, &x, MixtureQuantiles::Exact).unwrap(),
            -0.5
        );
    }

    #[test]
    fn generator_is_reproducible_and_valid() {
        for noise in Noise::BENCHMARKS {
            let spec = SyntheticSpec::new(noise, 500, 42);
            let a = gen_synthetic(&spec).unwrap();
            let b = gen_synthetic(&spec).unwrap();
            assert_eq!(a, b);
            a.validate().unwrap();
            for (i, &c) in a.censored.iter().enumerate() {
                assert_eq!(c, a.y_star.as_ref().unwrap()[i] <= 0.0);
            }
        }
        let a = gen_synthetic(&SyntheticSpec::new(Noise::StandardGaussian, 50, 1)).unwrap();
        let b = gen_synthetic(&SyntheticSpec::new(Noise::Heteroskedastic, 50, 1)).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn true_quantile_examples() {
        assert_eq!(
            true_quantile(Noise::StandardGaussian, 0.5, &[1.0, 1.0, 0.5]).unwrap(),
            2.5
        );
        // heteroskedastic scale vanishes at x2 = -1
        let x = [1.0, 1.0, -1.0];
        assert_eq!(
            latent_quantile(Noise::Heteroskedastic, 0.95, &x, MixtureQuantiles::Exact).unwrap(),
            1.0
        );
        let left = latent_quantile(
            Noise::Heteroskedastic,
            0.95,
            &[1.0, 1.0, -1.5],
            MixtureQuantiles::Exact,
        )
        .unwrap();
        let right = latent_quantile(
            Noise::Heteroskedastic,
            0.95,
            &[1.0, 1.0, -0.5],
            MixtureQuantiles::Exact,
        )
        .unwrap();
        // slope 1 - 1.645 left of the kink and 1 + 1.645 right of it
        let z = std_normal_quantile(0.95).unwrap();
        assert!((left - (0.5 + 0.5 * z)).abs() < 1e-12);
        assert!((right - (1.5 + 0.5 * z)).abs() < 1e-12);

        let q = true_quantile(Noise::StandardGaussian, 0.05, &[1.0, -1.0, -0.5]).unwrap();
        assert_eq!(q, 0.0);
        let lat = latent_quantile(
            Noise::StandardGaussian,
            0.05,
            &[1.0, -1.0, -0.5],
            MixtureQuantiles::Exact,
        )
        .unwrap();
        assert!((lat - (-0.5 - 1.644_853_626_951_472)).abs() < 1e-12);
        assert!(true_quantile(Noise::StandardGaussian, 1.0, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mixture_quantile_inverts_cdf() {
        for t in [0.01, 0.05, 0.3, 0.5, 0.95, 0.999] {
            let q = mixture_quantile(QuantileLevel::new(t).unwrap());
            assert!((mixture_cdf(q) - t).abs() < 1e-13);
        }
        assert!(mixture_quantile(QuantileLevel::new(0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_fraction_without_clipping() {
        // every latent quantile well above zero
        let x: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![1.0, 1.0, 3.0 + i as f64 * 0.1])
            .collect();
        let q: Vec<f64> = x
            .iter()
            .map(|r| {
                latent_quantile(Noise::StandardGaussian, 0.5, r, MixtureQuantiles::Exact).unwrap()
            })
            .collect();
        let ds = CensoredDataset {
            y: q.clone(),
            tau: vec![0.0; 20],
            censored: vec![false; 20],
            y_star: Some(q.clone()),
            latent_quantiles: Some(QuantileTable(vec![(0.5, q)])),
            x,
            side: Side::Left,
        };
        assert_eq!(zero_quantile_fraction(&ds, 0.5).unwrap(), 0.0);
        let mut bare = ds.clone();
        bare.latent_quantiles = None;
        assert!(matches!(
            zero_quantile_fraction(&bare, 0.5),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn partial_censoring_examples() {
        let series: Vec<f64> = (1..=50).map(f64::from).collect();
        let ds = censor_partial(&series, 0.0, 0.1, 0.2, 1).unwrap();
        assert_eq!(ds.y, series);
        assert_eq!(ds.n_censored(), 0);
        ds.validate().unwrap();

        let ds = censor_partial(&series, 1.0, 0.5, 0.5, 1).unwrap();
        for (y, s) in ds.y.iter().zip(&series) {
            assert_eq!(*y, 0.5 * s);
        }
        assert_eq!(ds.n_censored(), 50);
        ds.validate().unwrap();

        assert!(censor_partial(&series, 0.5, 0.0, 0.3, 1).is_err());
        assert!(censor_partial(&series, 0.5, 0.4, 0.3, 1).is_err());
        assert!(censor_partial(&series, 0.5, 0.4, 1.0, 1).is_err());
        assert!(censor_partial(&series, 1.5, 0.1, 0.3, 1).is_err());
    }

    #[test]
    fn partial_censoring_mean_ratio() {
        // E[y]/E[y*] = 1 - gamma * E[delta] = 1 - 0.5 * 0.5
        let series: Vec<f64> = bundled_daily_series(10_000, 9);
        let ds = censor_partial(&series, 0.5, 0.34, 0.66, 4).unwrap();
        let ratio = ds.y.iter().sum::<f64>() / series.iter().sum::<f64>();
        assert!((ratio - 0.75).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn fleet_censoring_examples() {
        let table = gen_trip_table(60, 20, 2.0, 0.3, 5).unwrap();
        let ds = censor_fleet(&table, 0.0, 1).unwrap();
        assert_eq!(Some(ds.y.clone()), ds.y_star);
        ds.validate().unwrap();

        let ds = censor_fleet(&table, 0.5, 1).unwrap();
        for (y, s) in ds.y.iter().zip(ds.y_star.as_ref().unwrap()) {
            assert!(y <= s);
        }
        assert!(ds.censored.iter().all(|c| *c));
        assert_eq!(ds.side, Side::Right);

        let empty = TripTable {
            n_days: 3,
            n_vehicles: 0,
            trips: vec![],
        };
        assert!(matches!(censor_fleet(&empty, 0.2, 1), Err(Error::Usage(_))));
        assert!(censor_fleet(&table, 1.0, 1).is_err());
    }

    #[test]
    fn idle_vehicle_removal_changes_nothing() {
        let table = TripTable {
            n_days: 2,
            n_vehicles: 2,
            trips: vec![Trip { day: 0, vehicle: 0 }, Trip { day: 1, vehicle: 0 }],
        };
        // alpha = 0.5 removes exactly one vehicle; try seeds until vehicle 1 goes
        let mut seen_idle = false;
        for seed in 0..20 {
            let ds = censor_fleet(&table, 0.5, seed).unwrap();
            if ds.y == vec![1.0, 1.0] {
                seen_idle = true;
                assert_eq!(ds.y, table.daily_counts());
            }
        }
        assert!(seen_idle);
    }

    #[test]
    fn trip_table_examples() {
        let a = gen_trip_table(365, 50, 1.5, 0.0, 8).unwrap();
        let b = gen_trip_table(365, 50, 1.5, 0.0, 8).unwrap();
        assert_eq!(a, b);
        let counts = a.daily_counts();
        let mean = counts.iter().sum::<f64>() / 365.0;
        assert!((mean / 75.0 - 1.0).abs() < 0.02, "mean {mean}");
        let empty = gen_trip_table(30, 10, 0.0, 0.5, 1).unwrap();
        assert!(empty.trips.is_empty());
    }

    #[test]
    fn consecutive_thirds_preserve_order() {
        let ds =
            censor_partial(&(0..9).map(f64::from).collect::<Vec<_>>(), 0.0, 0.1, 0.2, 0).unwrap();
        let (a, b, c) = split(&ds, &SplitScheme::ConsecutiveThirds).unwrap();
        assert_eq!(a.y, vec![0.0, 1.0, 2.0]);
        assert_eq!(b.y, vec![3.0, 4.0, 5.0]);
        assert_eq!(c.y, vec![6.0, 7.0, 8.0]);
    }

    #[test]
    fn random_split_sizes_and_determinism() {
        let scheme = SplitScheme::Random {
            p_train: 0.62,
            p_val: 0.15,
            p_test: 0.23,
            seed: 3,
        };
        let parts = split_indices(1000, &scheme).unwrap();
        assert_eq!(
            [parts[0].len(), parts[1].len(), parts[2].len()],
            [620, 150, 230]
        );
        assert_eq!(parts, split_indices(1000, &scheme).unwrap());
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());

        let bad = SplitScheme::Random {
            p_train: 0.62,
            p_val: 0.15,
            p_test: 0.33,
            seed: 3,
        };
        assert!(matches!(split_indices(1000, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn apportion_hands_leftovers_to_largest_remainders() {
        assert_eq!(apportion(10, &[1.0 / 3.0; 3]).unwrap(), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.5, 0.25, 0.25]).unwrap(), vec![3, 2, 2]);
    }

    #[test]
    fn lag_feature_layout() {
        let s: Vec<f64> = (1..=9).map(f64::from).collect();
        let (rows, targets) = lag_features(&s, 7).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], vec![1.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(targets, vec![8.0, 9.0]);
        let (rows, _) = lag_features(&[4.0; 20], 7).unwrap();
        assert!(rows.windows(2).all(|w| w[0] == w[1]));
        assert!(matches!(lag_features(&s[..7], 7), Err(Error::Usage(_))));
    }

    #[test]
    fn lag_one_regression_recovers_ar_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let phi = 0.6;
        let mut s = vec![0.0];
        for _ in 0..5000 {
            let e: f64 = rng.sample(StandardNormal);
            let last = *s.last().unwrap();
            s.push(phi * last + e);
        }
        let (rows, targets) = lag_features(&s, 7).unwrap();
        // OLS of y on (1, lag1) via the 2x2 normal equations
        let n = rows.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (r, y) in rows.iter().zip(&targets) {
            sx += r[1];
            sy += y;
            sxx += r[1] * r[1];
            sxy += r[1] * y;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - phi).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn attached_quantiles_match_generator() {
        let ds = gen_synthetic(&SyntheticSpec::new(Noise::GaussianMixture, 60, 5)).unwrap();
        let mut bare = ds.clone();
        bare.latent_quantiles = None;
        attach_latent_quantiles(
            &mut bare,
            Noise::GaussianMixture,
            &BENCHMARK_THETAS,
            MixtureQuantiles::Exact,
        )
        .unwrap();
        assert_eq!(bare, ds);
    }

    #[test]
    fn mirror_twice_is_identity() {
        let ds = gen_synthetic(&SyntheticSpec::new(Noise::Heteroskedastic, 40, 2)).unwrap();
        let m = ds.mirrored();
        assert_eq!(m.side, Side::Right);
        m.validate().unwrap();
        assert_eq!(
            m.latent_quantiles.as_ref().unwrap().levels(),
            vec![0.05, 0.5, 0.95]
        );
        assert_eq!(m.mirrored(), ds);
    }
}
