//! Point accuracy against ground-truth quantiles and coverage of 5%-95%
//! intervals against latent values, on the whole test set or its
//! uncensored rows.

use serde::{Deserialize, Serialize};

use crate::datagen::CensoredDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    /// Absent when the true quantiles are all equal.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

/// `R^2 = 1 - sum (p - q)^2 / sum (q - mean q)^2`, MAE and RMSE.
pub fn point_metrics(pred: &[f64], truth: &[f64]) -> Result<PointMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::shape("point metrics", truth.len(), pred.len()));
    }
    let n = truth.len();
    if n < 2 {
        return Err(Error::Usage(format!(
            "point metrics need at least 2 rows, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = truth.iter().sum::<f64>() / nf;
    let (mut sae, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (p, q) in pred.iter().zip(truth) {
        let e = p - q;
        sae += e.abs();
        sse += e * e;
        sst += (q - mean) * (q - mean);
    }
    Ok(PointMetrics {
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        mae: sae / nf,
        rmse: (sse / nf).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub icp: f64,
    /// Mean signed width; crossed intervals count negatively.
    pub mil: f64,
    /// Rows with `upper < lower`.
    pub crossings: usize,
}

pub fn interval_metrics(lower: &[f64], upper: &[f64], y_star: &[f64]) -> Result<IntervalMetrics> {
    if lower.len() != y_star.len() {
        return Err(Error::shape(
            "interval lower bounds",
            y_star.len(),
            lower.len(),
        ));
    }
    if upper.len() != y_star.len() {
        return Err(Error::shape(
            "interval upper bounds",
            y_star.len(),
            upper.len(),
        ));
    }
    if y_star.is_empty() {
        return Err(Error::Usage("interval metrics on an empty set".into()));
    }
    let n = y_star.len() as f64;
    let mut covered = 0usize;
    let mut width = 0.0;
    let mut crossings = 0usize;
    for ((&lo, &hi), &y) in lower.iter().zip(upper).zip(y_star) {
        if lo <= y && y <= hi {
            covered += 1;
        }
        if hi < lo {
            crossings += 1;
        }
        width += hi - lo;
    }
    Ok(IntervalMetrics {
        icp: covered as f64 / n,
        mil: width / n,
        crossings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    AllTest,
    NonCensoredTest,
}

impl Subset {
    pub const BOTH: [Subset; 2] = [Subset::AllTest, Subset::NonCensoredTest];

    pub fn slug(self) -> &'static str {
        match self {
            Subset::AllTest => "all_test",
            Subset::NonCensoredTest => "non_censored_test",
        }
    }

    pub fn rows(self, dataset: &CensoredDataset) -> Result<Vec<usize>> {
        let rows: Vec<usize> = match self {
            Subset::AllTest => (0..dataset.len()).collect(),
            Subset::NonCensoredTest => (0..dataset.len())
                .filter(|&i| !dataset.censored[i])
                .collect(),
        };
        if rows.is_empty() {
            return Err(Error::Usage(format!("subset {} is empty", self.slug())));
        }
        Ok(rows)
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "all" | "all_test" => Ok(Subset::AllTest),
            "non_censored" | "non_censored_test" | "uncensored" => Ok(Subset::NonCensoredTest),
            other => Err(Error::Config(format!("unknown subset `{other}`"))),
        }
    }
}

/// Predictions to score: one quantile level or a 5%-95% interval.
#[derive(Debug, Clone, Copy)]
pub enum Prediction<'a> {
    Quantile { theta: f64, preds: &'a [f64] },
    Interval { lower: &'a [f64], upper: &'a [f64] },
}

/// One row of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    /// Quantile level, or `interval`.
    pub target: String,
    pub subset: Subset,
    pub n: usize,
    pub r2: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub icp: Option<f64>,
    pub mil: Option<f64>,
    pub crossings: Option<usize>,
}

/// Scores `pred` on the chosen rows of `dataset`. Quantile predictions are
/// compared with the dataset's latent quantiles, intervals with `y_star`.
pub fn subset_report(
    pred: &Prediction,
    dataset: &CensoredDataset,
    subset: Subset,
) -> Result<EvalReport> {
    let rows = subset.rows(dataset)?;
    let pick = |v: &[f64]| -> Result<Vec<f64>> {
        if v.len() != dataset.len() {
            return Err(Error::shape("predictions", dataset.len(), v.len()));
        }
        Ok(rows.iter().map(|&i| v[i]).collect())
    };
    let mut report = EvalReport {
        dataset: String::new(),
        model: String::new(),
        target: String::new(),
        subset,
        n: rows.len(),
        r2: None,
        mae: None,
        rmse: None,
        icp: None,
        mil: None,
        crossings: None,
    };
    match *pred {
        Prediction::Quantile { theta, preds } => {
            let truth = pick(dataset.latent_quantiles_for(theta)?)?;
            let m = point_metrics(&pick(preds)?, &truth)?;
            report.target = format!("{theta:.2}");
            report.r2 = m.r2;
            report.mae = Some(m.mae);
            report.rmse = Some(m.rmse);
        }
        Prediction::Interval { lower, upper } => {
            let y_star = dataset.y_star().map_err(|_| {
                Error::Usage(
                    "interval coverage needs latent values (y_star), which this dataset lacks"
                        .into(),
                )
            })?;
            let m = interval_metrics(&pick(lower)?, &pick(upper)?, &pick(y_star)?)?;
            report.target = "interval".into();
            report.icp = Some(m.icp);
            report.mil = Some(m.mil);
            report.crossings = Some(m.crossings);
        }
    }
    Ok(report)
}

impl EvalReport {
    pub fn labeled(mut self, dataset: &str, model: &str) -> Self {
        self.dataset = dataset.into();
        self.model = model.into();
        self
    }
}

/// RFC 4180 CSV with one header row.
pub fn reports_to_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    if reports.is_empty() {
        w.write_record([
            "dataset",
            "model",
            "target",
            "subset",
            "n",
            "r2",
            "mae",
            "rmse",
            "icp",
            "mil",
            "crossings",
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}
