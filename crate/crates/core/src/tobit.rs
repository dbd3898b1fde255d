//! Linear Gaussian Tobit baseline: `y* ~ N(x . beta, sigma^2)` clipped at the
//! row threshold, fitted by the Tobit likelihood through [`fit`].

use serde::{Deserialize, Serialize};

use crate::datagen::CensoredDataset;
use crate::error::{Error, Result};
use crate::losses::{QuantileLevel, Side};
use crate::models::{InitScheme, Net, NetSpec};
use crate::normal::std_normal_quantile;
use crate::training::{fit, fit_with_lr_grid, FitResult, LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TobitModel {
    /// Mean coefficients; slot 0 pairs with the intercept.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub side: Side,
}

impl TobitModel {
    pub fn from_fit(result: &FitResult) -> Result<Self> {
        let (side, sigma) = match (result.loss, result.sigma) {
            (LossKind::Tobit { side, .. }, Some(sigma)) => (side, sigma),
            _ => {
                return Err(Error::Usage(
                    "fit result does not come from a Tobit fit".into(),
                ))
            }
        };
        Ok(Self {
            beta: result.net.params().to_vec(),
            sigma,
            side,
        })
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::shape("Tobit covariates", self.beta.len(), x.len()));
        }
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TobitOptions {
    /// Fixed scale, or the starting value when `estimate_sigma` is set.
    pub sigma: f64,
    pub estimate_sigma: bool,
    pub init: InitScheme,
    /// Select the learning rate from the grid instead of using `learning_rate`.
    pub use_lr_grid: bool,
}

impl Default for TobitOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            estimate_sigma: false,
            init: InitScheme::Ones,
            use_lr_grid: false,
        }
    }
}

/// Fits the Tobit mean on `train`, oriented to the dataset's censoring side,
/// with the censored flags taken as given.
pub fn tobit_fit(
    train: &CensoredDataset,
    val: &CensoredDataset,
    cfg: &TrainConfig,
    opts: &TobitOptions,
) -> Result<(TobitModel, FitResult)> {
    let net: Net = NetSpec::linear()
        .build(train.n_covariates())?
        .with_init(opts.init);
    let loss = LossKind::Tobit {
        sigma: opts.sigma,
        side: train.side,
        estimate_sigma: opts.estimate_sigma,
    };
    let result = if opts.use_lr_grid {
        fit_with_lr_grid(&net, loss, train, val, cfg)?
    } else {
        fit(&net, loss, train, val, cfg)?
    };
    Ok((TobitModel::from_fit(&result)?, result))
}

/// `x . beta + sigma * Phi^{-1}(theta)`.
pub fn tobit_quantiles(model: &TobitModel, x: &[f64], theta: f64) -> Result<f64> {
    let theta = QuantileLevel::new(theta)?;
    Ok(model.mean(x)? + model.sigma * std_normal_quantile(theta.value())?)
}
