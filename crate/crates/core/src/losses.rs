//! Loss functions for quantile and censored regression, together with their
//! (sub)gradients with respect to the model output.
//!
//! All residuals are `target - prediction`, so minimizing the summed tilted
//! loss over predictions yields the `theta`-quantile of the targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{ln_std_normal_pdf, std_normal_cdf, std_normal_pdf, std_normal_sf};

pub use crate::normal::std_normal_quantile;

/// Lower bound applied to censored-term probabilities before taking logs.
pub const TOBIT_PROB_FLOOR: f64 = 1e-300;

/// A quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(theta: f64) -> Result<Self> {
        if theta > 0.0 && theta < 1.0 {
            Ok(Self(theta))
        } else {
            Err(Error::Domain {
                name: "theta",
                value: theta,
                expected: "0 < theta < 1",
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The level `1 - theta` used on the mirrored problem.
    pub fn mirrored(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// Direction in which observations are clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `y = max(tau, y*)`
    Left,
    /// `y = min(tau, y*)`
    Right,
}

impl Side {
    pub fn flipped(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// A residual paired with the level it is scored at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedResidual {
    pub r: f64,
    pub theta: QuantileLevel,
}

impl TiltedResidual {
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        Ok(Self {
            r,
            theta: QuantileLevel::new(theta)?,
        })
    }

    pub fn loss(&self) -> f64 {
        tilted_loss(self.r, self.theta)
    }

    pub fn subgrad(&self) -> f64 {
        tilted_loss_subgrad(self.r, self.theta)
    }
}

/// One observation of a censored dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredPoint {
    pub y: f64,
    pub tau: f64,
    pub censored: bool,
}

impl CensoredPoint {
    pub fn new(y: f64, tau: f64, censored: bool) -> Self {
        Self { y, tau, censored }
    }

    /// Checks the clamp relation for the given side: the observation lies on
    /// the observable side of its threshold and sits on it when censored.
    pub fn is_consistent(&self, side: Side) -> bool {
        let ordered = match side {
            Side::Left => self.y >= self.tau,
            Side::Right => self.y <= self.tau,
        };
        ordered && (!self.censored || self.y == self.tau)
    }
}

/// `rho_theta(r) = max(theta * r, (theta - 1) * r)`
pub fn tilted_loss(r: f64, theta: QuantileLevel) -> f64 {
    let t = theta.0;
    (t * r).max((t - 1.0) * r)
}

/// Derivative of [`tilted_loss`] in `r`; the kink at zero takes the upper branch.
pub fn tilted_loss_subgrad(r: f64, theta: QuantileLevel) -> f64 {
    if r >= 0.0 {
        theta.0
    } else {
        theta.0 - 1.0
    }
}

/// Summed tilted loss of `targets - preds`; the censorship-unaware objective.
pub fn tilted_nll(targets: &[f64], preds: &[f64], theta: QuantileLevel) -> Result<f64> {
    check_len("tilted_nll", targets.len(), preds.len())?;
    Ok(targets
        .iter()
        .zip(preds)
        .map(|(y, q)| tilted_loss(y - q, theta))
        .sum())
}

/// Per-prediction gradient of [`tilted_nll`].
pub fn tilted_nll_grad(targets: &[f64], preds: &[f64], theta: QuantileLevel) -> Result<Vec<f64>> {
    check_len("tilted_nll_grad", targets.len(), preds.len())?;
    Ok(targets
        .iter()
        .zip(preds)
        .map(|(y, q)| -tilted_loss_subgrad(y - q, theta))
        .collect())
}

/// Negative log-likelihood of the censored quantile model for left-censored
/// data: `sum_i rho_theta(y_i - max(tau_i, q_i))`.
///
/// With `include_constant` the parameter-free term `-N ln(theta) - N ln(1 - theta)`
/// is added.
pub fn censored_qr_nll(
    points: &[CensoredPoint],
    preds: &[f64],
    theta: QuantileLevel,
    include_constant: bool,
) -> Result<f64> {
    check_len("censored_qr_nll", points.len(), preds.len())?;
    let core: f64 = points
        .iter()
        .zip(preds)
        .map(|(p, &q)| tilted_loss(p.y - p.tau.max(q), theta))
        .sum();
    if include_constant {
        let n = points.len() as f64;
        let t = theta.0;
        Ok(core - n * t.ln() - n * (1.0 - t).ln())
    } else {
        Ok(core)
    }
}

/// Gradient of [`censored_qr_nll`] with respect to each prediction.
///
/// Predictions strictly below their threshold are clamped and receive zero
/// gradient; at `q == tau` the gradient flows through `q`.
pub fn censored_qr_nll_grad(
    points: &[CensoredPoint],
    preds: &[f64],
    theta: QuantileLevel,
) -> Result<Vec<f64>> {
    check_len("censored_qr_nll_grad", points.len(), preds.len())?;
    Ok(points
        .iter()
        .zip(preds)
        .map(|(p, &q)| {
            if q < p.tau {
                0.0
            } else {
                -tilted_loss_subgrad(p.y - q, theta)
            }
        })
        .collect())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "sigma",
            value: sigma,
            expected: "sigma > 0",
        })
    }
}

/// Probability mass beyond the threshold for a censored point at standardized
/// residual `z`: `1 - Phi(z)` for upper censoring, `Phi(z)` for lower.
fn censored_mass(z: f64, side: Side) -> f64 {
    match side {
        Side::Right => std_normal_sf(z),
        Side::Left => std_normal_cdf(z),
    }
}

/// Tobit negative log-likelihood with Gaussian latent `N(mean_i, sigma^2)`.
///
/// `side = Right` is the upper-censored form; `side = Left` replaces
/// `1 - Phi` by `Phi`. Censored terms are floored at [`TOBIT_PROB_FLOOR`].
pub fn tobit_nll(points: &[CensoredPoint], means: &[f64], sigma: f64, side: Side) -> Result<f64> {
    check_len("tobit_nll", points.len(), means.len())?;
    check_sigma(sigma)?;
    let ln_sigma = sigma.ln();
    Ok(points
        .iter()
        .zip(means)
        .map(|(p, &mu)| {
            let z = (p.y - mu) / sigma;
            if p.censored {
                -censored_mass(z, side).max(TOBIT_PROB_FLOOR).ln()
            } else {
                -(ln_std_normal_pdf(z) - ln_sigma)
            }
        })
        .sum())
}

/// `phi(z) / P(censored)`, with the asymptotic form once the mass underflows.
fn hazard(z: f64, side: Side) -> f64 {
    // For lower censoring the mass is Phi(z) = 1 - Phi(-z), so reflect.
    let zz = match side {
        Side::Right => z,
        Side::Left => -z,
    };
    let mass = std_normal_sf(zz);
    if mass > 1e-280 {
        std_normal_pdf(zz) / mass
    } else {
        // Mills ratio expansion: phi(z)/(1-Phi(z)) ~ z + 1/z - 2/z^3
        zz + 1.0 / zz - 2.0 / (zz * zz * zz)
    }
}

/// Gradient of [`tobit_nll`] with respect to each mean.
pub fn tobit_nll_grad(
    points: &[CensoredPoint],
    means: &[f64],
    sigma: f64,
    side: Side,
) -> Result<Vec<f64>> {
    check_len("tobit_nll_grad", points.len(), means.len())?;
    check_sigma(sigma)?;
    Ok(points
        .iter()
        .zip(means)
        .map(|(p, &mu)| {
            let z = (p.y - mu) / sigma;
            if p.censored {
                match side {
                    Side::Right => -hazard(z, side) / sigma,
                    Side::Left => hazard(z, side) / sigma,
                }
            } else {
                -z / sigma
            }
        })
        .collect())
}

/// Derivative of [`tobit_nll`] with respect to `ln(sigma)`.
pub fn tobit_nll_grad_log_sigma(
    points: &[CensoredPoint],
    means: &[f64],
    sigma: f64,
    side: Side,
) -> Result<f64> {
    check_len("tobit_nll_grad_log_sigma", points.len(), means.len())?;
    check_sigma(sigma)?;
    Ok(points
        .iter()
        .zip(means)
        .map(|(p, &mu)| {
            let z = (p.y - mu) / sigma;
            if p.censored {
                // d(-ln mass)/d ln sigma = -(d mass/dz)(dz/d ln sigma)/mass, dz/d ln sigma = -z
                match side {
                    Side::Right => -hazard(z, side) * z,
                    Side::Left => hazard(z, side) * z,
                }
            } else {
                1.0 - z * z
            }
        })
        .sum())
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(context, expected, got));
    }
    if expected == 0 {
        return Err(Error::Usage(format!("{context}: empty input")));
    }
    Ok(())
}
