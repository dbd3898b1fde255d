//! Full-batch Adam with global-norm clipping, early stopping on validation
//! loss, learning-rate grid selection and initialization selection.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{mirror_level, CensoredDataset};
use crate::error::{Error, Result};
use crate::losses::{
    censored_qr_nll, censored_qr_nll_grad, tilted_nll, tilted_nll_grad, tobit_nll, tobit_nll_grad,
    tobit_nll_grad_log_sigma, CensoredPoint, QuantileLevel, Side,
};
use crate::models::{sample_dropout_mask, MirrorWrapper, Net, Tape};

/// Number of trailing losses kept in a divergence diagnostic.
const TRACE_TAIL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_grid: Vec<f64>,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub patience: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seeds the dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            lr_grid: vec![0.001, 0.01, 0.1, 1.0],
            clip_norm: Some(1.0),
            patience: 10,
            max_epochs: 5000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain {
                    name,
                    value: v,
                    expected: "a positive finite value",
                })
            }
        };
        positive("learning_rate", self.learning_rate)?;
        for &lr in &self.lr_grid {
            positive("lr_grid", lr)?;
        }
        if let Some(c) = self.clip_norm {
            positive("clip_norm", c)?;
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Domain {
                    name,
                    value: b,
                    expected: "0 <= beta < 1",
                });
            }
        }
        positive("adam_eps", self.adam_eps)
    }

    pub fn with_learning_rate(&self, lr: f64) -> Self {
        Self {
            learning_rate: lr,
            ..self.clone()
        }
    }
}

/// Objective minimized by [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `rho_theta(y - q)` on the observed targets, ignoring censoring.
    Tilted { theta: f64 },
    /// `rho_theta(y - max(tau, q))`; left-censored data only.
    Censored { theta: f64 },
    /// Gaussian Tobit likelihood of a linear mean. With `estimate_sigma`, `sigma`
    /// is the starting value of a jointly fitted log-scale.
    Tobit {
        sigma: f64,
        side: Side,
        #[serde(default)]
        estimate_sigma: bool,
    },
}

impl LossKind {
    pub fn tobit(side: Side) -> Self {
        LossKind::Tobit {
            sigma: 1.0,
            side,
            estimate_sigma: false,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            LossKind::Tilted { theta } | LossKind::Censored { theta } => Some(theta),
            LossKind::Tobit { .. } => None,
        }
    }

    fn check(&self, data_side: Side) -> Result<()> {
        match *self {
            LossKind::Tilted { theta } => QuantileLevel::new(theta).map(|_| ()),
            LossKind::Censored { theta } => {
                QuantileLevel::new(theta)?;
                if data_side != Side::Left {
                    return Err(Error::Usage(
                        "the censored quantile loss expects left-censored data; fit right-censored data through mirror_fit".into(),
                    ));
                }
                Ok(())
            }
            LossKind::Tobit { sigma, side, .. } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Domain {
                        name: "sigma",
                        value: sigma,
                        expected: "sigma > 0",
                    });
                }
                if side != data_side {
                    return Err(Error::Usage(format!(
                        "Tobit loss oriented {side:?} applied to {data_side:?}-censored data"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Mean loss over rows and its gradient with respect to each prediction and,
/// for a fitted Tobit scale, `ln(sigma)`.
fn mean_loss(
    kind: &LossKind,
    points: &[CensoredPoint],
    targets: &[f64],
    preds: &[f64],
    sigma: f64,
    want_grad: bool,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = preds.len() as f64;
    let (total, mut grad, g_sigma) = match *kind {
        LossKind::Tilted { theta } => {
            let t = QuantileLevel::new(theta)?;
            let l = tilted_nll(targets, preds, t)?;
            let g = if want_grad {
                tilted_nll_grad(targets, preds, t)?
            } else {
                Vec::new()
            };
            (l, g, 0.0)
        }
        LossKind::Censored { theta } => {
            let t = QuantileLevel::new(theta)?;
            let l = censored_qr_nll(points, preds, t, false)?;
            let g = if want_grad {
                censored_qr_nll_grad(points, preds, t)?
            } else {
                Vec::new()
            };
            (l, g, 0.0)
        }
        LossKind::Tobit {
            side,
            estimate_sigma,
            ..
        } => {
            let l = tobit_nll(points, preds, sigma, side)?;
            let (g, gs) = if want_grad {
                let gs = if estimate_sigma {
                    tobit_nll_grad_log_sigma(points, preds, sigma, side)?
                } else {
                    0.0
                };
                (tobit_nll_grad(points, preds, sigma, side)?, gs)
            } else {
                (Vec::new(), 0.0)
            };
            (l, g, gs)
        }
    };
    for g in &mut grad {
        *g /= n;
    }
    Ok((total / n, grad, g_sigma / n))
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` to norm `max_norm` when it is longer; returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Net restored to the best validation epoch.
    pub net: Net,
    pub loss: LossKind,
    /// Scale of a Tobit fit (fixed or estimated).
    pub sigma: Option<f64>,
    /// Index 0 holds the losses of the initial weights.
    pub train_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_epoch: usize,
    pub hit_max_epochs: bool,
    pub learning_rate: f64,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl FitResult {
    /// Equality of everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        &a == other
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (e, (t, v)) in self.train_trace.iter().zip(&self.val_trace).enumerate() {
            out.push_str(&format!("{e},{t},{v}\n"));
        }
        out
    }
}

struct Batch<'a> {
    rows: &'a [Vec<f64>],
    points: Vec<CensoredPoint>,
    targets: &'a [f64],
}

impl<'a> Batch<'a> {
    fn new(data: &'a CensoredDataset, input_dim: usize, what: &str) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Usage(format!("{what} set is empty")));
        }
        if data.n_covariates() != input_dim {
            return Err(Error::shape(
                "covariate columns",
                input_dim,
                data.n_covariates(),
            ));
        }
        Ok(Self {
            rows: &data.x,
            points: data.points(),
            targets: &data.y,
        })
    }
}

fn eval_loss(net: &Net, kind: &LossKind, batch: &Batch, sigma: f64) -> Result<f64> {
    let preds = batch
        .rows
        .iter()
        .map(|x| net.forward(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_loss(kind, &batch.points, batch.targets, &preds, sigma, false)?.0)
}

fn non_finite(epoch: usize, lr: f64, trace: &[f64], last: f64) -> Error {
    let start = trace.len().saturating_sub(TRACE_TAIL - 1);
    let mut t = trace[start..].to_vec();
    t.push(last);
    Error::NonFinite {
        epoch,
        learning_rate: lr,
        trace: t,
    }
}

/// Trains `net` from its current weights at `cfg.learning_rate`.
///
/// Each epoch takes one Adam step on the full training set (mean loss plus
/// the net's L2 penalty) and then scores the validation set in evaluation
/// mode. Training stops once the validation loss has not improved on its best
/// value, the initial weights included, for `patience` epochs.
pub fn fit(
    net: &Net,
    loss: LossKind,
    train: &CensoredDataset,
    val: &CensoredDataset,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    loss.check(train.side)?;
    if val.side != train.side {
        return Err(Error::Usage(
            "train and validation sets are censored on different sides".into(),
        ));
    }
    let start = Instant::now();
    let tr = Batch::new(train, net.input_dim(), "training")?;
    let va = Batch::new(val, net.input_dim(), "validation")?;
    let lr = cfg.learning_rate;

    let (mut sigma, fit_sigma) = match loss {
        LossKind::Tobit {
            sigma,
            estimate_sigma,
            ..
        } => (sigma, estimate_sigma),
        _ => (1.0, false),
    };
    let mut net = net.clone();
    let n_net = net.n_params();
    let n_all = n_net + usize::from(fit_sigma);
    let mut adam = Adam::new(n_all, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rate = net.dropout_rate();
    let n_features = net.input_dim() - 1;

    let mut tapes: Vec<Tape> = (0..tr.rows.len()).map(|_| Tape::new()).collect();
    let mut preds = vec![0.0; tr.rows.len()];
    let mut grad = vec![0.0; n_all];
    let mut params = vec![0.0; n_all];

    let val0 = eval_loss(&net, &loss, &va, sigma)?;
    let train0 = eval_loss(&net, &loss, &tr, sigma)? + net.l2_penalty();
    if !val0.is_finite() || !train0.is_finite() {
        return Err(non_finite(
            0,
            lr,
            &[],
            if val0.is_finite() { train0 } else { val0 },
        ));
    }
    let mut train_trace = vec![train0];
    let mut val_trace = vec![val0];
    let mut best = (val0, 0usize, net.clone(), sigma);
    let mut stop_epoch = 0;
    let mut hit_max = true;

    for epoch in 1..=cfg.max_epochs {
        for ((x, tape), p) in tr.rows.iter().zip(&mut tapes).zip(&mut preds) {
            let mask = (rate > 0.0).then(|| sample_dropout_mask(rate, n_features, &mut rng));
            *p = net.forward_train(x, mask.as_deref(), tape)?;
        }
        let (l, g_pred, g_sigma) = mean_loss(&loss, &tr.points, tr.targets, &preds, sigma, true)?;
        let train_loss = l + net.l2_penalty();
        if !train_loss.is_finite() {
            return Err(non_finite(epoch, lr, &train_trace, train_loss));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (tape, &up) in tapes.iter().zip(&g_pred) {
            if up != 0.0 {
                net.backward(tape, up, &mut grad[..n_net])?;
            }
        }
        net.add_l2_grad(&mut grad[..n_net]);
        if fit_sigma {
            grad[n_net] = g_sigma;
        }
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grad, c);
        }
        params[..n_net].copy_from_slice(net.params());
        if fit_sigma {
            params[n_net] = sigma.ln();
        }
        adam.step(&mut params, &grad, lr);
        net.params_mut().copy_from_slice(&params[..n_net]);
        if fit_sigma {
            sigma = params[n_net].exp();
        }

        let val_loss = eval_loss(&net, &loss, &va, sigma)?;
        train_trace.push(train_loss);
        if !val_loss.is_finite() {
            return Err(non_finite(epoch, lr, &val_trace, val_loss));
        }
        val_trace.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch, net.clone(), sigma);
        } else if epoch - best.1 >= cfg.patience {
            stop_epoch = epoch;
            hit_max = false;
            break;
        }
        stop_epoch = epoch;
    }

    let (best_val_loss, best_epoch, best_net, best_sigma) = best;
    Ok(FitResult {
        net: best_net,
        loss,
        sigma: matches!(loss, LossKind::Tobit { .. }).then_some(best_sigma),
        train_trace,
        val_trace,
        best_epoch,
        best_val_loss,
        stop_epoch,
        hit_max_epochs: hit_max,
        learning_rate: lr,
        seed: cfg.seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// One [`fit`] per rate in `cfg.lr_grid`, all from the same initial weights.
/// Returns the fit with the lowest best validation loss; ties go to the
/// smaller rate. Diverged fits are skipped.
pub fn fit_with_lr_grid(
    net: &Net,
    loss: LossKind,
    train: &CensoredDataset,
    val: &CensoredDataset,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    if cfg.lr_grid.is_empty() {
        return Err(Error::Config("learning-rate grid is empty".into()));
    }
    let mut grid = cfg.lr_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<FitResult> = None;
    let mut failures = Vec::new();
    for lr in grid {
        match fit(net, loss, train, val, &cfg.with_learning_rate(lr)) {
            Ok(f) => {
                if best
                    .as_ref()
                    .is_none_or(|b| f.best_val_loss < b.best_val_loss)
                {
                    best = Some(f);
                }
            }
            Err(e @ Error::NonFinite { .. }) => failures.push((lr, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    best.ok_or(Error::AllDiverged(failures))
}

/// `mean(train y*) / mean(train y)`.
pub fn latent_mean_ratio(train: &CensoredDataset) -> Result<f64> {
    let y_star = train.y_star()?;
    if train.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let mean_obs = train.y.iter().sum::<f64>() / train.len() as f64;
    let mean_lat = y_star.iter().sum::<f64>() / train.len() as f64;
    if mean_obs == 0.0 || !mean_obs.is_finite() {
        return Err(Error::Degenerate(format!(
            "training mean of observed targets is {mean_obs}"
        )));
    }
    Ok(mean_lat / mean_obs)
}

/// Sets `tau_i = y_i * ratio` on every uncensored row; censored rows keep
/// `tau_i = y_i`.
pub fn impute_thresholds(
    train_latent_mean_ratio: f64,
    dataset: &CensoredDataset,
) -> Result<CensoredDataset> {
    let r = train_latent_mean_ratio;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Degenerate(format!(
            "latent-to-observed mean ratio is {r}"
        )));
    }
    let mut out = dataset.clone();
    for ((t, &y), &c) in out.tau.iter_mut().zip(&dataset.y).zip(&dataset.censored) {
        if !c {
            *t = y * r;
        }
    }
    Ok(out)
}

/// Validation scores of one initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScore {
    pub val_icp: f64,
    pub val_mil: f64,
    /// Mean of the observed training targets.
    pub train_mean: f64,
}

/// Outcome of [`select_initialization`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitSelection {
    pub index: usize,
    /// Every candidate failed the interval-length filter.
    pub fallback: bool,
}

/// Largest accepted `val_mil / train_mean`.
pub const MIL_RATIO_LIMIT: f64 = 2.0;

/// Drops candidates whose validation MIL exceeds twice the training mean,
/// then picks the validation ICP closest to 0.9 (first on ties). When every
/// candidate is dropped, the ICP rule is applied to all of them.
pub fn select_initialization(scores: &[InitScore]) -> Result<InitSelection> {
    if scores.is_empty() {
        return Err(Error::Usage("no initializations to select from".into()));
    }
    let closest = |ok: &dyn Fn(&InitScore) -> bool| {
        scores
            .iter()
            .enumerate()
            .filter(|(_, s)| ok(s))
            .min_by(|a, b| {
                (a.1.val_icp - 0.9)
                    .abs()
                    .total_cmp(&(b.1.val_icp - 0.9).abs())
            })
            .map(|(i, _)| i)
    };
    if let Some(index) = closest(&|s| s.val_mil / s.train_mean <= MIL_RATIO_LIMIT) {
        return Ok(InitSelection {
            index,
            fallback: false,
        });
    }
    Ok(InitSelection {
        index: closest(&|_| true).expect("non-empty"),
        fallback: true,
    })
}

/// Fits a right-censored problem through its left-censored mirror: the
/// returned wrapper predicts `q_theta(x) = -inner(-x)` where `inner` was
/// trained on the negated data at level `1 - theta`. With `lr_grid` the
/// inner fit goes through [`fit_with_lr_grid`].
pub fn mirror_fit(
    net: &Net,
    loss: LossKind,
    train: &CensoredDataset,
    val: &CensoredDataset,
    cfg: &TrainConfig,
    lr_grid: bool,
) -> Result<(MirrorWrapper, FitResult)> {
    if train.side != Side::Right {
        return Err(Error::Usage(
            "mirror_fit expects right-censored data".into(),
        ));
    }
    let mirrored = match loss {
        LossKind::Tilted { theta } => LossKind::Tilted {
            theta: mirror_level(theta),
        },
        LossKind::Censored { theta } => LossKind::Censored {
            theta: mirror_level(theta),
        },
        LossKind::Tobit {
            sigma,
            side,
            estimate_sigma,
        } => LossKind::Tobit {
            sigma,
            side: side.flipped(),
            estimate_sigma,
        },
    };
    let (tr, va) = (train.mirrored(), val.mirrored());
    let result = if lr_grid {
        fit_with_lr_grid(net, mirrored, &tr, &va, cfg)?
    } else {
        fit(net, mirrored, &tr, &va, cfg)?
    };
    Ok((MirrorWrapper::new(result.net.clone()), result))
}
