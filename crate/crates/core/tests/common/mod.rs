#![allow(dead_code)]

use cqrnn::losses::{
    censored_qr_nll, censored_qr_nll_grad, tilted_nll, tilted_nll_grad, tobit_nll, tobit_nll_grad,
    tobit_nll_grad_log_sigma, CensoredPoint, QuantileLevel, Side,
};
use cqrnn::models::{sample_dropout_mask, Activation, Net, NetSpec, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const REL_TOL: f64 = 1e-5;
/// Absolute floor so that exact zeros compare equal to rounding noise.
pub const ABS_FLOOR: f64 = 1e-9;
const STEP: f64 = 1e-6;
/// Distance from a kink below which a configuration is redrawn.
const KINK_MARGIN: f64 = 1e-3;

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn central(f: impl Fn(f64) -> f64, at: f64) -> f64 {
    (f(at + STEP) - f(at - STEP)) / (2.0 * STEP)
}

#[derive(Debug, Default)]
pub struct CheckSummary {
    pub configs: usize,
    pub failures: Vec<String>,
    /// Largest error as a share of its allowed tolerance.
    pub worst: f64,
}

impl CheckSummary {
    fn record(&mut self, label: &str, analytic: f64, numeric: f64) {
        let share =
            (analytic - numeric).abs() / (REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR);
        self.worst = self.worst.max(share);
        if !close(analytic, numeric) {
            self.failures.push(format!(
                "{label}: analytic {analytic:e} numeric {numeric:e}"
            ));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Net families covered by the suite.
pub fn families() -> Vec<(&'static str, NetSpec)> {
    let stacked = |units, activation| NetSpec::Stacked {
        units,
        activation,
        dropout_rate: 0.0,
        l2_coeff: 0.0,
    };
    vec![
        ("linear", NetSpec::linear()),
        ("elu", NetSpec::elu()),
        ("regularized", NetSpec::regularized()),
        ("lstm", NetSpec::lstm()),
        (
            "lstm_regularized",
            NetSpec::Lstm {
                hidden_size: 3,
                output_bias: false,
                dropout_rate: 0.2,
                l2_coeff: 1e-2,
            },
        ),
        ("stacked_tanh", stacked(10, Activation::Tanh)),
        ("stacked_sigmoid", stacked(1, Activation::Sigmoid)),
        ("stacked_elu", stacked(10, Activation::Elu)),
        ("stacked_relu", stacked(10, Activation::Relu)),
    ]
}

/// Pre-activations of a net at `x`, for kink avoidance.
fn pre_activations(net: &Net, x: &[f64]) -> Vec<f64> {
    match net {
        Net::Linear(n) => vec![n.weights.iter().zip(x).map(|(w, v)| w * v).sum()],
        Net::Stacked(n) => (0..n.units)
            .map(|u| {
                n.params[u * n.input_dim..(u + 1) * n.input_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn has_kink(net: &Net) -> bool {
    match net {
        Net::Linear(n) => n.activation != Activation::Identity,
        Net::Stacked(n) => matches!(n.activation, Activation::Elu | Activation::Relu),
        _ => false,
    }
}

/// Draws a net of the family with random weights and a covariate row away
/// from activation kinks.
fn draw_net(spec: &NetSpec, rng: &mut ChaCha8Rng) -> (Net, Vec<f64>) {
    loop {
        let dim = rng.random_range(2..=8);
        let mut net = spec.build(dim).expect("valid spec");
        for p in net.params_mut() {
            *p = 0.7 * normal(rng);
        }
        let mut x = vec![1.0];
        x.extend((1..dim).map(|_| normal(rng)));
        let clear = !has_kink(&net)
            || pre_activations(&net, &x)
                .iter()
                .all(|z| z.abs() > KINK_MARGIN);
        if clear {
            return (net, x);
        }
    }
}

/// Output gradient with respect to every parameter, under a fixed dropout
/// mask when the family uses one, plus the L2 penalty gradient.
pub fn check_family(name: &str, spec: &NetSpec, configs: usize, seed: u64) -> CheckSummary {
    let mut summary = CheckSummary::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let (net, x) = draw_net(spec, &mut rng);
        let mask = (net.dropout_rate() > 0.0)
            .then(|| sample_dropout_mask(net.dropout_rate(), x.len() - 1, &mut rng));
        let mut tape = Tape::new();
        net.forward_train(&x, mask.as_deref(), &mut tape).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&tape, 1.0, &mut grad).unwrap();
        let mut l2 = vec![0.0; net.n_params()];
        net.add_l2_grad(&mut l2);
        for j in 0..net.n_params() {
            let eval = |v: f64| {
                let mut n = net.clone();
                n.params_mut()[j] = v;
                n.forward_train(&x, mask.as_deref(), &mut Tape::new())
                    .unwrap()
            };
            let at = net.params()[j];
            summary.record(
                &format!("{name} config {c} param {j}"),
                grad[j],
                central(eval, at),
            );
            let pen = |v: f64| {
                let mut n = net.clone();
                n.params_mut()[j] = v;
                n.l2_penalty()
            };
            summary.record(
                &format!("{name} config {c} l2 param {j}"),
                l2[j],
                central(pen, at),
            );
        }
        summary.configs += 1;
    }
    summary
}

/// Loss families covered by the suite.
pub const LOSSES: [&str; 3] = ["tilted", "censored", "tobit"];

/// Gradient of the summed loss with respect to each prediction (and to
/// `ln sigma` for Tobit) on random batches away from the loss kinks.
pub fn check_loss(name: &str, configs: usize, seed: u64) -> CheckSummary {
    let mut summary = CheckSummary::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let n = rng.random_range(1..=12);
        let theta = QuantileLevel::new(rng.random_range(0.02..0.98)).unwrap();
        let side = if rng.random::<bool>() {
            Side::Left
        } else {
            Side::Right
        };
        let sigma = rng.random_range(0.3..3.0);
        let mut points = Vec::with_capacity(n);
        let mut preds = Vec::with_capacity(n);
        while points.len() < n {
            let tau = normal(&mut rng);
            let y_star = tau + 1.5 * normal(&mut rng);
            let censored = match side {
                Side::Left => y_star <= tau,
                Side::Right => y_star >= tau,
            };
            let y = if censored { tau } else { y_star };
            let q = y + 2.0 * normal(&mut rng);
            if (q - tau).abs() < KINK_MARGIN || (q - y).abs() < KINK_MARGIN {
                continue;
            }
            points.push(CensoredPoint::new(y, tau, censored));
            preds.push(q);
        }
        let left: Vec<CensoredPoint> = points
            .iter()
            .map(|p| {
                // the censored quantile loss is stated for left censoring
                let censored = p.y <= p.tau;
                CensoredPoint::new(p.y.max(p.tau), p.tau, censored)
            })
            .collect();
        // the losses are sums over rows, so each derivative is checked on its own row
        let term = |i: usize, q: f64| -> f64 {
            let t = theta;
            match name {
                "tilted" => tilted_nll(&[points[i].y], &[q], t).unwrap(),
                "censored" => censored_qr_nll(&left[i..=i], &[q], t, true).unwrap(),
                "tobit" => tobit_nll(&points[i..=i], &[q], sigma, side).unwrap(),
                other => panic!("unknown loss {other}"),
            }
        };
        let targets: Vec<f64> = points.iter().map(|p| p.y).collect();
        let grad = match name {
            "tilted" => tilted_nll_grad(&targets, &preds, theta).unwrap(),
            "censored" => censored_qr_nll_grad(&left, &preds, theta).unwrap(),
            _ => tobit_nll_grad(&points, &preds, sigma, side).unwrap(),
        };
        for i in 0..n {
            summary.record(
                &format!("{name} config {c} pred {i}"),
                grad[i],
                central(|v| term(i, v), preds[i]),
            );
        }
        if name == "tobit" {
            let g = tobit_nll_grad_log_sigma(&points, &preds, sigma, side).unwrap();
            let eval = |ls: f64| tobit_nll(&points, &preds, ls.exp(), side).unwrap();
            summary.record(
                &format!("tobit config {c} ln sigma"),
                g,
                central(eval, sigma.ln()),
            );
        }
        summary.configs += 1;
    }
    summary
}
