//! Classification and regression losses, the joint objective and the SGD
//! update.
//!
//! Class index 0 is background and 1 is target throughout. Probabilities are
//! clamped at [`PROB_FLOOR`] before taking logarithms.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boxcodec::RegressTarget;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub n_cls: f64,
    pub n_reg: f64,
    pub phi_decay: f64,
    pub lr: f64,
    /// Learning rate after `lr_step_at` iterations.
    pub lr_after: f64,
    pub lr_step_at: usize,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 1.0,
            eta: 1.0,
            n_cls: 64.0,
            n_reg: 1000.0,
            phi_decay: 0.0005,
            lr: 0.001,
            lr_after: 0.0001,
            lr_step_at: 10_000,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

const KEYS: [&str; 11] = [
    "lambda1",
    "lambda2",
    "eta",
    "n_cls",
    "n_reg",
    "phi_decay",
    "lr",
    "lr_after",
    "lr_step_at",
    "momentum",
    "batch_size",
];

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("eta", self.eta),
            ("phi_decay", self.phi_decay),
            ("momentum", self.momentum),
        ];
        for (k, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be a finite value >= 0, got {v}")));
            }
        }
        for (k, v) in [
            ("n_cls", self.n_cls),
            ("n_reg", self.n_reg),
            ("lr", self.lr),
            ("lr_after", self.lr_after),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        if iteration < self.lr_step_at {
            self.lr
        } else {
            self.lr_after
        }
    }

    /// Sets one field by name from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "n_cls" => self.n_cls = num(key, value)?,
            "n_reg" => self.n_reg = num(key, value)?,
            "phi_decay" => self.phi_decay = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_after" => self.lr_after = num(key, value)?,
            "lr_step_at" => self.lr_step_at = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown hyper-parameter {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut hp = HyperParams::default();
        hp.apply_config_text(text)?;
        Ok(hp)
    }

    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let v = match k {
                "lambda1" => self.lambda1.to_string(),
                "lambda2" => self.lambda2.to_string(),
                "eta" => self.eta.to_string(),
                "n_cls" => self.n_cls.to_string(),
                "n_reg" => self.n_reg.to_string(),
                "phi_decay" => self.phi_decay.to_string(),
                "lr" => self.lr.to_string(),
                "lr_after" => self.lr_after.to_string(),
                "lr_step_at" => self.lr_step_at.to_string(),
                "momentum" => self.momentum.to_string(),
                _ => self.batch_size.to_string(),
            };
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Cross-entropy `-sum p_hat_c ln p_c` with clamped probabilities.
pub fn cls_loss(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p.len() != p_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} labels",
            p.len(),
            p_hat.len()
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::NotNormalized(total));
    }
    Ok(p.iter()
        .zip(p_hat)
        .map(|(&pc, &y)| if y == 0.0 { 0.0 } else { -y * pc.max(PROB_FLOOR).ln() })
        .sum())
}

/// Softmax cross-entropy on logits for a one-hot class: returns the loss and
/// its gradient with respect to the logits.
pub fn cls_loss_logits(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let p = crate::pooling::softmax_scores(logits);
    let loss = -p[class].max(PROB_FLOOR).ln();
    let mut grad = p;
    // below the clamp the loss is flat in p_class
    if grad[class] > PROB_FLOOR {
        grad[class] -= 1.0;
    } else {
        grad.iter_mut().for_each(|g| *g = 0.0);
    }
    (loss, grad)
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `sum_d smooth_l1(t_d - t_hat_d)` over the 8 offsets.
pub fn reg_loss(t: &RegressTarget, t_hat: &RegressTarget) -> f64 {
    t.to_array()
        .iter()
        .zip(t_hat.to_array())
        .map(|(a, b)| smooth_l1(a - b))
        .sum()
}

pub fn reg_loss_grad(t: &RegressTarget, t_hat: &RegressTarget) -> [f64; 8] {
    let a = t.to_array();
    let b = t_hat.to_array();
    std::array::from_fn(|d| smooth_l1_grad(a[d] - b[d]))
}

/// One head prediction: class probabilities and regressed offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub probs: [f64; 2],
    pub t: RegressTarget,
}

/// Supervision for one sampled anchor or RoI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadLabel {
    /// 0 background, 1 target.
    pub class: usize,
    /// Regression indicator.
    pub phi: f64,
    pub t_hat: RegressTarget,
}

impl HeadLabel {
    pub fn one_hot(&self) -> [f64; 2] {
        let mut p = [0.0; 2];
        p[self.class] = 1.0;
        p
    }
}

fn sums(preds: &[HeadOutput], labels: &[HeadLabel]) -> Result<(f64, f64)> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cls = 0.0;
    let mut reg = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        cls += cls_loss(&p.probs, &l.one_hot())?;
        if l.phi != 0.0 {
            reg += l.phi * reg_loss(&p.t, &l.t_hat);
        }
    }
    Ok((cls, reg))
}

/// Proposal-stage loss of one image:
/// `(1/N_cls) sum L_cls + lambda1 (1/N_reg) sum phi L_reg`.
pub fn rrpn_loss(preds: &[HeadOutput], labels: &[HeadLabel], hp: &HyperParams) -> Result<f64> {
    let (cls, reg) = sums(preds, labels)?;
    Ok(cls / hp.n_cls + hp.lambda1 * reg / hp.n_reg)
}

/// Detection-stage loss of one image: `sum L_cls + lambda2 sum phi L_reg`.
pub fn rdn_loss(preds: &[HeadOutput], labels: &[HeadLabel], hp: &HyperParams) -> Result<f64> {
    let (cls, reg) = sums(preds, labels)?;
    Ok(cls + hp.lambda2 * reg)
}

/// `sum L1 + eta sum L2 + phi ||w||^2`.
pub fn joint_loss(l1_terms: &[f64], l2_terms: &[f64], w: &[f64], hp: &HyperParams) -> f64 {
    let l1: f64 = l1_terms.iter().sum();
    let l2: f64 = l2_terms.iter().sum();
    l1 + hp.eta * l2 + hp.phi_decay * w.iter().map(|v| v * v).sum::<f64>()
}

/// Momentum update with weight decay folded into the velocity:
/// `v = m v + g + 2 phi w`, `w -= lr v`. `data_grad` excludes the decay term.
pub fn sgd_step(w: &mut [f64], velocity: &mut [f64], data_grad: &[f64], lr: f64, hp: &HyperParams) -> Result<()> {
    if w.len() != velocity.len() || w.len() != data_grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {}, velocity {}, gradient {}",
            w.len(),
            velocity.len(),
            data_grad.len()
        )));
    }
    for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(data_grad) {
        *vi = hp.momentum * *vi + gi + 2.0 * hp.phi_decay * *wi;
        *wi -= lr * *vi;
    }
    Ok(())
}
