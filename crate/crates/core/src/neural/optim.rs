use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdaGrad,
    AdaDelta,
    AdaMax,
    RmsProp,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::AdaGrad,
        OptimizerKind::AdaDelta,
        OptimizerKind::AdaMax,
        OptimizerKind::RmsProp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdaGrad => "adagrad",
            OptimizerKind::AdaDelta => "adadelta",
            OptimizerKind::AdaMax => "adamax",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }

    /// Keys accepted in `HyperParams::optimizer_params` for this rule.
    pub fn param_keys(self) -> &'static [&'static str] {
        match self {
            OptimizerKind::Sgd => &[],
            OptimizerKind::Adam | OptimizerKind::AdaMax => &["beta1", "beta2", "epsilon"],
            OptimizerKind::AdaGrad => &["epsilon"],
            OptimizerKind::AdaDelta | OptimizerKind::RmsProp => &["rho", "epsilon"],
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("optimizer", format!("unknown optimizer {s:?}")))
    }
}

/// Resolved constants for one update rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl OptimizerParams {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        let (rho, epsilon) = match kind {
            OptimizerKind::AdaDelta => (0.95, 1e-6),
            _ => (0.9, 1e-8),
        };
        OptimizerParams {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            rho,
            epsilon,
        }
    }

    /// Defaults overridden by `overrides`; keys the rule does not use are
    /// rejected.
    pub fn with_overrides(
        kind: OptimizerKind,
        lr: f64,
        overrides: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid("learning_rate", format!("{lr} is not positive")));
        }
        let mut p = Self::new(kind, lr);
        for (key, &value) in overrides {
            if !kind.param_keys().contains(&key.as_str()) {
                return Err(Error::invalid(
                    "optimizer_params",
                    format!("{key:?} is not a parameter of {kind}"),
                ));
            }
            let ok = match key.as_str() {
                "epsilon" => value > 0.0,
                _ => (0.0..1.0).contains(&value),
            };
            if !ok || !value.is_finite() {
                return Err(Error::invalid("optimizer_params", format!("{key} = {value}")));
            }
            match key.as_str() {
                "beta1" => p.beta1 = value,
                "beta2" => p.beta2 = value,
                "rho" => p.rho = value,
                _ => p.epsilon = value,
            }
        }
        Ok(p)
    }
}

/// Per-parameter moment buffers and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub params: OptimizerParams,
    pub t: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: OptimizerParams, n: usize) -> Self {
        OptimizerState {
            params,
            t: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grads: &[f64]) -> Result<()> {
        if theta.len() != self.first.len() || grads.len() != theta.len() {
            return Err(Error::LengthMismatch {
                expected: self.first.len(),
                actual: grads.len().min(theta.len()),
            });
        }
        self.t += 1;
        let OptimizerParams {
            kind,
            lr,
            beta1,
            beta2,
            rho,
            epsilon: eps,
        } = self.params;
        let t = self.t as i32;
        let it = theta.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut()));
        match kind {
            OptimizerKind::Sgd => {
                for ((p, g), _) in it {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for ((p, &g), (m, v)) in it {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            OptimizerKind::AdaGrad => {
                for ((p, &g), (_, acc)) in it {
                    *acc += g * g;
                    *p -= lr * g / (acc.sqrt() + eps);
                }
            }
            OptimizerKind::AdaDelta => {
                // first: running E[Δ²], second: running E[g²]
                for ((p, &g), (edx, eg)) in it {
                    *eg = rho * *eg + (1.0 - rho) * g * g;
                    let dx = -((*edx + eps).sqrt() / (*eg + eps).sqrt()) * g;
                    *edx = rho * *edx + (1.0 - rho) * dx * dx;
                    *p += lr * dx;
                }
            }
            OptimizerKind::AdaMax => {
                let c1 = 1.0 - beta1.powi(t);
                for ((p, &g), (m, u)) in it {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *u = (beta2 * *u).max(g.abs());
                    *p -= (lr / c1) * *m / (*u + eps);
                }
            }
            OptimizerKind::RmsProp => {
                for ((p, &g), (_, v)) in it {
                    *v = rho * *v + (1.0 - rho) * g * g;
                    *p -= lr * g / (v.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
