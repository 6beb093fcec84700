use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Activation, AnnModel, ArchKind, ArchSpec, Features};
use super::optim::{OptimizerKind, OptimizerParams, OptimizerState};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub features: usize,
    pub activation: Activation,
}

fn default_epochs() -> usize {
    10
}

fn default_batch() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub optimizer_params: BTreeMap<String, f64>,
    /// Hidden layers in order; the readout layer is implicit.
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Probability of skipping each training atom in an epoch.
    #[serde(default)]
    pub dropout: f64,
}

impl HyperParams {
    pub fn optimizer_params(&self) -> Result<OptimizerParams> {
        OptimizerParams::with_overrides(self.optimizer, self.learning_rate, &self.optimizer_params)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer_params()?;
        if self.layers.iter().any(|l| l.features == 0) {
            return Err(Error::invalid("layers", "layer with 0 features"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn arch(&self, kind: ArchKind, input_dim: usize, output_dim: usize) -> Result<ArchSpec> {
        let arch = ArchSpec {
            kind,
            layer_widths: self.layers.iter().map(|l| l.features).collect(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            input_dim,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Borrowed train/test split plus relabeled copies of the test labels.
#[derive(Clone, Copy, Debug)]
pub struct DataView<'a> {
    pub train_x: &'a [Features],
    pub train_y: &'a [Vec<f64>],
    pub test_x: &'a [Features],
    pub test_y: &'a [Vec<f64>],
    /// Each entry labels `test_x` afresh.
    pub null_y: &'a [Vec<Vec<f64>>],
}

impl DataView<'_> {
    fn validate(&self) -> Result<()> {
        if self.train_x.is_empty() {
            return Err(Error::Empty("training partition".into()));
        }
        if self.test_x.is_empty() {
            return Err(Error::Empty("test partition".into()));
        }
        let pairs = [
            (self.train_x.len(), self.train_y.len()),
            (self.test_x.len(), self.test_y.len()),
        ];
        let nulls = self.null_y.iter().map(|n| (self.test_x.len(), n.len()));
        for (expected, actual) in pairs.into_iter().chain(nulls) {
            if expected != actual {
                return Err(Error::LengthMismatch { expected, actual });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// `None` when no null sets were supplied.
    pub null_loss_mean: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub rows: Vec<EpochRow>,
}

impl EpochLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    /// Lowest test loss over all epochs; non-finite if training diverged.
    pub fn best_test_loss(&self) -> f64 {
        let mut best = f64::INFINITY;
        for r in &self.rows {
            if !r.test_loss.is_finite() {
                return f64::INFINITY;
            }
            best = best.min(r.test_loss);
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_loss,null_loss_mean\n");
        for r in &self.rows {
            let null = r.null_loss_mean.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.test_loss, null).unwrap();
        }
        s
    }
}

/// Mean of `‖ŷ − y‖² / output_dim` over the set; never touches parameters.
pub fn evaluate(model: &AnnModel, xs: &[Features], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let out = model.arch().output_dim;
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        if y.len() != out {
            return Err(Error::LengthMismatch {
                expected: out,
                actual: y.len(),
            });
        }
        let yhat = model.forward(x)?;
        total += yhat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out as f64;
    }
    Ok(total / xs.len() as f64)
}

/// Minibatch training for `epochs` epochs. Updates use the training loss
/// only; test and null losses are recorded after every epoch.
pub fn train(
    model: &mut AnnModel,
    data: &DataView<'_>,
    hp: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<EpochLog> {
    data.validate()?;
    hp.validate()?;
    let mut opt = OptimizerState::new(hp.optimizer_params()?, model.num_params());
    let mut log = EpochLog::default();
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    for epoch in 1..=epochs {
        let mut r = rng::rng_for(seed, epoch as u64);
        order.shuffle(&mut r);
        let kept: Vec<usize> = if hp.dropout > 0.0 {
            order.iter().copied().filter(|_| r.gen::<f64>() >= hp.dropout).collect()
        } else {
            order.clone()
        };
        for chunk in kept.chunks(hp.batch_size) {
            let batch: Vec<(&Features, &[f64])> = chunk
                .iter()
                .map(|&i| (&data.train_x[i], data.train_y[i].as_slice()))
                .collect();
            let (_, grads) = model.gradients(&batch)?;
            opt.step(&mut model.params, &grads)?;
        }
        let null_loss_mean = if data.null_y.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for ys in data.null_y {
                sum += evaluate(model, data.test_x, ys)?;
            }
            Some(sum / data.null_y.len() as f64)
        };
        log.rows.push(EpochRow {
            epoch,
            train_loss: evaluate(model, data.train_x, data.train_y)?,
            test_loss: evaluate(model, data.test_x, data.test_y)?,
            null_loss_mean,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_network;

    fn hp(kind: OptimizerKind, lr: f64, layers: Vec<LayerSpec>) -> HyperParams {
        HyperParams {
            learning_rate: lr,
            optimizer: kind,
            optimizer_params: BTreeMap::new(),
            layers,
            epochs: 10,
            batch_size: 16,
            dropout: 0.0,
        }
    }

    fn linear_data(n: usize, seed: u64) -> (Vec<Features>, Vec<Vec<f64>>) {
        let mut r = rng::rng(seed);
        let xs: Vec<Features> = (0..n)
            .map(|_| Features::Vector((0..3).map(|_| r.gen_range(-1.0..1.0)).collect()))
            .collect();
        let ys = xs
            .iter()
            .map(|x| match x {
                Features::Vector(v) => vec![0.5 * v[0] - 1.5 * v[1] + 2.0 * v[2] + 0.25],
                _ => unreachable!(),
            })
            .collect();
        (xs, ys)
    }

    #[test]
    fn linear_sgd_loss_never_increases() {
        let (xs, ys) = linear_data(64, 1);
        let (tx, ty) = linear_data(16, 2);
        let h = hp(OptimizerKind::Sgd, 1e-3, vec![]);
        let mut m = init_network(&h.arch(ArchKind::Ffnn, 3, 1).unwrap(), 5).unwrap();
        let view = DataView {
            train_x: &xs,
            train_y: &ys,
            test_x: &tx,
            test_y: &ty,
            null_y: &[],
        };
        let log = train(&mut m, &view, &h, 50, 3).unwrap();
        assert_eq!(log.len(), 50);
        for w in log.rows.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "{w:?}");
        }
        assert!(log.to_csv().lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (xs, ys) = linear_data(80, 1);
        let (tx, ty) = linear_data(20, 2);
        let nulls: Vec<Vec<Vec<f64>>> = vec![ty.iter().rev().cloned().collect()];
        let layers = vec![LayerSpec {
            features: 8,
            activation: Activation::Tanh,
        }];
        let h = hp(OptimizerKind::Adam, 1e-2, layers);
        let arch = h.arch(ArchKind::Ffnn, 3, 1).unwrap();
        let view = DataView {
            train_x: &xs,
            train_y: &ys,
            test_x: &tx,
            test_y: &ty,
            null_y: &nulls,
        };
        let mut a = init_network(&arch, 5).unwrap();
        let mut b = a.clone();
        let la = train(&mut a, &view, &h, 60, 9).unwrap();
        let lb = train(&mut b, &view, &h, 60, 9).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        let (first, last) = (la.rows[0], *la.last().unwrap());
        assert!(last.test_loss < 0.1 * first.test_loss);
        assert!(last.null_loss_mean.unwrap() > last.test_loss);
    }

    #[test]
    fn evaluate_is_pure_and_matches_variance() {
        let h = hp(OptimizerKind::Sgd, 0.1, vec![]);
        let mut m = init_network(&h.arch(ArchKind::Ffnn, 2, 1).unwrap(), 1).unwrap();
        // constant predictor 1.0
        m.params = vec![0.0, 0.0, 1.0];
        let xs = vec![Features::Vector(vec![0.3, 0.1]); 4];
        let ys = vec![vec![0.0], vec![2.0], vec![0.0], vec![2.0]];
        let before = m.params.clone();
        let l1 = evaluate(&m, &xs, &ys).unwrap();
        assert_eq!(l1, 1.0);
        assert_eq!(evaluate(&m, &xs, &ys).unwrap().to_bits(), l1.to_bits());
        assert_eq!(before, m.params);
        assert!(evaluate(&m, &[], &[]).is_err());
    }

    #[test]
    fn empty_partitions_rejected() {
        let h = hp(OptimizerKind::Sgd, 0.1, vec![]);
        let mut m = init_network(&h.arch(ArchKind::Ffnn, 3, 1).unwrap(), 1).unwrap();
        let (xs, ys) = linear_data(4, 1);
        let view = DataView {
            train_x: &xs,
            train_y: &ys,
            test_x: &[],
            test_y: &[],
            null_y: &[],
        };
        assert!(train(&mut m, &view, &h, 1, 0).is_err());
    }

    #[test]
    fn hyperparams_json() {
        let text = r#"{"learning_rate":0.000376,"optimizer":"adam",
            "optimizer_params":{"beta1":0.9,"beta2":0.996},
            "layers":[{"features":8,"activation":"softplus"}]}"#;
        let h: HyperParams = serde_json::from_str(text).unwrap();
        h.validate().unwrap();
        assert_eq!((h.epochs, h.batch_size), (10, 16));
        let back: HyperParams = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<HyperParams>(&text.replace("adam", "nadam")).is_err());
    }
}
