//! Feedforward and Elman networks with flat parameter storage, exact
//! backpropagation, six optimizers and an epoch-logging training loop.

mod network;
mod optim;
mod train;

pub use network::{init_network, Activation, AnnModel, ArchKind, ArchSpec, Features};
pub use optim::{OptimizerKind, OptimizerParams, OptimizerState};
pub use train::{evaluate, train, DataView, EpochLog, EpochRow, HyperParams, LayerSpec};

/// Largest relative error between backprop and central differences
/// (step `h`) over every parameter, using `max(|a|, |b|, 1e-6)` as the scale.
pub fn gradient_check(model: &AnnModel, batch: &[(&Features, &[f64])], h: f64) -> crate::Result<f64> {
    let (_, grads) = model.gradients(batch)?;
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for i in 0..model.params.len() {
        let p = model.params[i];
        probe.params[i] = p + h;
        let (up, _) = probe.gradients(batch)?;
        probe.params[i] = p - h;
        let (down, _) = probe.gradients(batch)?;
        probe.params[i] = p;
        let numeric = (up - down) / (2.0 * h);
        let scale = numeric.abs().max(grads[i].abs()).max(1e-6);
        worst = worst.max((numeric - grads[i]).abs() / scale);
    }
    Ok(worst)
}
