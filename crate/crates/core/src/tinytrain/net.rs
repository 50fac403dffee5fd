//! Forward and backward passes for the dense classifier.

use super::dataset::Batch;
use super::ledger::{CostLedger, OpKind};
use super::model::{Activation, Arch, ModelState};
use crate::error::{Error, Result};

pub(crate) struct Eval {
    pub loss: f64,
    pub weight_grad: Option<Vec<f64>>,
    pub input_grad: Option<Vec<f64>>,
}

fn check_batch(arch: &Arch, features: &[f64], labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let dim = features.len() / labels.len();
    if dim != arch.input_dim {
        return Err(Error::Shape(format!(
            "batch feature dim {dim} does not match architecture input dim {}",
            arch.input_dim
        )));
    }
    if features.len() != dim * labels.len() {
        return Err(Error::Shape(
            "batch features and labels disagree in length".into(),
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= arch.classes) {
        return Err(Error::Shape(format!(
            "label {l} out of range for {} classes",
            arch.classes
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy and, optionally, its gradients with respect to
/// the weights and to the input features.
pub(crate) fn evaluate(
    arch: &Arch,
    w: &[f64],
    features: &[f64],
    labels: &[usize],
    want_weight_grad: bool,
    want_input_grad: bool,
) -> Result<Eval> {
    let dim = arch.input_dim;
    check_batch(arch, features, labels)?;
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let c = arch.classes;
    let h = arch.hidden;

    let mut gw = want_weight_grad.then(|| vec![0.0; w.len()]);
    let mut gx = want_input_grad.then(|| vec![0.0; features.len()]);
    let mut loss = 0.0;

    let mut logits = vec![0.0; c];
    let mut delta_out = vec![0.0; c];
    let mut act = vec![0.0; h];
    let mut delta_hidden = vec![0.0; h];

    for s in 0..n {
        let x = &features[s * dim..(s + 1) * dim];
        let y = labels[s];

        if h == 0 {
            let (wm, b) = w.split_at(c * dim);
            for k in 0..c {
                logits[k] = b[k] + dot(&wm[k * dim..(k + 1) * dim], x);
            }
        } else {
            let (w1, rest) = w.split_at(h * dim);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for j in 0..h {
                let z = b1[j] + dot(&w1[j * dim..(j + 1) * dim], x);
                act[j] = match arch.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => z.max(0.0),
                };
            }
            for k in 0..c {
                logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], &act);
            }
        }

        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[y];

        if gw.is_none() && gx.is_none() {
            continue;
        }
        for k in 0..c {
            let p = (logits[k] - lse).exp();
            delta_out[k] = (p - if k == y { 1.0 } else { 0.0 }) * inv_n;
        }

        if h == 0 {
            let wm = &w[..c * dim];
            if let Some(g) = gw.as_mut() {
                let (gwm, gb) = g.split_at_mut(c * dim);
                for k in 0..c {
                    axpy(delta_out[k], x, &mut gwm[k * dim..(k + 1) * dim]);
                    gb[k] += delta_out[k];
                }
            }
            if let Some(g) = gx.as_mut() {
                let gxs = &mut g[s * dim..(s + 1) * dim];
                for k in 0..c {
                    axpy(delta_out[k], &wm[k * dim..(k + 1) * dim], gxs);
                }
            }
        } else {
            let w1 = &w[..h * dim];
            let w2 = &w[h * dim + h..h * dim + h + c * h];
            for j in 0..h {
                let mut back = 0.0;
                for k in 0..c {
                    back += w2[k * h + j] * delta_out[k];
                }
                let deriv = match arch.activation {
                    Activation::Tanh => 1.0 - act[j] * act[j],
                    Activation::Relu => {
                        if act[j] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                delta_hidden[j] = back * deriv;
            }
            if let Some(g) = gw.as_mut() {
                let (gw1, rest) = g.split_at_mut(h * dim);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                for k in 0..c {
                    axpy(delta_out[k], &act, &mut gw2[k * h..(k + 1) * h]);
                    gb2[k] += delta_out[k];
                }
                for j in 0..h {
                    axpy(delta_hidden[j], x, &mut gw1[j * dim..(j + 1) * dim]);
                    gb1[j] += delta_hidden[j];
                }
            }
            if let Some(g) = gx.as_mut() {
                let gxs = &mut g[s * dim..(s + 1) * dim];
                for j in 0..h {
                    axpy(delta_hidden[j], &w1[j * dim..(j + 1) * dim], gxs);
                }
            }
        }
    }

    Ok(Eval {
        loss: loss * inv_n,
        weight_grad: gw,
        input_grad: gx,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_model_batch(model: &ModelState, batch: &Batch) -> Result<()> {
    batch.check()?;
    if batch.dim != model.arch().input_dim {
        return Err(Error::Shape(format!(
            "batch feature dim {} does not match architecture input dim {}",
            batch.dim,
            model.arch().input_dim
        )));
    }
    Ok(())
}

/// Mean cross-entropy over the batch. Costs 1 FP.
pub fn forward(model: &ModelState, batch: &Batch, ledger: &mut CostLedger) -> Result<f64> {
    check_model_batch(model, batch)?;
    let e = evaluate(
        model.arch(),
        model.weights(),
        &batch.features,
        &batch.labels,
        false,
        false,
    )?;
    ledger.record(OpKind::Forward);
    Ok(e.loss)
}

/// Gradient of the mean loss with respect to the weights. Costs 3 FP
/// (forward plus backward).
pub fn backward(model: &ModelState, batch: &Batch, ledger: &mut CostLedger) -> Result<Vec<f64>> {
    loss_and_grad(model, batch, ledger).map(|(_, g)| g)
}

/// Loss and weight gradient from a single forward/backward pair (3 FP).
pub fn loss_and_grad(
    model: &ModelState,
    batch: &Batch,
    ledger: &mut CostLedger,
) -> Result<(f64, Vec<f64>)> {
    check_model_batch(model, batch)?;
    let e = evaluate(
        model.arch(),
        model.weights(),
        &batch.features,
        &batch.labels,
        true,
        false,
    )?;
    ledger.record(OpKind::Forward);
    ledger.record(OpKind::Backward);
    Ok((e.loss, e.weight_grad.expect("requested")))
}

/// Loss and its gradient with respect to the batch features, row-major like
/// the features themselves. Costs 1 forward plus 1 input-gradient pass.
pub fn input_gradient(
    model: &ModelState,
    batch: &Batch,
    ledger: &mut CostLedger,
) -> Result<(f64, Vec<f64>)> {
    check_model_batch(model, batch)?;
    let e = evaluate(
        model.arch(),
        model.weights(),
        &batch.features,
        &batch.labels,
        false,
        true,
    )?;
    ledger.record(OpKind::Forward);
    ledger.record(OpKind::InputGrad);
    Ok((e.loss, e.input_grad.expect("requested")))
}
