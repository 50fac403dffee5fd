use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_proof, mixed_input_grad, random_rows, AttackId, SpoofResult};
use crate::error::{Error, Result};
use crate::tinytrain::{
    interpolate, loss_and_grad, sgd_step, Batch, CostLedger, Dataset, ModelState, NoiseModel,
    StepMetadata,
};
use crate::verifier::l2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpParams {
    pub total_steps: usize,
    pub k: usize,
    pub delta: f64,
    pub n_iter: usize,
    pub batch_size: usize,
    /// Learning rate logged in the proof and used for every replayed step.
    pub lr: f64,
    /// Step size of the descent on synthetic inputs.
    pub input_lr: f64,
}

/// The `(43 n + 1) k` FP per update charged to this attack when the
/// second-order pass is costed at 40 FP.
pub fn second_order_convention_cost(n_iter: usize, k: usize) -> f64 {
    (43 * n_iter + 1) as f64 * k as f64
}

/// `d/dX 1/2 ||grad_W L(W, X)||^2`. Costs 11 FP: one weight gradient and
/// one finite-difference mixed derivative.
fn gradient_norm_input_grad(
    model: &ModelState,
    batch: &Batch,
    ledger: &mut CostLedger,
) -> Result<(f64, Vec<f64>)> {
    let (_, v) = loss_and_grad(model, batch, ledger)?;
    let objective = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
    let g = mixed_input_grad(
        model.arch(),
        model.weights(),
        &batch.features,
        &batch.labels,
        &v,
        ledger,
    )?;
    Ok((objective, g))
}

/// Interpolated checkpoints whose `k` connecting steps use synthetic inputs
/// optimised to have near-zero weight gradient, so that each replay stays
/// close to its starting checkpoint.
pub fn interp_perturb_attack<R: Rng + ?Sized>(
    w_t: &ModelState,
    w0: &ModelState,
    params: &InterpParams,
    data: &Dataset,
    rng: &mut R,
) -> Result<SpoofResult> {
    w_t.same_arch(w0)?;
    let InterpParams {
        total_steps,
        k,
        delta,
        n_iter,
        batch_size,
        lr,
        input_lr,
    } = *params;
    if k == 0 || total_steps == 0 || total_steps % k != 0 {
        return Err(Error::Config(format!(
            "T = {total_steps} must be a positive multiple of k = {k}"
        )));
    }
    if !(delta > 0.0 && input_lr >= 0.0) {
        return Err(Error::Config(
            "delta must be positive and input_lr nonnegative".into(),
        ));
    }
    let updates = total_steps / k;
    let meta = StepMetadata::sgd(lr, batch_size, 0, 0);
    meta.validate()?;
    let mut store = Dataset::new(data.dim, data.classes, Vec::new(), Vec::new())?;
    let mut ledger = CostLedger::new();
    let mut checkpoints = vec![w0.clone()];
    let mut batches = Vec::with_capacity(total_steps);
    let mut metadata = Vec::with_capacity(total_steps);
    let mut residuals = Vec::with_capacity(updates);
    let mut failed = Vec::new();
    let mut no_noise_rng = ChaCha8Rng::seed_from_u64(0);

    for i in 0..updates {
        let target = interpolate(w0, w_t, (i + 1) as f64 / updates as f64, &mut ledger)?;
        let target = if i + 1 == updates {
            w_t.clone()
        } else {
            target
        };
        let mut w = checkpoints[i].clone();
        for j in 0..k {
            let seed_rows = random_rows(rng, data.len(), batch_size)?;
            let mut batch = data.batch(&seed_rows)?;
            for _ in 0..n_iter {
                let (_, g) = gradient_norm_input_grad(&w, &batch, &mut ledger)?;
                for (x, gx) in batch.features.iter_mut().zip(&g) {
                    *x -= input_lr * gx;
                }
            }
            if batch.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "synthetic inputs diverged at update {i}"
                )));
            }
            let first = store.append(&batch.features, &batch.labels)?;
            batch.indices = (first..first + batch_size).collect();
            sgd_step(
                &mut w,
                &batch,
                &meta,
                &NoiseModel::none(),
                &mut no_noise_rng,
                &mut ledger,
            )?;
            batches.push(batch.indices);
            metadata.push(StepMetadata {
                step_index: (i * k + j) as u64,
                ..meta
            });
        }
        let r = l2(w.weights(), target.weights());
        if r >= delta {
            failed.push(i * k);
        }
        residuals.push(r);
        checkpoints.push(target);
    }

    let spe = (data.len() / batch_size).max(1);
    let proof = assemble_proof(*w_t.arch(), k, spe, checkpoints, batches, metadata, &store)?;
    let params = BTreeMap::from([
        ("total_steps".to_string(), total_steps as f64),
        ("k".to_string(), k as f64),
        ("delta".to_string(), delta),
        ("n_iter".to_string(), n_iter as f64),
        ("lr".to_string(), lr),
        ("input_lr".to_string(), input_lr),
        (
            "second_order_convention_cost_per_update".to_string(),
            second_order_convention_cost(n_iter, k),
        ),
    ]);
    Ok(SpoofResult {
        attack: AttackId::InterpPerturb,
        proof,
        store,
        ledger,
        params,
        residuals,
        failed_steps: failed,
        genuine_steps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinytrain::{gen_dataset, init_model, Activation, Arch, DatasetSpec};

    #[test]
    fn convention_formula() {
        assert_eq!(second_order_convention_cost(10, 10), 4310.0);
    }

    #[test]
    fn measured_cost_and_infeasible_delta() {
        let data = gen_dataset(5, &DatasetSpec::new(2, 20, 3)).unwrap();
        let arch = Arch::new(3, 4, 2, Activation::Tanh);
        let w0 = init_model(arch, 1, 1.0).unwrap();
        let wt = init_model(arch, 2, 1.0).unwrap();
        let p = InterpParams {
            total_steps: 20,
            k: 10,
            delta: 1e-9,
            n_iter: 10,
            batch_size: 4,
            lr: 0.1,
            input_lr: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = interp_perturb_attack(&wt, &w0, &p, &data, &mut rng).unwrap();
        assert!(s.proof.final_state().bit_eq(&wt));
        // per update: one interpolation, then per step 10 iterations at 11 FP and one SGD step
        assert_eq!(s.cost_per_update(), 1.0 + 10.0 * (10.0 * 11.0 + 3.0));
        assert_eq!(s.failed_steps, vec![0, 10]);
        assert_eq!(s.store.len(), 20 * 4);
    }

    #[test]
    fn finite_difference_matches_brute_force() {
        let data = gen_dataset(5, &DatasetSpec::new(2, 6, 3)).unwrap();
        let arch = Arch::new(3, 3, 2, Activation::Tanh);
        let w = init_model(arch, 3, 1.0).unwrap();
        let batch = data.batch(&[0, 1, 2]).unwrap();
        let mut l = CostLedger::new();
        let (_, g) = gradient_norm_input_grad(&w, &batch, &mut l).unwrap();
        assert_eq!(l.fp_units(), 11.0);
        let obj = |b: &Batch| {
            let (_, v) = loss_and_grad(&w, b, &mut CostLedger::new()).unwrap();
            0.5 * v.iter().map(|x| x * x).sum::<f64>()
        };
        for (i, &gi) in g.iter().enumerate() {
            let h = 1e-5;
            let mut p = batch.clone();
            p.features[i] += h;
            let mut m = batch.clone();
            m.features[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * h);
            assert!(
                (fd - gi).abs() < 1e-5 * (1.0 + fd.abs()),
                "{i}: {fd} vs {gi}"
            );
        }
    }
}
