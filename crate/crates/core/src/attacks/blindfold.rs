use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_proof, random_rows, AttackId, SpoofResult};
use crate::error::{Error, Result};
use crate::tinytrain::{
    interpolate, update_k, CostLedger, Dataset, ModelState, NoiseModel, StepMetadata,
};
use crate::verifier::l2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlindfoldParams {
    /// Genuine updates planted per epoch.
    pub q: usize,
    pub k: usize,
    /// Checkpointed updates per epoch.
    pub s: usize,
    pub epochs: usize,
    pub eta_large: f64,
    pub batch_size: usize,
}

impl BlindfoldParams {
    fn validate(&self) -> Result<()> {
        if self.q == 0 || self.q > self.s {
            return Err(Error::Config(format!(
                "need 1 <= Q <= s, got Q = {} and s = {}",
                self.q, self.s
            )));
        }
        if self.q == self.s && self.epochs > 0 {
            return Err(Error::Config(
                "the final update must stay interpolated, so Q < s".into(),
            ));
        }
        if self.k == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "k, epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.eta_large > 0.0 && self.eta_large.is_finite()) {
            return Err(Error::Config("eta_large must be positive".into()));
        }
        Ok(())
    }

    /// `3kQ/s + 1`, the expected FP cost per checkpointed update.
    pub fn expected_cost_per_update(&self) -> f64 {
        3.0 * (self.k * self.q) as f64 / self.s as f64 + 1.0
    }
}

/// A planted update aims for this multiple of the interpolation step it replaces.
const PLANT_MARGIN: f64 = 2.0;
const MAX_ETA_RETRIES: usize = 3;
/// Larger jumps tend to land in regions where replay is chaotic.
const MAX_ETA_GROWTH: f64 = 4.0;

/// Plants `Q` genuine large-step SGD updates per epoch and fills every
/// other checkpoint by interpolating toward `w_t`. Top-Q verification only
/// ever looks at the planted updates.
///
/// A planted update that comes out shorter than `PLANT_MARGIN` times the
/// local interpolation step is recomputed with a proportionally larger
/// learning rate, grown by at most `MAX_ETA_GROWTH` per attempt and at most
/// `MAX_ETA_RETRIES` times; every attempt is charged.
pub fn blindfold_topq_attack<R: Rng + ?Sized>(
    w_t: &ModelState,
    w0: &ModelState,
    params: &BlindfoldParams,
    data: &Dataset,
    rng: &mut R,
) -> Result<SpoofResult> {
    w_t.same_arch(w0)?;
    params.validate()?;
    let BlindfoldParams {
        q,
        k,
        s,
        epochs,
        eta_large,
        batch_size,
    } = *params;
    let updates = s * epochs;
    let mut planted = BTreeSet::new();
    for e in 0..epochs {
        // planting late in the final epoch leaves too few updates to absorb
        // the detour, and the very last update has to land on w_t
        let slots = if e + 1 == epochs {
            (s / 2).max(q).min(s - 1)
        } else {
            s
        };
        planted.extend(index::sample(rng, slots, q).into_iter().map(|j| e * s + j));
    }

    let meta = StepMetadata::sgd(eta_large, batch_size, 0, 0);
    let mut ledger = CostLedger::new();
    let mut checkpoints = Vec::with_capacity(updates + 1);
    let mut batches = Vec::with_capacity(updates * k);
    let mut metadata = Vec::with_capacity(updates * k);
    let mut norms = Vec::with_capacity(updates);
    let mut eta_retries = 0usize;
    let mut current = w0.clone();
    checkpoints.push(current.clone());
    for i in 0..updates {
        let rows: Vec<Vec<usize>> = (0..k)
            .map(|_| random_rows(rng, data.len(), batch_size))
            .collect::<Result<_>>()?;
        let mut step_meta = meta;
        let next = if planted.contains(&i) {
            let b = rows
                .iter()
                .map(|r| data.batch(r))
                .collect::<Result<Vec<_>>>()?;
            let target = PLANT_MARGIN * l2(w_t.weights(), current.weights()) / (updates - i) as f64;
            let mut w = update_k(
                &current,
                &b,
                &step_meta,
                k,
                &NoiseModel::none(),
                rng,
                &mut ledger,
            )?;
            for _ in 0..MAX_ETA_RETRIES {
                let n = l2(w.weights(), current.weights());
                if n >= target || n == 0.0 {
                    break;
                }
                step_meta.learning_rate *= (PLANT_MARGIN * target / n).min(MAX_ETA_GROWTH);
                eta_retries += 1;
                w = update_k(
                    &current,
                    &b,
                    &step_meta,
                    k,
                    &NoiseModel::none(),
                    rng,
                    &mut ledger,
                )?;
            }
            w
        } else {
            let remaining = updates - i;
            let w = interpolate(&current, w_t, 1.0 / remaining as f64, &mut ledger)?;
            if remaining == 1 {
                w_t.clone()
            } else {
                w
            }
        };
        norms.push(l2(next.weights(), current.weights()));
        for (j, r) in rows.into_iter().enumerate() {
            batches.push(r);
            metadata.push(StepMetadata {
                step_index: (i * k + j) as u64,
                ..step_meta
            });
        }
        checkpoints.push(next.clone());
        current = next;
    }

    for e in 0..epochs {
        let (mut min_planted, mut max_interp) = (f64::INFINITY, 0.0f64);
        for (i, &n) in norms.iter().enumerate().skip(e * s).take(s) {
            if planted.contains(&i) {
                min_planted = min_planted.min(n);
            } else {
                max_interp = max_interp.max(n);
            }
        }
        if min_planted <= max_interp {
            return Err(Error::AttackConstruction(format!(
                "epoch {e}: smallest planted update {min_planted:e} does not exceed largest interpolated update {max_interp:e}; raise eta_large"
            )));
        }
    }

    let proof = assemble_proof(*w_t.arch(), k, s * k, checkpoints, batches, metadata, data)?;
    let p = BTreeMap::from([
        ("q".to_string(), q as f64),
        ("k".to_string(), k as f64),
        ("s".to_string(), s as f64),
        ("epochs".to_string(), epochs as f64),
        ("eta_large".to_string(), eta_large),
        (
            "expected_cost_per_update".to_string(),
            params.expected_cost_per_update(),
        ),
        ("span".to_string(), l2(w_t.weights(), w0.weights())),
        ("eta_retries".to_string(), eta_retries as f64),
    ]);
    Ok(SpoofResult {
        attack: AttackId::BlindfoldTopq,
        proof,
        store: data.clone(),
        ledger,
        params: p,
        residuals: Vec::new(),
        failed_steps: Vec::new(),
        genuine_steps: planted.iter().map(|i| i * k).collect(),
    })
}
