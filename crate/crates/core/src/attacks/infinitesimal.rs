use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_proof, random_rows, AttackId, SpoofResult};
use crate::error::{Error, Result};
use crate::tinytrain::{interpolate, CostLedger, Dataset, ModelState, StepMetadata};
use crate::verifier::l2;

/// Learning rate logged by the infinitesimal attack.
pub const INFINITESIMAL_LR: f64 = 1e-12;

/// Checkpoint spacing must stay below `delta / SPACING_MARGIN`.
pub const SPACING_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfinitesimalParams {
    pub total_steps: usize,
    pub k: usize,
    /// The verifier's static threshold the spoof must stay under.
    pub delta: f64,
    pub batch_size: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    SPACING_MARGIN
}

impl InfinitesimalParams {
    pub fn new(total_steps: usize, k: usize, delta: f64, batch_size: usize) -> Self {
        Self {
            total_steps,
            k,
            delta,
            batch_size,
            margin: SPACING_MARGIN,
        }
    }
}

/// Smallest proof length (a multiple of `k`) whose uniform checkpoint
/// spacing from `w0` to `w_t` is at most `delta / margin`.
pub fn infinitesimal_min_steps(
    w_t: &ModelState,
    w0: &ModelState,
    k: usize,
    delta: f64,
    margin: f64,
) -> Result<usize> {
    w_t.same_arch(w0)?;
    if !(delta > 0.0 && margin >= 1.0) || k == 0 {
        return Err(Error::Config(
            "need delta > 0, margin >= 1 and k >= 1".into(),
        ));
    }
    let span = l2(w_t.weights(), w0.weights());
    let updates = ((span * margin / delta).ceil() as usize).max(1);
    Ok(updates * k)
}

/// Interpolates `T / k` checkpoints from `w0` to `w_t` and logs a
/// vanishing learning rate with random committed batches, so every replayed
/// update stays put and every logged update is far below `delta`.
pub fn infinitesimal_attack<R: Rng + ?Sized>(
    w_t: &ModelState,
    w0: &ModelState,
    params: &InfinitesimalParams,
    data: &Dataset,
    rng: &mut R,
) -> Result<SpoofResult> {
    let InfinitesimalParams {
        total_steps,
        k,
        delta,
        batch_size,
        margin,
    } = *params;
    let needed = infinitesimal_min_steps(w_t, w0, k, delta, margin)?;
    if total_steps % k != 0 || total_steps < needed {
        return Err(Error::Config(format!(
            "{total_steps} steps cannot keep spacing under delta/{margin} with k = {k}; need at least T = {needed}"
        )));
    }
    let updates = total_steps / k;
    let mut ledger = CostLedger::new();
    let mut checkpoints = Vec::with_capacity(updates + 1);
    checkpoints.push(w0.clone());
    for i in 1..=updates {
        let w = interpolate(w0, w_t, i as f64 / updates as f64, &mut ledger)?;
        checkpoints.push(if i == updates { w_t.clone() } else { w });
    }
    let spe = (data.len() / batch_size.max(1)).max(1);
    let mut batches = Vec::with_capacity(total_steps);
    let mut metadata = Vec::with_capacity(total_steps);
    for t in 0..total_steps {
        batches.push(random_rows(rng, data.len(), batch_size)?);
        metadata.push(StepMetadata::sgd(INFINITESIMAL_LR, batch_size, 0, t as u64));
    }
    let proof = assemble_proof(*w_t.arch(), k, spe, checkpoints, batches, metadata, data)?;
    let spacing = l2(w_t.weights(), w0.weights()) / updates as f64;
    let params = BTreeMap::from([
        ("total_steps".to_string(), total_steps as f64),
        ("k".to_string(), k as f64),
        ("delta".to_string(), delta),
        ("margin".to_string(), margin),
        ("learning_rate".to_string(), INFINITESIMAL_LR),
        ("spacing".to_string(), spacing),
    ]);
    Ok(SpoofResult {
        attack: AttackId::Infinitesimal,
        proof,
        store: data.clone(),
        ledger,
        params,
        residuals: Vec::new(),
        failed_steps: Vec::new(),
        genuine_steps: Vec::new(),
    })
}
