//! Spoofing attacks and reconstruction probes.
//!
//! An adversary holds only the final weights `W_T` and tries to produce a
//! proof ending there that a verifier accepts, more cheaply than training.
//! Each attack returns its proof together with the data store a verifier
//! must query and a measured cost ledger.

mod blindfold;
mod infinitesimal;
mod interp;
mod probes;
mod rna;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use blindfold::{blindfold_topq_attack, BlindfoldParams};
pub use infinitesimal::{
    infinitesimal_attack, infinitesimal_min_steps, InfinitesimalParams, INFINITESIMAL_LR,
    SPACING_MARGIN,
};
pub use interp::{interp_perturb_attack, second_order_convention_cost, InterpParams};
pub use probes::{
    data_ordering_probe, min_max_normalize, synthesis_probe, NetSynthesis, ProbeId, ProbeResult,
    QuadraticToy, SynthesisObjective, SynthesisParams,
};
pub use rna::{least_squares, rna_attack, RnaParams, RnaResult};

use crate::error::{Error, Result};
use crate::proofchain::{hash_rows, Proof, ProofRecord};
use crate::tinytrain::{evaluate, Arch, CostLedger, Dataset, ModelState, OpKind, StepMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackId {
    Infinitesimal,
    BlindfoldTopq,
    InterpPerturb,
    Rna,
}

impl AttackId {
    pub fn name(self) -> &'static str {
        match self {
            AttackId::Infinitesimal => "infinitesimal",
            AttackId::BlindfoldTopq => "blindfold_topq",
            AttackId::InterpPerturb => "interp_perturb",
            AttackId::Rna => "rna",
        }
    }
}

/// A forged proof ending exactly at the victim's weights.
#[derive(Debug, Clone)]
pub struct SpoofResult {
    pub attack: AttackId,
    pub proof: Proof,
    /// Rows the adversary serves when the verifier asks for data.
    pub store: Dataset,
    pub ledger: CostLedger,
    pub params: BTreeMap<String, f64>,
    /// Per-checkpoint construction residuals, when the attack has any.
    pub residuals: Vec<f64>,
    /// Checkpoint steps the attack itself knows it failed to disguise.
    pub failed_steps: Vec<usize>,
    /// Checkpoint steps whose update is a genuine SGD update.
    pub genuine_steps: Vec<usize>,
}

impl SpoofResult {
    /// Measured FP units per checkpointed update.
    pub fn cost_per_update(&self) -> f64 {
        self.ledger.fp_units() / (self.proof.total_steps() / self.proof.k()) as f64
    }
}

/// `n` distinct random row indices.
pub(crate) fn random_rows<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    n: usize,
) -> Result<Vec<usize>> {
    if n == 0 || n > rows {
        return Err(Error::Config(format!(
            "cannot draw {n} distinct rows from {rows}"
        )));
    }
    Ok(index::sample(rng, rows, n).into_vec())
}

/// Turns per-step batches and checkpoints into a proof, hashing each batch
/// against `store` exactly as an honest prover would.
pub(crate) fn assemble_proof(
    arch: Arch,
    k: usize,
    steps_per_epoch: usize,
    checkpoints: Vec<ModelState>,
    batches: Vec<Vec<usize>>,
    metadata: Vec<StepMetadata>,
    store: &Dataset,
) -> Result<Proof> {
    let total = batches.len();
    if metadata.len() != total || checkpoints.len() * k != total + k {
        return Err(Error::AttackConstruction(format!(
            "{} checkpoints, {} batches and {} metadata entries do not fit k = {k}",
            checkpoints.len(),
            total,
            metadata.len()
        )));
    }
    let mut checkpoints = checkpoints.into_iter();
    let mut records = Vec::with_capacity(total + 1);
    let mut batches = batches.into_iter();
    for t in 0..=total {
        let (batch_indices, meta) = if t < total {
            (batches.next().expect("length checked"), metadata[t])
        } else {
            let mut m = metadata[total - 1];
            m.step_index = total as u64;
            (Vec::new(), m)
        };
        let batch_hash = hash_rows(&store.batch(&batch_indices)?);
        records.push(ProofRecord {
            step: t,
            checkpoint: if t % k == 0 { checkpoints.next() } else { None },
            batch_indices,
            batch_hash,
            metadata: meta,
        });
    }
    Proof::new(arch, k, steps_per_epoch, records)
}

/// Relative weight displacement for finite-difference mixed derivatives.
const FD_STEP: f64 = 1e-5;

/// `grad_X (r . grad_W L(W, X))` for a fixed direction `r`, as a central
/// difference of input gradients at `W +- eps r`. Costs 2 weight additions
/// plus two forward/input-gradient pairs (8 FP).
pub(crate) fn mixed_input_grad(
    arch: &Arch,
    w: &[f64],
    features: &[f64],
    labels: &[usize],
    r: &[f64],
    ledger: &mut CostLedger,
) -> Result<Vec<f64>> {
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if rn == 0.0 {
        return Ok(vec![0.0; features.len()]);
    }
    let eps = FD_STEP / rn;
    let shifted =
        |sign: f64| -> Vec<f64> { w.iter().zip(r).map(|(w, d)| w + sign * eps * d).collect() };
    let (plus, minus) = (shifted(1.0), shifted(-1.0));
    ledger.record_n(OpKind::WeightAdd, 2);
    let gp = evaluate(arch, &plus, features, labels, false, true)?;
    let gm = evaluate(arch, &minus, features, labels, false, true)?;
    ledger.record_n(OpKind::Forward, 2);
    ledger.record_n(OpKind::InputGrad, 2);
    let (gp, gm) = (
        gp.input_grad.expect("requested"),
        gm.input_grad.expect("requested"),
    );
    if gp.iter().chain(&gm).any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite input gradient".into()));
    }
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect())
}
