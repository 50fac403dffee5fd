use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metric::{l2, sub, Metric};
use super::policy::{ThresholdMode, VerificationPolicy};
use super::verdict::{
    verify_step, CommitmentFailure, Decision, Overall, StepRule, StepVerdict, VerificationReport,
};
use crate::error::{Error, Result};
use crate::proofchain::{fetch_and_check_batch, Proof};
use crate::tinytrain::{sgd_step, CostLedger, DatasetProvider, ModelState, NoiseModel};

/// Noise stream the verifier uses when replaying the update starting at
/// `step`. Independent of the order in which steps are verified.
fn replay_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

/// Replays the `k` logged steps from checkpoint `t` and returns `W'_{t+k}`.
///
/// All `k` batches are fetched and checked against their commitments before
/// any gradient is computed.
pub fn reproduce_update<P: DatasetProvider + ?Sized>(
    proof: &Proof,
    t: usize,
    provider: &P,
    noise: &NoiseModel,
    noise_seed: u64,
    ledger: &mut CostLedger,
) -> Result<ModelState> {
    let k = proof.k();
    if !t.is_multiple_of(k) || t + k > proof.total_steps() {
        return Err(Error::ProofStructure(format!(
            "step {t} does not start a checkpointed update"
        )));
    }
    noise.validate()?;
    let batches = (t..t + k)
        .map(|s| fetch_and_check_batch(proof, s, provider))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = replay_rng(noise_seed, t);
    let mut w = proof.checkpoint(t)?.clone();
    for (i, batch) in batches.iter().enumerate() {
        let meta = proof.record(t + i)?.metadata;
        meta.validate()?;
        sgd_step(&mut w, batch, &meta, noise, &mut rng, ledger)?;
    }
    Ok(w)
}

/// `||W_{t+k} - W_t||` under `metric` for every update start, in step order.
pub fn update_norms(proof: &Proof, metric: Metric) -> Result<Vec<(usize, f64)>> {
    proof
        .update_starts()
        .map(|t| {
            let a = proof.checkpoint(t)?;
            let b = proof.checkpoint(t + proof.k())?;
            Ok((t, metric.norm(&sub(b.weights(), a.weights()))))
        })
        .collect()
}

/// Update starts that fall in `epoch`, i.e. `t / steps_per_epoch == epoch`.
fn epoch_updates(
    norms: &[(usize, f64)],
    steps_per_epoch: usize,
    epoch: usize,
) -> Vec<(usize, f64)> {
    norms
        .iter()
        .copied()
        .filter(|(t, _)| t / steps_per_epoch == epoch)
        .collect()
}

/// The `q` largest updates, ties going to the lower step. Returned in step order.
fn top_q_of(mut updates: Vec<(usize, f64)>, q: usize) -> Vec<usize> {
    updates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut steps: Vec<usize> = updates.into_iter().take(q).map(|(t, _)| t).collect();
    steps.sort_unstable();
    steps
}

/// The `q` checkpoint steps of `epoch` with the largest update norm.
pub fn select_top_q(proof: &Proof, epoch: usize, q: usize, metric: Metric) -> Result<Vec<usize>> {
    if q == 0 {
        return Err(Error::Config("Q must be >= 1 for top-Q selection".into()));
    }
    if epoch >= proof.epoch_count() {
        return Err(Error::Config(format!(
            "epoch {epoch} outside proof with {} epochs",
            proof.epoch_count()
        )));
    }
    let norms = update_norms(proof, metric)?;
    let updates = epoch_updates(&norms, proof.steps_per_epoch(), epoch);
    if q > updates.len() {
        return Err(Error::Config(format!(
            "Q = {q} exceeds the {} checkpointed updates in epoch {epoch}",
            updates.len()
        )));
    }
    Ok(top_q_of(updates, q))
}

/// Update starts checked under `policy`: all of them for `Q = 0`, otherwise
/// the per-epoch top-Q. A trailing epoch with fewer than `Q` updates is
/// verified in full.
pub fn selected_steps(proof: &Proof, policy: &VerificationPolicy) -> Result<Vec<usize>> {
    let norms = update_norms(proof, policy.metric)?;
    if policy.q == 0 {
        return Ok(norms.into_iter().map(|(t, _)| t).collect());
    }
    let spe = proof.steps_per_epoch();
    let full_epoch = epoch_updates(&norms, spe, 0).len();
    if policy.q > full_epoch {
        return Err(Error::Config(format!(
            "Q = {} exceeds the {full_epoch} checkpointed updates per epoch",
            policy.q
        )));
    }
    let mut out = Vec::new();
    for epoch in 0..proof.epoch_count() {
        let updates = epoch_updates(&norms, spe, epoch);
        let q = policy.q.min(updates.len());
        out.extend(top_q_of(updates, q));
    }
    Ok(out)
}

enum Outcome {
    Verdict(StepVerdict),
    Commitment(CommitmentFailure),
}

fn check_one<P: DatasetProvider + Sync + ?Sized>(
    proof: &Proof,
    t: usize,
    rule: StepRule,
    policy: &VerificationPolicy,
    provider: &P,
) -> Result<(Outcome, CostLedger)> {
    let mut ledger = CostLedger::new();
    let w_t = proof.checkpoint(t)?;
    let w_tk = proof.checkpoint(t + proof.k())?;
    let g = sub(w_tk.weights(), w_t.weights());
    let replay = reproduce_update(
        proof,
        t,
        provider,
        &policy.noise,
        policy.noise_seed,
        &mut ledger,
    );
    let outcome = match replay {
        Ok(w_prime) => {
            let gp = sub(w_prime.weights(), w_t.weights());
            let distance = policy.metric.between(w_tk.weights(), w_prime.weights())?;
            let (ng, ngp) = (policy.metric.norm(&g), policy.metric.norm(&gp));
            Outcome::Verdict(verify_step(t, distance, ng, ngp, rule)?)
        }
        // a replay that diverges can never match a finite checkpoint
        Err(Error::Domain(_)) => {
            let v = verify_step(
                t,
                f64::INFINITY,
                policy.metric.norm(&g),
                f64::INFINITY,
                rule,
            )?;
            Outcome::Verdict(v)
        }
        Err(Error::CommitmentViolation { step, reason }) => {
            Outcome::Commitment(CommitmentFailure {
                step,
                reason: format!("commitment violation: {reason}"),
            })
        }
        Err(Error::Availability { step, reason }) => Outcome::Commitment(CommitmentFailure {
            step,
            reason: format!("data unavailable: {reason}"),
        }),
        Err(e) => return Err(e),
    };
    Ok((outcome, ledger))
}

/// Verifies `proof` under `policy`, fetching data from `provider`.
///
/// Checkpoints are replayed in parallel, each with its own noise stream and
/// cost ledger; results are merged in step order. When `rd` is positive the
/// report also carries each step's distance divided by `rd`.
pub fn verify<P: DatasetProvider + Sync + ?Sized>(
    proof: &Proof,
    policy: &VerificationPolicy,
    provider: &P,
    rd: Option<f64>,
) -> Result<VerificationReport> {
    policy.validate()?;
    if let Some(k) = policy.k {
        if k != proof.k() {
            return Err(Error::Config(format!(
                "policy expects k = {k}, proof uses k = {}",
                proof.k()
            )));
        }
    }
    let steps = selected_steps(proof, policy)?;
    let rules: Vec<StepRule> = match &policy.threshold {
        ThresholdMode::Static { delta } => vec![StepRule::Static(*delta); steps.len()],
        ThresholdMode::Adaptive { alpha } => vec![StepRule::Adaptive(*alpha); steps.len()],
        ThresholdMode::PerStep { deltas } => {
            if deltas.len() != steps.len() {
                return Err(Error::Config(format!(
                    "{} per-step thresholds for {} verified checkpoints",
                    deltas.len(),
                    steps.len()
                )));
            }
            deltas.iter().map(|d| StepRule::Static(*d)).collect()
        }
    };

    let results = steps
        .par_iter()
        .zip(rules.par_iter())
        .map(|(&t, &rule)| check_one(proof, t, rule, policy, provider))
        .collect::<Result<Vec<_>>>()?;

    let mut ledger = CostLedger::new();
    let mut verdicts = Vec::new();
    let mut commitment_failures = Vec::new();
    for (outcome, l) in results {
        ledger.merge(&l);
        match outcome {
            Outcome::Verdict(v) => verdicts.push(v),
            Outcome::Commitment(c) => commitment_failures.push(c),
        }
    }
    let all_accept = verdicts.iter().all(|v| v.decision == Decision::Accept);
    let overall = if all_accept && commitment_failures.is_empty() {
        Overall::Valid
    } else {
        Overall::Invalid
    };
    let normalized_errors = rd
        .filter(|r| *r > 0.0 && r.is_finite())
        .map(|r| verdicts.iter().map(|v| v.distance / r).collect());
    let init_final_distance = l2(
        proof.initial_state().weights(),
        proof.final_state().weights(),
    );
    Ok(VerificationReport {
        verdicts,
        normalized_errors,
        commitment_failures,
        overall,
        init_final_distance,
        ledger,
    })
}
