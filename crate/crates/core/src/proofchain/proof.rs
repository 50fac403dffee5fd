use super::hash::{hash_rows, Digest};
use crate::error::{Error, Result};
use crate::tinytrain::{Arch, Batch, Dataset, DatasetProvider, ModelState, StepMetadata, TrainRun};

/// Everything logged for one training step.
///
/// `batch_indices`/`batch_hash` describe the data used to go from step `t`
/// to `t + 1`; the record at the final step `T` carries an empty batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProofRecord {
    pub step: usize,
    pub checkpoint: Option<ModelState>,
    pub batch_indices: Vec<usize>,
    pub batch_hash: Digest,
    pub metadata: StepMetadata,
}

/// A proof of learning: one record per step `0..=T`, with weight
/// checkpoints every `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Proof {
    arch: Arch,
    k: usize,
    total_steps: usize,
    steps_per_epoch: usize,
    records: Vec<ProofRecord>,
}

impl Proof {
    /// Validates the structural invariants: records for every step
    /// `0..=T` in order, checkpoints exactly at multiples of `k` (so `T` is
    /// one), matching architectures and valid step metadata.
    pub fn new(
        arch: Arch,
        k: usize,
        steps_per_epoch: usize,
        records: Vec<ProofRecord>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::ProofStructure("proof has no records".into()));
        }
        if k == 0 {
            return Err(Error::ProofStructure(
                "checkpoint interval k must be >= 1".into(),
            ));
        }
        if steps_per_epoch == 0 {
            return Err(Error::ProofStructure("steps_per_epoch must be >= 1".into()));
        }
        let total_steps = records.len() - 1;
        if !total_steps.is_multiple_of(k) {
            return Err(Error::ProofStructure(format!(
                "total steps {total_steps} is not a multiple of k = {k}"
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.step != i {
                return Err(Error::ProofStructure(format!(
                    "record {i} carries step {}; steps must be 0..=T in order",
                    r.step
                )));
            }
            match (&r.checkpoint, i % k == 0) {
                (Some(w), true) => {
                    if *w.arch() != arch {
                        return Err(Error::ProofStructure(format!(
                            "checkpoint {i} has the wrong architecture"
                        )));
                    }
                }
                (None, true) => {
                    return Err(Error::ProofStructure(format!(
                        "missing checkpoint at step {i}"
                    )))
                }
                (Some(_), false) => {
                    return Err(Error::ProofStructure(format!(
                        "unexpected checkpoint at step {i}"
                    )))
                }
                (None, false) => {}
            }
            r.metadata
                .validate()
                .map_err(|e| Error::ProofStructure(format!("step {i}: {e}")))?;
        }
        Ok(Self {
            arch,
            k,
            total_steps,
            steps_per_epoch,
            records,
        })
    }

    /// Builds the proof an honest prover logs for a training run.
    pub fn from_run(run: &TrainRun, dataset: &Dataset, k: usize) -> Result<Self> {
        let total = run.total_steps();
        if k == 0 || !total.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "{total} training steps are not a multiple of k = {k}"
            )));
        }
        let mut records = Vec::with_capacity(total + 1);
        for t in 0..=total {
            let (batch_indices, metadata) = if t < total {
                (run.batches[t].clone(), run.metadata[t])
            } else {
                let mut m = run.metadata[total - 1];
                m.step_index = total as u64;
                (Vec::new(), m)
            };
            let batch_hash = hash_rows(&dataset.batch(&batch_indices)?);
            records.push(ProofRecord {
                step: t,
                checkpoint: (t % k == 0).then(|| run.trajectory[t].clone()),
                batch_indices,
                batch_hash,
                metadata,
            });
        }
        Self::new(*run.final_state().arch(), k, run.steps_per_epoch, records)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn records(&self) -> &[ProofRecord] {
        &self.records
    }

    pub fn record(&self, step: usize) -> Result<&ProofRecord> {
        self.records
            .get(step)
            .ok_or_else(|| Error::ProofStructure(format!("no record for step {step}")))
    }

    pub fn checkpoint(&self, step: usize) -> Result<&ModelState> {
        self.record(step)?
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::ProofStructure(format!("step {step} is not a checkpoint")))
    }

    /// Checkpoint steps `0, k, ..., T`.
    pub fn checkpoint_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.total_steps).step_by(self.k)
    }

    /// Checkpoint steps `t` that start a verifiable update `t -> t + k`.
    pub fn update_starts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.total_steps).step_by(self.k)
    }

    pub fn final_state(&self) -> &ModelState {
        self.records[self.total_steps]
            .checkpoint
            .as_ref()
            .expect("validated: final step is a checkpoint")
    }

    pub fn initial_state(&self) -> &ModelState {
        self.records[0]
            .checkpoint
            .as_ref()
            .expect("validated: step 0 is a checkpoint")
    }

    pub fn epoch_count(&self) -> usize {
        self.total_steps.div_ceil(self.steps_per_epoch)
    }

    /// Mutable access for tests that tamper with proofs.
    #[doc(hidden)]
    pub fn records_mut_unchecked(&mut self) -> &mut Vec<ProofRecord> {
        &mut self.records
    }
}

/// Fetches the rows committed at `step` from the prover's store and checks
/// them against the logged hash.
pub fn fetch_and_check_batch<P: DatasetProvider + ?Sized>(
    proof: &Proof,
    step: usize,
    provider: &P,
) -> Result<Batch> {
    if step >= proof.total_steps() {
        return Err(Error::ProofStructure(format!(
            "step {step} has no committed batch"
        )));
    }
    let record = proof.record(step)?;
    let batch = provider
        .fetch(&record.batch_indices)
        .map_err(|e| Error::Availability {
            step,
            reason: e.to_string(),
        })?;
    if batch.indices != record.batch_indices {
        return Err(Error::CommitmentViolation {
            step,
            reason: "provider returned different row indices".into(),
        });
    }
    if hash_rows(&batch) != record.batch_hash {
        return Err(Error::CommitmentViolation {
            step,
            reason: "batch hash does not match the proof".into(),
        });
    }
    Ok(batch)
}
