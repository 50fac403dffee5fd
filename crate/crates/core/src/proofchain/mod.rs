//! Proof data model, canonical encoding and data commitments.
//!
//! A proof records, for every training step, the rows it used (by index),
//! a SHA-256 commitment to those rows, and the step metadata; weights are
//! checkpointed every `k` steps. The data itself never travels inside the
//! proof. The verifier fetches it from the prover's store at verification
//! time and checks it against the commitment.

mod codec;
mod commitment;
mod hash;
mod proof;

pub use codec::{chain_digest, deserialize, serialize, MAGIC, VERSION};
pub use commitment::{Clock, CommitmentLedger, LedgerEntry, SystemClock};
pub use hash::{hash_batch, hash_rows, Digest, HASH_ALGORITHM_SHA256};
pub use proof::{fetch_and_check_batch, Proof, ProofRecord};
