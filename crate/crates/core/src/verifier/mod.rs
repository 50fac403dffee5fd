//! Proof verification.
//!
//! A verifier replays the `k` logged steps after a checkpoint, compares the
//! result against the next checkpoint and accepts when the two are close.
//! Closeness is either a fixed ball of radius `delta`, a per-step radius, or
//! an adaptive rule that bounds the angle between the logged update `g` and
//! the replayed update `g'`.

mod metric;
mod policy;
mod threshold;
mod verdict;
mod verify;

pub use metric::{distance, Metric};
pub use policy::{ThresholdMode, VerificationPolicy};
pub use threshold::{
    estimate_min_threshold, honest_update_sampler, reference_distance, ReferenceDistance,
};
pub use verdict::{
    verify_step, CommitmentFailure, Decision, Overall, StepRule, StepVerdict, VerificationReport,
};
pub use verify::{reproduce_update, select_top_q, selected_steps, update_norms, verify};

pub(crate) use metric::l2;
