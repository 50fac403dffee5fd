use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::policy::check_positive;
use crate::error::Result;
use crate::tinytrain::CostLedger;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accept => "ACCEPT",
            Decision::Reject => "REJECT",
        }
    }
}

/// The rule applied to one step once its distance is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Static(f64),
    Adaptive(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepVerdict {
    pub step: usize,
    /// `||W_{t+k} - W_t||`
    pub proof_update_norm: f64,
    /// `||W'_{t+k} - W_t||`
    pub reproduced_update_norm: f64,
    pub distance: f64,
    pub threshold_used: f64,
    pub decision: Decision,
}

/// Applies the acceptance rule. Inequalities are strict: a distance equal to
/// the threshold is rejected.
pub fn verify_step(
    step: usize,
    distance: f64,
    proof_update_norm: f64,
    reproduced_update_norm: f64,
    rule: StepRule,
) -> Result<StepVerdict> {
    let threshold_used = match rule {
        StepRule::Static(delta) => {
            check_positive("delta", delta)?;
            delta
        }
        StepRule::Adaptive(alpha) => {
            check_positive("alpha", alpha)?;
            alpha * proof_update_norm.min(reproduced_update_norm)
        }
    };
    let decision = if distance < threshold_used {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(StepVerdict {
        step,
        proof_update_norm,
        reproduced_update_norm,
        distance,
        threshold_used,
        decision,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Overall {
    Valid,
    Invalid,
}

/// A step whose data could not be fetched or did not match its commitment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentFailure {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdicts: Vec<StepVerdict>,
    /// `distance / rd` per verdict; present only for a positive `rd`.
    pub normalized_errors: Option<Vec<f64>>,
    pub commitment_failures: Vec<CommitmentFailure>,
    pub overall: Overall,
    /// `||W_0 - W_T||`, recorded without affecting the decision.
    pub init_final_distance: f64,
    pub ledger: CostLedger,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.overall == Overall::Valid
    }

    pub fn rejected_steps(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .filter(|v| v.decision == Decision::Reject)
            .map(|v| v.step)
            .collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.verdicts.is_empty() {
            return 0.0;
        }
        let ok = self
            .verdicts
            .iter()
            .filter(|v| v.decision == Decision::Accept)
            .count();
        ok as f64 / self.verdicts.len() as f64
    }

    pub fn max_distance(&self) -> f64 {
        self.verdicts.iter().map(|v| v.distance).fold(0.0, f64::max)
    }

    /// Normalized reproduction error `max_t eps(t) / rd`.
    pub fn max_normalized_error(&self) -> Option<f64> {
        self.normalized_errors
            .as_ref()
            .map(|e| e.iter().cloned().fold(0.0, f64::max))
    }

    /// `step,dist,threshold,decision,norm_g,norm_gp`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,dist,threshold,decision,norm_g,norm_gp\n");
        for v in &self.verdicts {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:e},{:e}",
                v.step,
                v.distance,
                v.threshold_used,
                v.decision.as_str(),
                v.proof_update_norm,
                v.reproduced_update_norm
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "overall: {:?}", self.overall);
        let _ = writeln!(s, "verified updates: {}", self.verdicts.len());
        let _ = writeln!(s, "rejected: {:?}", self.rejected_steps());
        for f in &self.commitment_failures {
            let _ = writeln!(s, "commitment failure at step {}: {}", f.step, f.reason);
        }
        let _ = writeln!(s, "max distance: {:e}", self.max_distance());
        if let Some(nre) = self.max_normalized_error() {
            let _ = writeln!(s, "normalized reproduction error: {nre:e}");
        }
        let _ = writeln!(s, "d(W_0, W_T): {:e}", self.init_final_distance);
        let _ = writeln!(s, "cost: {}", self.ledger);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn static_rule() {
        let v = verify_step(0, 0.005, 1.0, 1.0, StepRule::Static(0.008)).unwrap();
        assert_eq!(v.decision, Decision::Accept);
        let v = verify_step(0, 0.009, 1.0, 1.0, StepRule::Static(0.008)).unwrap();
        assert_eq!(v.decision, Decision::Reject);
        // strict inequality
        let v = verify_step(0, 0.008, 1.0, 1.0, StepRule::Static(0.008)).unwrap();
        assert_eq!(v.decision, Decision::Reject);
    }

    #[test]
    fn adaptive_rejects_near_zero_reproduction() {
        // an interpolated update of 1e-3 reproduced with a near-zero learning rate
        let v = verify_step(0, 1e-3, 1e-3, 1e-8, StepRule::Adaptive(0.2)).unwrap();
        assert_eq!(v.decision, Decision::Reject);
        assert!((v.threshold_used - 2e-9).abs() < 1e-24);
    }

    #[test]
    fn nonpositive_parameters() {
        assert!(matches!(
            verify_step(0, 0.1, 1.0, 1.0, StepRule::Static(0.0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            verify_step(0, 0.1, 1.0, 1.0, StepRule::Adaptive(-1.0)),
            Err(Error::Config(_))
        ));
    }
}
