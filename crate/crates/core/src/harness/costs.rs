use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinytrain::{CostLedger, OpKind};

/// Spoof versus honest cost, in FP units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub honest_total: f64,
    pub spoof_total: f64,
    pub honest_per_update: f64,
    pub spoof_per_update: f64,
    /// `spoof_per_update / honest_per_update`
    pub ratio_per_update: f64,
    /// `spoof_total / honest_total`
    pub ratio_total: f64,
    /// Operation counts `(honest, spoof)` by operation name.
    pub breakdown: BTreeMap<String, (u64, u64)>,
}

/// Compares two ledgers. `*_updates` is the number of checkpointed updates
/// each ledger paid for.
pub fn compare_costs(
    honest: &CostLedger,
    honest_updates: usize,
    spoof: &CostLedger,
    spoof_updates: usize,
) -> Result<CostComparison> {
    let honest_total = honest.fp_units();
    if !(honest_total > 0.0) || honest_updates == 0 || spoof_updates == 0 {
        return Err(Error::Degenerate(
            "honest cost and update counts must be positive".into(),
        ));
    }
    let spoof_total = spoof.fp_units();
    let honest_per_update = honest_total / honest_updates as f64;
    let spoof_per_update = spoof_total / spoof_updates as f64;
    let breakdown = OpKind::ALL
        .iter()
        .map(|&op| (op.name().to_string(), (honest.count(op), spoof.count(op))))
        .collect();
    Ok(CostComparison {
        honest_total,
        spoof_total,
        honest_per_update,
        spoof_per_update,
        ratio_per_update: spoof_per_update / honest_per_update,
        ratio_total: spoof_total / honest_total,
        breakdown,
    })
}
