//! Forward-pass (FP) unit cost accounting.
//!
//! One FP is the cost of evaluating the network once, roughly `N` floating
//! point operations for `N` parameters. Everything else is expressed in
//! that unit: a backward pass costs two, adding or interpolating two full
//! weight vectors costs one.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Kinds of instrumented operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Forward,
    Backward,
    Interpolate,
    WeightAdd,
    /// One inner product between two weight-length vectors while building
    /// least-squares normal equations.
    LsqSolve,
    /// Backpropagation down to the inputs (the forward half is counted
    /// separately as [`OpKind::Forward`]).
    InputGrad,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Forward,
        OpKind::Backward,
        OpKind::Interpolate,
        OpKind::WeightAdd,
        OpKind::LsqSolve,
        OpKind::InputGrad,
    ];

    /// Cost of one operation in FP units.
    pub fn unit_cost(self) -> f64 {
        match self {
            OpKind::Forward => 1.0,
            OpKind::Backward => 2.0,
            OpKind::Interpolate => 1.0,
            OpKind::WeightAdd => 1.0,
            OpKind::LsqSolve => 1.0,
            OpKind::InputGrad => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Forward => "forward",
            OpKind::Backward => "backward",
            OpKind::Interpolate => "interpolate",
            OpKind::WeightAdd => "weight-add",
            OpKind::LsqSolve => "lsq-solve",
            OpKind::InputGrad => "input-grad",
        }
    }
}

/// Running total of FP units plus per-operation counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    fp_units: f64,
    counters: BTreeMap<OpKind, u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, op: OpKind) {
        self.record_n(op, 1);
    }

    pub fn record_n(&mut self, op: OpKind, n: u64) {
        if n == 0 {
            return;
        }
        *self.counters.entry(op).or_insert(0) += n;
        self.fp_units += n as f64 * op.unit_cost();
    }

    pub fn fp_units(&self) -> f64 {
        self.fp_units
    }

    pub fn count(&self, op: OpKind) -> u64 {
        self.counters.get(&op).copied().unwrap_or(0)
    }

    pub fn counters(&self) -> &BTreeMap<OpKind, u64> {
        &self.counters
    }

    /// Component-wise sum.
    pub fn merge(&mut self, other: &CostLedger) {
        for (&op, &n) in &other.counters {
            *self.counters.entry(op).or_insert(0) += n;
        }
        self.fp_units += other.fp_units;
    }

    /// FP total recomputed from the counters.
    pub fn weighted_counter_sum(&self) -> f64 {
        self.counters
            .iter()
            .map(|(op, &n)| n as f64 * op.unit_cost())
            .sum()
    }

    /// True when the running total agrees with the counters.
    pub fn is_consistent(&self) -> bool {
        (self.fp_units - self.weighted_counter_sum()).abs() <= 1e-9 * self.fp_units.max(1.0)
    }
}

impl fmt::Display for CostLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} FP", self.fp_units)?;
        for op in OpKind::ALL {
            let n = self.count(op);
            if n > 0 {
                write!(f, " {}={}", op.name(), n)?;
            }
        }
        Ok(())
    }
}
