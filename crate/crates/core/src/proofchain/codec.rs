//! Binary proof format.
//!
//! ```text
//! magic "POL1" | version u8 = 1 | hash algorithm u8 (1 = SHA-256)
//! input_dim u32 | hidden u32 | classes u32 | activation u8
//! k u64 | T u64 | steps_per_epoch u64 | record count u64
//! record*:
//!   step u64 | has_checkpoint u8 | [f64; param_count] if present
//!   index count u32 | u64 indices | batch hash [u8; 32]
//!   lr f64 | batch_size u32 | optimizer u8 | seed u64 | step_index u64
//! ```
//!
//! All integers and floats are little-endian; floats are raw IEEE-754 bits.

use super::hash::{sha256, Digest, HASH_ALGORITHM_SHA256};
use super::proof::{Proof, ProofRecord};
use crate::error::{Error, Result};
use crate::tinytrain::{Activation, Arch, ModelState, Optimizer, StepMetadata};

pub const MAGIC: &[u8; 4] = b"POL1";
pub const VERSION: u8 = 1;

fn encode_header(proof: &Proof, out: &mut Vec<u8>) {
    let arch = proof.arch();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(HASH_ALGORITHM_SHA256);
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(arch.classes as u32).to_le_bytes());
    out.push(arch.activation.id());
    out.extend_from_slice(&(proof.k() as u64).to_le_bytes());
    out.extend_from_slice(&(proof.total_steps() as u64).to_le_bytes());
    out.extend_from_slice(&(proof.steps_per_epoch() as u64).to_le_bytes());
    out.extend_from_slice(&(proof.records().len() as u64).to_le_bytes());
}

fn encode_record(r: &ProofRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&(r.step as u64).to_le_bytes());
    match &r.checkpoint {
        Some(w) => {
            out.push(1);
            for x in w.weights() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&(r.batch_indices.len() as u32).to_le_bytes());
    for &i in &r.batch_indices {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    out.extend_from_slice(&r.batch_hash);
    let m = &r.metadata;
    out.extend_from_slice(&m.learning_rate.to_le_bytes());
    out.extend_from_slice(&(m.batch_size as u32).to_le_bytes());
    out.push(m.optimizer.id());
    out.extend_from_slice(&m.seed.to_le_bytes());
    out.extend_from_slice(&m.step_index.to_le_bytes());
}

pub fn serialize(proof: &Proof) -> Vec<u8> {
    let mut out = Vec::new();
    encode_header(proof, &mut out);
    for r in proof.records() {
        encode_record(r, &mut out);
    }
    out
}

/// Running hash over the header and then every record in order:
/// `H_0 = sha256(header)`, `H_i = sha256(H_{i-1} || record_i)`.
pub fn chain_digest(proof: &Proof) -> Digest {
    let mut buf = Vec::new();
    encode_header(proof, &mut buf);
    let mut h = sha256(&buf);
    for r in proof.records() {
        buf.clear();
        buf.extend_from_slice(&h);
        encode_record(r, &mut buf);
        h = sha256(&buf);
    }
    h
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format {
            offset: at,
            reason: format!("{what} does not fit in memory"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Proof> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected POL1"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let alg = r.u8("hash algorithm")?;
    if alg != HASH_ALGORITHM_SHA256 {
        return Err(r.fail(5, format!("unknown hash algorithm {alg}")));
    }
    let input_dim = r.u32("input_dim")? as usize;
    let hidden = r.u32("hidden")? as usize;
    let classes = r.u32("classes")? as usize;
    let act_at = r.pos;
    let activation = Activation::from_id(r.u8("activation")?)
        .ok_or_else(|| r.fail(act_at, "unknown activation"))?;
    let arch = Arch::new(input_dim, hidden, classes, activation);
    arch.validate().map_err(|e| r.fail(6, e.to_string()))?;
    let k = r.usize("k")?;
    let total = r.usize("T")?;
    let steps_per_epoch = r.usize("steps_per_epoch")?;
    let count_at = r.pos;
    let count = r.usize("record count")?;
    if count == 0 {
        return Err(r.fail(count_at, "proof has no records"));
    }
    if count != total.wrapping_add(1) {
        return Err(r.fail(count_at, format!("{count} records for T = {total}")));
    }

    let n = arch.param_count();
    let mut records = Vec::with_capacity(count.min(bytes.len() / 64 + 1));
    for _ in 0..count {
        let step = r.usize("step")?;
        let flag_at = r.pos;
        let checkpoint = match r.u8("checkpoint flag")? {
            0 => None,
            1 => {
                let w_at = r.pos;
                let mut w = Vec::with_capacity(n);
                for _ in 0..n {
                    w.push(r.f64("checkpoint")?);
                }
                Some(ModelState::new(arch, w).map_err(|e| r.fail(w_at, e.to_string()))?)
            }
            f => return Err(r.fail(flag_at, format!("bad checkpoint flag {f}"))),
        };
        let m = r.u32("index count")? as usize;
        let mut batch_indices = Vec::with_capacity(m.min(bytes.len() / 8));
        for _ in 0..m {
            batch_indices.push(r.usize("batch index")?);
        }
        let batch_hash: Digest = r.take(32, "batch hash")?.try_into().unwrap();
        let learning_rate = r.f64("learning rate")?;
        let batch_size = r.u32("batch size")? as usize;
        let opt_at = r.pos;
        let optimizer = Optimizer::from_id(r.u8("optimizer")?)
            .ok_or_else(|| r.fail(opt_at, "unknown optimizer"))?;
        let seed = r.u64("seed")?;
        let step_index = r.u64("step index")?;
        records.push(ProofRecord {
            step,
            checkpoint,
            batch_indices,
            batch_hash,
            metadata: StepMetadata {
                learning_rate,
                batch_size,
                optimizer,
                seed,
                step_index,
            },
        });
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes after last record"));
    }
    let end = r.pos;
    let proof =
        Proof::new(arch, k, steps_per_epoch, records).map_err(|e| r.fail(end, e.to_string()))?;
    debug_assert_eq!(proof.total_steps(), total);
    Ok(proof)
}
