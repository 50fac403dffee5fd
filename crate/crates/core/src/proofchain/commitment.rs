//! Append-only timestamped register of proof digests.
//!
//! On disk every entry is one line: `hex(digest)\tunix_seconds\tlabel`.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use super::codec::chain_digest;
use super::hash::Digest;
use super::proof::Proof;
use crate::error::{Error, Result};

pub trait Clock {
    fn now(&self) -> u64;
}

/// Wall-clock seconds since the Unix epoch.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub proof_digest: Digest,
    pub timestamp: u64,
    pub label: String,
}

impl LedgerEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            hex::encode(self.proof_digest),
            self.timestamp,
            self.label
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut parts = line.splitn(3, '\t');
        let (Some(d), Some(ts), Some(label)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Ledger(format!("malformed ledger line: {line:?}")));
        };
        let bytes = hex::decode(d).map_err(|e| Error::Ledger(format!("bad digest hex: {e}")))?;
        let proof_digest: Digest = bytes
            .try_into()
            .map_err(|_| Error::Ledger("digest must be 32 bytes".into()))?;
        let timestamp = ts
            .parse()
            .map_err(|e| Error::Ledger(format!("bad timestamp {ts:?}: {e}")))?;
        Ok(Self {
            proof_digest,
            timestamp,
            label: label.to_string(),
        })
    }
}

/// Entries are only ever appended; nothing mutates or removes them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitmentLedger {
    entries: Vec<LedgerEntry>,
}

impl CommitmentLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the digest of `proof` at time `now`.
    pub fn commit(&mut self, proof: &Proof, now: u64, label: &str) -> Result<LedgerEntry> {
        self.commit_digest(chain_digest(proof), now, label)
    }

    pub fn commit_digest(
        &mut self,
        proof_digest: Digest,
        now: u64,
        label: &str,
    ) -> Result<LedgerEntry> {
        if label.contains(['\t', '\n', '\r']) {
            return Err(Error::Ledger(
                "labels may not contain tabs or newlines".into(),
            ));
        }
        if let Some(last) = self.entries.last() {
            if now < last.timestamp {
                return Err(Error::Ledger(format!(
                    "clock went backwards: {now} is before the last entry at {}",
                    last.timestamp
                )));
            }
        }
        let entry = LedgerEntry {
            proof_digest,
            timestamp: now,
            label: label.to_string(),
        };
        self.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn commit_with_clock(
        &mut self,
        proof: &Proof,
        clock: &dyn Clock,
        label: &str,
    ) -> Result<LedgerEntry> {
        self.commit(proof, clock.now(), label)
    }

    /// True when this proof's digest has already been committed.
    pub fn detect_replay(&self, proof: &Proof) -> bool {
        self.contains(&chain_digest(proof))
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.entries.iter().any(|e| &e.proof_digest == digest)
    }

    /// Loads a ledger file; a missing file is an empty ledger.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let file = std::fs::File::open(path)?;
        let mut ledger = Self::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let e = LedgerEntry::parse_line(&line)?;
            ledger.commit_digest(e.proof_digest, e.timestamp, &e.label)?;
        }
        Ok(ledger)
    }

    /// Appends one entry to a ledger file.
    pub fn append_to_file(path: &Path, entry: &LedgerEntry) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", entry.to_line())?;
        Ok(())
    }
}
