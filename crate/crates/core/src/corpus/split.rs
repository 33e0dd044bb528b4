use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Record, Split};
use crate::registry::TaskType;

/// TRAIN / VAL / TEST proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), CorpusError> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x >= 0.0)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(r));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items. Remainders are handed out
    /// in decreasing order of fractional part, ties going to TRAIN, then VAL.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut sizes = exact.map(|x| x.floor() as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        sizes
    }
}

/// Ordering key of a record for a given seed.
pub fn split_key(seed: u64, record_id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(record_id.as_bytes());
    hasher.finalize().into()
}

/// Assigns every record to TRAIN, VAL or TEST.
///
/// Stratified per task type: within a type, records are ordered by
/// `sha256(seed || record_id)` and the first `sizes[0]` go to TRAIN, the next
/// `sizes[1]` to VAL and the rest to TEST. The assignment depends only on
/// the set of record ids, not their input order.
pub fn split(
    mut records: Vec<Record>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<Record>, CorpusError> {
    ratios.validate()?;
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    for ty in TaskType::ALL {
        let mut idx: Vec<(usize, [u8; 32])> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.task_type == ty)
            .map(|(i, r)| (i, split_key(seed, &r.record_id)))
            .collect();
        idx.sort_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| records[a.0].record_id.cmp(&records[b.0].record_id))
        });
        let [n_train, n_val, _] = ratios.sizes(idx.len());
        for (rank, (i, _)) in idx.into_iter().enumerate() {
            records[i].split = Some(if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    Ok(records)
}
