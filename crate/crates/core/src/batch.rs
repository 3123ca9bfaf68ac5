//! Encoded sequences and the per-token arrays aligned with them.
//!
//! Position `t` of a sequence is *supervised* when `loss_mask[t]` is set; its
//! loss is `-log p(tokens[t] | tokens[..t])`. Per-token arrays
//! ([`TokenLosses`], [`TokenWeights`], utilities) are stored compactly: one
//! entry per supervised position, in position order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub answer_mask: Vec<bool>,
    pub spurious_mask: Vec<bool>,
}

impl Sequence {
    /// Builds a sequence, checking that the masks line up with the tokens and
    /// that answer and spurious positions are supervised.
    pub fn new(
        tokens: Vec<u32>,
        loss_mask: Vec<bool>,
        answer_mask: Vec<bool>,
        spurious_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = tokens.len();
        for (name, m) in [
            ("loss_mask", &loss_mask),
            ("answer_mask", &answer_mask),
            ("spurious_mask", &spurious_mask),
        ] {
            if m.len() != n {
                return Err(Error::MalformedSequence(format!(
                    "{name} has {} entries for {n} tokens",
                    m.len()
                )));
            }
        }
        if loss_mask.first() == Some(&true) {
            return Err(Error::MalformedSequence(
                "position 0 has no context and cannot be supervised".into(),
            ));
        }
        for t in 0..n {
            if answer_mask[t] && !loss_mask[t] {
                return Err(Error::MalformedSequence(format!(
                    "answer position {t} is not supervised"
                )));
            }
            if spurious_mask[t] && !loss_mask[t] {
                return Err(Error::MalformedSequence(format!(
                    "spurious position {t} is not supervised"
                )));
            }
        }
        Ok(Self {
            tokens,
            loss_mask,
            answer_mask,
            spurious_mask,
        })
    }

    /// A sequence supervised at every position after the first, with no
    /// answer or spurious labels.
    pub fn fully_supervised(tokens: Vec<u32>) -> Result<Self> {
        let n = tokens.len();
        let mut loss_mask = vec![true; n];
        if let Some(first) = loss_mask.first_mut() {
            *first = false;
        }
        Self::new(tokens, loss_mask, vec![false; n], vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn supervised_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.loss_mask
            .iter()
            .enumerate()
            .filter_map(|(t, &m)| m.then_some(t))
    }

    pub fn supervised_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Answer flags restricted to supervised positions, in order.
    pub fn supervised_answer_flags(&self) -> Vec<bool> {
        self.supervised_positions()
            .map(|t| self.answer_mask[t])
            .collect()
    }

    /// Spurious flags restricted to supervised positions, in order.
    pub fn supervised_spurious_flags(&self) -> Vec<bool> {
        self.supervised_positions()
            .map(|t| self.spurious_mask[t])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub rows: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn new(rows: Vec<Sequence>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checks the training-batch invariants: nonempty, and every row has at
    /// least one supervised and one answer position.
    pub fn require_supervision(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.supervised_count() == 0 {
                return Err(Error::MalformedSequence(format!(
                    "row {i} has no supervised position"
                )));
            }
            if !row.answer_mask.iter().any(|&a| a) {
                return Err(Error::MalformedSequence(format!(
                    "row {i} has no answer position"
                )));
            }
        }
        Ok(())
    }

    pub fn supervised_counts(&self) -> Vec<usize> {
        self.rows.iter().map(Sequence::supervised_count).collect()
    }
}

/// Per-token losses in nats, one row per sequence, one entry per supervised
/// position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLosses {
    pub rows: Vec<Vec<f64>>,
}

impl TokenLosses {
    /// Mean over sequences of the mean token loss, i.e. the batch loss under
    /// uniform `1/|y|` weights. Rows without supervision are skipped.
    pub fn uniform_mean(&self) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for row in &self.rows {
            if row.is_empty() {
                continue;
            }
            total += row.iter().sum::<f64>() / row.len() as f64;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&l| libm::exp(-l)).collect())
            .collect()
    }
}

/// Per-token supervision weights, compact over supervised positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub rows: Vec<Vec<f64>>,
    /// Whether every row sums to one.
    pub is_distribution: bool,
}

impl TokenWeights {
    /// `1/|y|` on every supervised position.
    pub fn uniform(batch: &SequenceBatch) -> Self {
        let rows = batch
            .rows
            .iter()
            .map(|s| {
                let n = s.supervised_count();
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self {
            rows,
            is_distribution: true,
        }
    }

    pub fn zeros(batch: &SequenceBatch) -> Self {
        Self {
            rows: batch
                .rows
                .iter()
                .map(|s| vec![0.0; s.supervised_count()])
                .collect(),
            is_distribution: false,
        }
    }

    /// Weight one on the supervised position `pos` of row `seq`, zero elsewhere.
    pub fn one_hot(batch: &SequenceBatch, seq: usize, pos: usize) -> Result<Self> {
        let row = batch
            .rows
            .get(seq)
            .ok_or(Error::UnsupervisedPosition { seq, pos })?;
        if !row.loss_mask.get(pos).copied().unwrap_or(false) {
            return Err(Error::UnsupervisedPosition { seq, pos });
        }
        let idx = row.supervised_positions().position(|t| t == pos).unwrap();
        let mut w = Self::zeros(batch);
        w.rows[seq][idx] = 1.0;
        Ok(w)
    }

    /// Converts per-position weights (one entry per token) to the compact
    /// form. A nonzero weight on an unsupervised position is an error.
    pub fn from_dense(batch: &SequenceBatch, dense: &[Vec<f64>]) -> Result<Self> {
        if dense.len() != batch.len() {
            return Err(Error::LengthMismatch {
                expected: batch.len(),
                got: dense.len(),
            });
        }
        let mut rows = Vec::with_capacity(dense.len());
        for (seq, (row, d)) in batch.rows.iter().zip(dense).enumerate() {
            if d.len() != row.len() {
                return Err(Error::LengthMismatch {
                    expected: row.len(),
                    got: d.len(),
                });
            }
            let mut compact = Vec::with_capacity(row.supervised_count());
            for (pos, (&w, &m)) in d.iter().zip(&row.loss_mask).enumerate() {
                if m {
                    compact.push(w);
                } else if w != 0.0 {
                    return Err(Error::UnsupervisedPosition { seq, pos });
                }
            }
            rows.push(compact);
        }
        Ok(Self {
            rows,
            is_distribution: false,
        })
    }

    /// Checks shape against the batch and that every weight is finite.
    pub fn check_aligned(&self, batch: &SequenceBatch) -> Result<()> {
        if self.rows.len() != batch.len() {
            return Err(Error::MisalignedWeights(format!(
                "{} weight rows for {} sequences",
                self.rows.len(),
                batch.len()
            )));
        }
        for (i, (w, s)) in self.rows.iter().zip(&batch.rows).enumerate() {
            let n = s.supervised_count();
            if w.len() != n {
                return Err(Error::MisalignedWeights(format!(
                    "row {i} has {} weights for {n} supervised positions",
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("weights of row {i}")));
            }
        }
        Ok(())
    }

    /// Rows rescaled to sum to one; all-zero rows become uniform.
    pub fn normalized(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                if s > 0.0 {
                    r.iter().map(|w| w / s).collect()
                } else {
                    vec![1.0 / r.len().max(1) as f64; r.len()]
                }
            })
            .collect();
        Self {
            rows,
            is_distribution: true,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|w| w * factor).collect())
                .collect(),
            is_distribution: self.is_distribution && factor == 1.0,
        }
    }
}
