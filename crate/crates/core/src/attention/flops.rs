//! Multiply-accumulate counts for PL-attention and plain self-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counting convention reported alongside every estimate.
pub const CONVENTION: &str = "multiply-accumulates; per attention over T tokens with C channels: \
Q/K/V/output projections 4*T*C^2, scores T^2*C, weighted sum T^2*C; heads split C and do not change \
the count; softmax, biases, position MLP and [CLS] insertion are not counted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Pla,
    Msa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopEstimate {
    pub kind: AttentionKind,
    pub n: u64,
    pub m: u64,
    pub c: u64,
    pub heads: u64,
    pub projection_macs: u64,
    pub score_macs: u64,
    pub weighted_sum_macs: u64,
    /// Sum over attentions of `T^2`, the channel-free score size.
    pub score_units: u64,
}

impl FlopEstimate {
    /// Score and weighted-sum terms, the part that scales with token pairs.
    pub fn attention_macs(&self) -> u64 {
        self.score_macs + self.weighted_sum_macs
    }

    pub fn total(&self) -> u64 {
        self.projection_macs + self.attention_macs()
    }
}

/// Sequence lengths and counts of each attention call: `(tokens, calls)`.
fn attention_calls(kind: AttentionKind, n: u64, m: u64) -> Vec<(u64, u64)> {
    match kind {
        // PPA per lane, LLA once, PYA per point index.
        AttentionKind::Pla => vec![(m + 1, n), (n, 1), (n, m)],
        AttentionKind::Msa => vec![(n * (m + 1), 1)],
    }
}

pub fn flop_estimate(kind: AttentionKind, n: usize, m: usize, c: usize, heads: usize) -> Result<FlopEstimate> {
    if n == 0 || m == 0 || c == 0 || heads == 0 {
        return Err(Error::InvalidConfig(format!(
            "flop estimate needs positive dims, got n={n} m={m} c={c} heads={heads}"
        )));
    }
    if !c.is_multiple_of(heads) {
        return Err(Error::InvalidConfig(format!("{c} channels do not split into {heads} heads")));
    }
    let (n, m, c, heads) = (n as u64, m as u64, c as u64, heads as u64);
    let mut tokens = 0;
    let mut score_units = 0;
    for (t, calls) in attention_calls(kind, n, m) {
        tokens += t * calls;
        score_units += t * t * calls;
    }
    Ok(FlopEstimate {
        kind,
        n,
        m,
        c,
        heads,
        projection_macs: 4 * tokens * c * c,
        score_macs: score_units * c,
        weighted_sum_macs: score_units * c,
        score_units,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_units() {
        let pla = flop_estimate(AttentionKind::Pla, 40, 30, 1, 1).unwrap();
        let msa = flop_estimate(AttentionKind::Msa, 40, 30, 1, 1).unwrap();
        assert_eq!(pla.score_units, 40 * 31 * 31 + 40 * 40 + 30 * 40 * 40);
        assert_eq!(pla.score_units, 88_040);
        assert_eq!(msa.score_units, 1_537_600);
        assert_eq!(pla.score_macs, 88_040);
    }

    #[test]
    fn heads_do_not_change_count() {
        let a = flop_estimate(AttentionKind::Pla, 10, 8, 16, 1).unwrap();
        let b = flop_estimate(AttentionKind::Pla, 10, 8, 16, 4).unwrap();
        assert_eq!(a.total(), b.total());
    }

    #[test]
    fn projections_scale_with_tokens() {
        let msa = flop_estimate(AttentionKind::Msa, 3, 4, 8, 2).unwrap();
        assert_eq!(msa.projection_macs, 4 * 15 * 64);
        let pla = flop_estimate(AttentionKind::Pla, 3, 4, 8, 2).unwrap();
        assert_eq!(pla.projection_macs, 4 * (15 + 3 + 12) * 64);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(flop_estimate(AttentionKind::Pla, 0, 3, 8, 1).is_err());
        assert!(flop_estimate(AttentionKind::Msa, 3, 3, 6, 4).is_err());
    }
}
