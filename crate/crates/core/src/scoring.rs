//! Ranking functions and the global linear quantizer that turns raw
//! floating-point scores into the integer impacts stored in the index.

use crate::error::{Error, Result};
use crate::index::Impact;

pub const DEFAULT_BM25_K1: f64 = 0.9;
pub const DEFAULT_BM25_B: f64 = 0.4;
pub const DEFAULT_QLD_MU: f64 = 1000.0;
pub const DEFAULT_QUANT_BITS: u8 = 8;

/// Scoring model used to derive term impacts at indexing time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoringModel {
    Bm25 { k1: f64, b: f64 },
    Qld { mu: f64 },
    /// Impacts were produced elsewhere and loaded verbatim.
    Precomputed,
}

impl ScoringModel {
    pub fn default_bm25() -> Self {
        ScoringModel::Bm25 {
            k1: DEFAULT_BM25_K1,
            b: DEFAULT_BM25_B,
        }
    }

    pub fn default_qld() -> Self {
        ScoringModel::Qld { mu: DEFAULT_QLD_MU }
    }

    /// Raw contribution of one (term, document) pair; strictly positive for
    /// tf >= 1 under both models.
    ///
    /// BM25 uses the non-negative idf variant ln(1 + (N - df + 0.5)/(df + 0.5)).
    /// QLD keeps the document-dependent part of the Dirichlet-smoothed
    /// query-likelihood score, ln(1 + tf * total_tokens / (mu * cf)), which is
    /// additive over terms and non-negative.
    pub fn raw_score(&self, stats: &CollectionStats, term: &TermStats, tf: u32, doc_len: u32) -> f64 {
        match *self {
            ScoringModel::Bm25 { k1, b } => {
                let n = stats.document_count as f64;
                let df = term.document_frequency as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let tf = tf as f64;
                let norm = tf + k1 * (1.0 - b + b * doc_len as f64 / stats.avg_doc_len);
                idf * (tf * (k1 + 1.0)) / norm
            }
            ScoringModel::Qld { mu } => {
                let cf = term.collection_frequency as f64;
                let total = stats.total_tokens as f64;
                (1.0 + tf as f64 * total / (mu * cf)).ln()
            }
            ScoringModel::Precomputed => {
                unreachable!("precomputed impacts are never re-scored")
            }
        }
    }
}

/// Collection-level statistics needed by the scoring models.
#[derive(Debug, Clone, Copy)]
pub struct CollectionStats {
    pub document_count: u64,
    pub total_tokens: u64,
    pub avg_doc_len: f64,
}

/// Per-term statistics needed by the scoring models.
#[derive(Debug, Clone, Copy)]
pub struct TermStats {
    pub document_frequency: u64,
    pub collection_frequency: u64,
}

/// How raw scores were mapped to integer impacts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationMeta {
    pub scorer: ScoringModel,
    /// Quantization width in bits, in [1, 16].
    pub bits: u8,
    /// Maximum raw score over all postings; 0.0 for precomputed impacts.
    pub global_max_raw_score: f64,
}

impl QuantizationMeta {
    pub fn precomputed() -> Self {
        QuantizationMeta {
            scorer: ScoringModel::Precomputed,
            bits: 16,
            global_max_raw_score: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::Argument(format!(
                "quantization bits must be in [1, 16], got {}",
                self.bits
            )));
        }
        if !matches!(self.scorer, ScoringModel::Precomputed) && self.global_max_raw_score <= 0.0 {
            return Err(Error::Range(
                "global max raw score must be positive for scored indexes".into(),
            ));
        }
        Ok(())
    }

    /// Quantize a raw score into [1, 2^bits - 1] by global linear scaling.
    /// Integer impacts keep every downstream score comparison exact.
    pub fn quantize(&self, raw: f64) -> Impact {
        let levels = ((1u32 << self.bits) - 1) as f64;
        let scaled = (raw / self.global_max_raw_score * levels).floor();
        scaled.clamp(1.0, levels) as Impact
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> CollectionStats {
        CollectionStats {
            document_count: 100,
            total_tokens: 5000,
            avg_doc_len: 50.0,
        }
    }

    #[test]
    fn bm25_is_positive_and_grows_with_tf() {
        let m = ScoringModel::default_bm25();
        let t = TermStats {
            document_frequency: 10,
            collection_frequency: 40,
        };
        let s1 = m.raw_score(&stats(), &t, 1, 50);
        let s2 = m.raw_score(&stats(), &t, 5, 50);
        assert!(s1 > 0.0);
        assert!(s2 > s1);
    }

    #[test]
    fn qld_is_positive_and_grows_with_tf() {
        let m = ScoringModel::default_qld();
        let t = TermStats {
            document_frequency: 10,
            collection_frequency: 40,
        };
        let s1 = m.raw_score(&stats(), &t, 1, 50);
        let s2 = m.raw_score(&stats(), &t, 3, 50);
        assert!(s1 > 0.0);
        assert!(s2 > s1);
    }

    #[test]
    fn quantize_maps_max_to_top_level_and_floors_small_scores_to_one() {
        let meta = QuantizationMeta {
            scorer: ScoringModel::default_bm25(),
            bits: 8,
            global_max_raw_score: 4.0,
        };
        assert_eq!(meta.quantize(4.0), 255);
        assert_eq!(meta.quantize(2.0), 127); // floor(0.5 * 255)
        assert_eq!(meta.quantize(1e-9), 1);
    }

    #[test]
    fn validate_rejects_bad_bits() {
        let mut meta = QuantizationMeta::precomputed();
        meta.bits = 0;
        assert!(meta.validate().is_err());
        meta.bits = 17;
        assert!(meta.validate().is_err());
    }
}
