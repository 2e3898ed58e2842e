//! Per-subset quantile records and score-descending conjunctive prefixes,
//! plus the versioned `TKPS` binary container.
//!
//! Quantiles are computed on disjunctive semantics (the k-th highest sum of
//! subset term scores over all documents); prefixes on conjunctive semantics
//! (only documents containing every subset term), so no stored entry ever
//! carries a zero term score.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::{self, Reader, CHECKSUM_LEN};
use crate::catalog::{CatalogEntry, SubsetKey, MAX_SUBSET_SIZE};
use crate::engine;
use crate::error::{Error, Result};
use crate::index::{DocId, Impact, ImpactIndex, Query, Score, TermId};

const STORE_MAGIC: &[u8; 4] = b"TKPS";
const STORE_VERSION: u8 = 1;

/// Per-entry serialized size: 32-bit docID plus one 16-bit score per term.
pub const fn prefix_entry_bytes(subset_len: usize) -> usize {
    4 + 2 * subset_len
}

/// Stored top-k thresholds of one subset, keyed by k. Non-increasing in k;
/// 0 when fewer than k documents match the subset disjunctively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantileRecord {
    pub thresholds: BTreeMap<u32, Score>,
}

impl QuantileRecord {
    fn validate(&self, k_values: &[u32]) -> Result<()> {
        if self.thresholds.len() != k_values.len()
            || !k_values.iter().all(|k| self.thresholds.contains_key(k))
        {
            return Err(Error::Format("quantile record does not match the k grid".into()));
        }
        let mut prev: Option<Score> = None;
        for (_, &th) in self.thresholds.iter() {
            if let Some(prev) = prev {
                if th > prev {
                    return Err(Error::Format(
                        "quantile thresholds must be non-increasing in k".into(),
                    ));
                }
            }
            prev = Some(th);
        }
        Ok(())
    }
}

/// Score-descending prefix of a subset's conjunctive results. Entries are
/// stored flattened: docIDs in one vector, the per-term scores (aligned with
/// the subset's ascending term order) in another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefix {
    subset_len: usize,
    docs: Vec<DocId>,
    scores: Vec<Impact>,
}

impl Prefix {
    /// Builds a prefix from (doc, per-term scores) entries, validating the
    /// descending-total / ascending-docID order and non-zero scores.
    pub fn from_entries(subset_len: usize, entries: &[(DocId, Vec<Impact>)]) -> Result<Prefix> {
        let mut docs = Vec::with_capacity(entries.len());
        let mut scores = Vec::with_capacity(entries.len() * subset_len);
        for (doc, term_scores) in entries {
            if term_scores.len() != subset_len {
                return Err(Error::Argument(format!(
                    "entry for doc {doc} has {} scores, subset has {subset_len} terms",
                    term_scores.len()
                )));
            }
            docs.push(*doc);
            scores.extend_from_slice(term_scores);
        }
        let prefix = Prefix {
            subset_len,
            docs,
            scores,
        };
        prefix.validate()?;
        Ok(prefix)
    }

    fn validate(&self) -> Result<()> {
        if self.scores.len() != self.docs.len() * self.subset_len {
            return Err(Error::Format("prefix score table misaligned".into()));
        }
        if self.scores.iter().any(|&s| s == 0) {
            return Err(Error::Format(
                "prefix entries must not contain zero term scores".into(),
            ));
        }
        for i in 1..self.len() {
            let (prev_t, cur_t) = (self.total(i - 1), self.total(i));
            if cur_t > prev_t || (cur_t == prev_t && self.doc(i) <= self.doc(i - 1)) {
                return Err(Error::Format(
                    "prefix entries must descend by total with ascending docID ties".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn subset_len(&self) -> usize {
        self.subset_len
    }

    pub fn doc(&self, i: usize) -> DocId {
        self.docs[i]
    }

    pub fn term_scores(&self, i: usize) -> &[Impact] {
        &self.scores[i * self.subset_len..(i + 1) * self.subset_len]
    }

    /// Sum of the entry's term scores.
    pub fn total(&self, i: usize) -> Score {
        self.term_scores(i).iter().map(|&s| s as Score).sum()
    }
}

/// A stored subset visible to a query, with its serving capabilities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetMatch {
    pub key: SubsetKey,
    pub has_prefix: bool,
}

/// Immutable set of quantile records and prefixes over one index, identified
/// by that index's fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixStore {
    k_values: Vec<u32>,
    policy_name: String,
    index_fingerprint: u64,
    max_subset_size: usize,
    quantiles: BTreeMap<SubsetKey, QuantileRecord>,
    prefixes: BTreeMap<SubsetKey, Prefix>,
}

/// Result of a store build: the store plus how many catalog subsets were
/// skipped because a term was missing from the index.
#[derive(Debug)]
pub struct StoreBuild {
    pub store: PrefixStore,
    pub skipped_subsets: u32,
}

impl PrefixStore {
    /// Empty store for programmatic construction (tests, tools).
    pub fn new(k_values: Vec<u32>, policy_name: &str, index_fingerprint: u64) -> Result<PrefixStore> {
        let mut k_values = k_values;
        k_values.sort_unstable();
        k_values.dedup();
        if k_values.is_empty() || k_values[0] == 0 {
            return Err(Error::Argument("k grid must contain positive values".into()));
        }
        Ok(PrefixStore {
            k_values,
            policy_name: policy_name.to_string(),
            index_fingerprint,
            max_subset_size: 0,
            quantiles: BTreeMap::new(),
            prefixes: BTreeMap::new(),
        })
    }

    /// Inserts one subset's quantile record and optional prefix. Every
    /// prefixed subset keeps a quantile record by construction.
    pub fn insert_subset(
        &mut self,
        key: SubsetKey,
        record: QuantileRecord,
        prefix: Option<Prefix>,
    ) -> Result<()> {
        record.validate(&self.k_values)?;
        if let Some(prefix) = &prefix {
            if prefix.subset_len() != key.len() {
                return Err(Error::Argument("prefix arity does not match subset".into()));
            }
            prefix.validate()?;
        }
        self.max_subset_size = self.max_subset_size.max(key.len());
        if let Some(prefix) = prefix {
            if !prefix.is_empty() {
                self.prefixes.insert(key.clone(), prefix);
            }
        }
        self.quantiles.insert(key, record);
        Ok(())
    }

    pub fn k_values(&self) -> &[u32] {
        &self.k_values
    }

    pub fn policy_name(&self) -> &str {
        &self.policy_name
    }

    pub fn index_fingerprint(&self) -> u64 {
        self.index_fingerprint
    }

    pub fn max_subset_size(&self) -> usize {
        self.max_subset_size
    }

    pub fn subset_count(&self) -> usize {
        self.quantiles.len()
    }

    pub fn prefix_count(&self) -> usize {
        self.prefixes.len()
    }

    pub fn quantile(&self, key: &SubsetKey) -> Option<&QuantileRecord> {
        self.quantiles.get(key)
    }

    /// Stored th(s, k), if this subset and k are materialized.
    pub fn th(&self, key: &SubsetKey, k: u32) -> Option<Score> {
        self.quantiles.get(key)?.thresholds.get(&k).copied()
    }

    pub fn prefix(&self, key: &SubsetKey) -> Option<&Prefix> {
        self.prefixes.get(key)
    }

    pub fn subsets(&self) -> impl Iterator<Item = &SubsetKey> {
        self.quantiles.keys()
    }

    pub fn verify_fingerprint(&self, index: &ImpactIndex) -> Result<()> {
        if self.index_fingerprint != index.fingerprint() {
            return Err(Error::Compatibility(
                "store was built against a different index".into(),
            ));
        }
        Ok(())
    }

    /// All stored subsets contained in the query, sorted by key. Uses
    /// whichever is cheaper: enumerating the query's subsets or scanning the
    /// stored keys.
    pub fn matching_subsets(&self, query: &Query) -> Vec<SubsetMatch> {
        let terms = query.terms();
        let max_size = self.max_subset_size.min(terms.len());
        if max_size == 0 || self.quantiles.is_empty() {
            return Vec::new();
        }

        let mut matches = Vec::new();
        if combination_count(terms.len(), max_size) <= 4 * self.quantiles.len() as u64 {
            crate::catalog::for_each_combination(terms, max_size, &mut |subset| {
                if let Some((key, _)) = self.quantiles.get_key_value(subset) {
                    matches.push(SubsetMatch {
                        key: key.clone(),
                        has_prefix: self.prefixes.contains_key(key),
                    });
                }
            });
            matches.sort_unstable_by(|a, b| a.key.cmp(&b.key));
        } else {
            for key in self.quantiles.keys() {
                if key.is_contained_in(terms) {
                    matches.push(SubsetMatch {
                        key: key.clone(),
                        has_prefix: self.prefixes.contains_key(key),
                    });
                }
            }
        }
        matches
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PrefixStore> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and rejects the store when it does not match `index`.
    pub fn load_for_index(path: &Path, index: &ImpactIndex) -> Result<PrefixStore> {
        let store = Self::load(path)?;
        store.verify_fingerprint(index)?;
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.serialize().0
    }

    /// Exact serialized byte counts per section.
    pub fn size_report(&self) -> StoreSizeReport {
        self.serialize().1
    }

    /// `TKPS` container, version 1; layout documented in docs/FORMATS.md.
    fn serialize(&self) -> (Vec<u8>, StoreSizeReport) {
        let mut buf = Vec::new();
        buf.extend_from_slice(STORE_MAGIC);
        binfmt::put_u8(&mut buf, STORE_VERSION);
        binfmt::put_u64(&mut buf, self.index_fingerprint);
        binfmt::put_u8(&mut buf, self.k_values.len() as u8);
        for &k in &self.k_values {
            binfmt::put_u32(&mut buf, k);
        }
        binfmt::put_str(&mut buf, &self.policy_name);
        binfmt::put_u8(&mut buf, self.max_subset_size as u8);
        binfmt::put_u32(&mut buf, self.quantiles.len() as u32);
        let metadata_bytes = buf.len();

        for key in self.quantiles.keys() {
            binfmt::put_u8(&mut buf, key.len() as u8);
            for &t in key.terms() {
                binfmt::put_u32(&mut buf, t);
            }
        }
        let dictionary_bytes = buf.len() - metadata_bytes;

        for record in self.quantiles.values() {
            for &k in &self.k_values {
                binfmt::put_u32(&mut buf, record.thresholds[&k] as u32);
            }
        }
        let quantile_bytes = buf.len() - metadata_bytes - dictionary_bytes;

        // Offsets into the prefix blob region, one per subset plus the end.
        let mut offset = 0u64;
        for key in self.quantiles.keys() {
            binfmt::put_u64(&mut buf, offset);
            if let Some(prefix) = self.prefixes.get(key) {
                offset += (4 + prefix.len() * prefix_entry_bytes(key.len())) as u64;
            } else {
                offset += 4;
            }
        }
        binfmt::put_u64(&mut buf, offset);
        let offsets_bytes = 8 * (self.quantiles.len() + 1);

        let mut prefix_bytes_by_size = [0usize; MAX_SUBSET_SIZE];
        for key in self.quantiles.keys() {
            let before = buf.len();
            match self.prefixes.get(key) {
                Some(prefix) => {
                    binfmt::put_u32(&mut buf, prefix.len() as u32);
                    for i in 0..prefix.len() {
                        binfmt::put_u32(&mut buf, prefix.doc(i));
                        for &s in prefix.term_scores(i) {
                            binfmt::put_u16(&mut buf, s);
                        }
                    }
                }
                None => binfmt::put_u32(&mut buf, 0),
            }
            prefix_bytes_by_size[key.len() - 1] += buf.len() - before;
        }

        let sealed = binfmt::seal(buf);
        let report = StoreSizeReport {
            metadata_bytes,
            dictionary_bytes,
            quantile_bytes,
            prefix_offsets_bytes: offsets_bytes,
            prefix_bytes_by_size,
            checksum_bytes: CHECKSUM_LEN,
            total_bytes: sealed.len(),
        };
        (sealed, report)
    }

    pub fn from_bytes(data: &[u8]) -> Result<PrefixStore> {
        let mut r = Reader::open(data, "store")?;
        r.expect_magic(STORE_MAGIC, "store")?;
        let version = r.u8()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let index_fingerprint = r.u64()?;
        let k_count = r.u8()? as usize;
        let mut k_values = Vec::with_capacity(k_count);
        for _ in 0..k_count {
            k_values.push(r.u32()?);
        }
        if k_values.is_empty() || k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("store k grid must be ascending and non-empty".into()));
        }
        let policy_name = r.str()?;
        let max_subset_size = r.u8()? as usize;
        if max_subset_size > MAX_SUBSET_SIZE {
            return Err(Error::Format(format!(
                "max subset size {max_subset_size} exceeds {MAX_SUBSET_SIZE}"
            )));
        }
        let subset_count = r.u32()? as usize;

        let mut keys: Vec<SubsetKey> = Vec::with_capacity(subset_count);
        for _ in 0..subset_count {
            let len = r.u8()? as usize;
            if len == 0 || len > max_subset_size {
                return Err(Error::Format("subset size out of range".into()));
            }
            let mut terms = Vec::with_capacity(len);
            for _ in 0..len {
                terms.push(r.u32()?);
            }
            if terms.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format("subset terms must be strictly ascending".into()));
            }
            let key = SubsetKey::new(terms).map_err(|e| Error::Format(e.to_string()))?;
            if let Some(last) = keys.last() {
                if *last >= key {
                    return Err(Error::Format("subset dictionary must be sorted".into()));
                }
            }
            keys.push(key);
        }

        let mut quantiles = BTreeMap::new();
        for key in &keys {
            let mut thresholds = BTreeMap::new();
            for &k in &k_values {
                thresholds.insert(k, r.u32()? as Score);
            }
            let record = QuantileRecord { thresholds };
            record.validate(&k_values)?;
            quantiles.insert(key.clone(), record);
        }

        let mut offsets = Vec::with_capacity(subset_count + 1);
        for _ in 0..=subset_count {
            offsets.push(r.u64()?);
        }
        let blob_start = r.position();
        let mut prefixes = BTreeMap::new();
        for (i, key) in keys.iter().enumerate() {
            if r.position() - blob_start != offsets[i] as usize {
                return Err(Error::Format("bad prefix offset".into()));
            }
            let count = r.u32()? as usize;
            if count == 0 {
                continue;
            }
            let mut docs = Vec::with_capacity(count);
            let mut scores = Vec::with_capacity(count * key.len());
            for _ in 0..count {
                docs.push(r.u32()?);
                for _ in 0..key.len() {
                    scores.push(r.u16()?);
                }
            }
            let prefix = Prefix {
                subset_len: key.len(),
                docs,
                scores,
            };
            prefix.validate()?;
            prefixes.insert(key.clone(), prefix);
        }
        if r.position() - blob_start != *offsets.last().unwrap() as usize {
            return Err(Error::Format("prefix blob length mismatch".into()));
        }
        r.finish("store")?;

        Ok(PrefixStore {
            k_values,
            policy_name,
            index_fingerprint,
            max_subset_size,
            quantiles,
            prefixes,
        })
    }
}

fn combination_count(n: usize, max_size: usize) -> u64 {
    let mut total = 0u64;
    let mut c = 1u64;
    for i in 1..=max_size.min(n) {
        c = c.saturating_mul((n - i + 1) as u64) / i as u64;
        total = total.saturating_add(c);
    }
    total
}

/// Exact byte counts of each serialized store section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreSizeReport {
    pub metadata_bytes: usize,
    pub dictionary_bytes: usize,
    pub quantile_bytes: usize,
    pub prefix_offsets_bytes: usize,
    /// Indexed by subset size - 1; includes each blob's entry-count header.
    pub prefix_bytes_by_size: [usize; MAX_SUBSET_SIZE],
    pub checksum_bytes: usize,
    pub total_bytes: usize,
}

impl StoreSizeReport {
    pub fn prefix_bytes_total(&self) -> usize {
        self.prefix_bytes_by_size.iter().sum()
    }
}

impl std::fmt::Display for StoreSizeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "metadata        {:>12} B", self.metadata_bytes)?;
        writeln!(f, "dictionary      {:>12} B", self.dictionary_bytes)?;
        writeln!(f, "quantiles       {:>12} B", self.quantile_bytes)?;
        writeln!(f, "prefix offsets  {:>12} B", self.prefix_offsets_bytes)?;
        for (i, bytes) in self.prefix_bytes_by_size.iter().enumerate() {
            writeln!(f, "prefixes size {} {:>12} B", i + 1, bytes)?;
        }
        writeln!(f, "checksum        {:>12} B", self.checksum_bytes)?;
        write!(f, "total           {:>12} B", self.total_bytes)
    }
}

/// Builds quantile records and conjunctive prefixes for every catalog
/// subset. Subsets referencing terms outside the index are skipped and
/// counted. Build parallelizes across subsets.
pub fn build_store(
    index: &ImpactIndex,
    catalog: &[CatalogEntry],
    k_values: &[u32],
) -> Result<StoreBuild> {
    let mut store = PrefixStore::new(k_values.to_vec(), "custom", index.fingerprint())?;
    let k_values = store.k_values.clone();
    let max_k = *k_values.last().unwrap() as usize;

    // Deduplicate by key, keeping the deepest request.
    let mut wanted: BTreeMap<&SubsetKey, u32> = BTreeMap::new();
    let mut skipped = 0u32;
    for entry in catalog {
        if entry.key.terms().iter().any(|&t| t >= index.term_count()) {
            skipped += 1;
            continue;
        }
        let depth = wanted.entry(&entry.key).or_insert(0);
        *depth = (*depth).max(entry.depth);
    }

    let built: Vec<(SubsetKey, QuantileRecord, Option<Prefix>)> = wanted
        .par_iter()
        .map(|(&key, &depth)| {
            let (record, prefix) = build_subset(index, key, depth as usize, &k_values, max_k);
            (key.clone(), record, prefix)
        })
        .collect();

    for (key, record, prefix) in built {
        store.insert_subset(key, record, prefix)?;
    }
    Ok(StoreBuild {
        store,
        skipped_subsets: skipped,
    })
}

fn build_subset(
    index: &ImpactIndex,
    key: &SubsetKey,
    depth: usize,
    k_values: &[u32],
    max_k: usize,
) -> (QuantileRecord, Option<Prefix>) {
    // Disjunctive quantiles: th(s, k) over all documents.
    let query = Query::from_term_ids(index, key.terms().iter().copied())
        .expect("catalog terms were bounds-checked");
    let topk = engine::exact_topk(index, &query, max_k);
    let mut thresholds = BTreeMap::new();
    for &k in k_values {
        let th = topk
            .entries
            .get(k as usize - 1)
            .map_or(0, |&(_, score)| score);
        thresholds.insert(k, th);
    }

    // Conjunctive prefix: documents containing every subset term.
    let mut entries = conjunctive_entries(index, key.terms());
    entries.sort_unstable_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    entries.truncate(depth);
    let prefix = if entries.is_empty() {
        None
    } else {
        let mut docs = Vec::with_capacity(entries.len());
        let mut scores = Vec::with_capacity(entries.len() * key.len());
        for (_, doc, term_scores) in &entries {
            docs.push(*doc);
            scores.extend_from_slice(&term_scores[..key.len()]);
        }
        Some(Prefix {
            subset_len: key.len(),
            docs,
            scores,
        })
    };
    (QuantileRecord { thresholds }, prefix)
}

/// Intersects the subset's posting lists, returning
/// (total, doc, per-term scores) for every document containing all terms.
fn conjunctive_entries(
    index: &ImpactIndex,
    terms: &[TermId],
) -> Vec<(Score, DocId, [Impact; MAX_SUBSET_SIZE])> {
    let mut lists: Vec<&[crate::index::Posting]> = terms
        .iter()
        .map(|&t| index.list(t).postings.as_slice())
        .collect();
    // Drive by the shortest list.
    let driver = (0..lists.len())
        .min_by_key(|&i| lists[i].len())
        .expect("subset is non-empty");
    let driver_list = lists[driver];

    let mut out = Vec::new();
    let mut positions = vec![0usize; lists.len()];
    'docs: for posting in driver_list {
        let doc = posting.doc;
        let mut scores = [0 as Impact; MAX_SUBSET_SIZE];
        for (i, list) in lists.iter_mut().enumerate() {
            if i == driver {
                scores[i] = posting.impact;
                continue;
            }
            let pos = positions[i] + list[positions[i]..].partition_point(|p| p.doc < doc);
            positions[i] = pos;
            if pos >= list.len() || list[pos].doc != doc {
                continue 'docs;
            }
            scores[i] = list[pos].impact;
        }
        let total: Score = scores[..terms.len()].iter().map(|&s| s as Score).sum();
        out.push((total, doc, scores));
    }
    out
}
