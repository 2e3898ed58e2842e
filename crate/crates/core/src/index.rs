//! Quantized impact index: per-term docID-ascending posting lists with
//! integer impacts, plus corpus ingestion, precomputed-impact loading,
//! document sampling, and the `TKIX` binary container.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::binfmt::{self, Reader};
use crate::error::{Error, Result};
use crate::hash::{mix64, Fingerprinter};
use crate::scoring::{CollectionStats, QuantizationMeta, ScoringModel, TermStats};
use crate::text::tokenize;

/// Dense 0-based internal document identifier.
pub type DocId = u32;
/// Dense 0-based identifier into the term dictionary.
pub type TermId = u32;
/// Quantized term impact, always in [1, 65535]. Zero-impact postings are
/// never stored.
pub type Impact = u16;
/// Additive document score: a sum of impacts, exact in integer arithmetic.
pub type Score = u64;

const INDEX_MAGIC: &[u8; 4] = b"TKIX";
const INDEX_VERSION: u8 = 1;

/// Queries keep at most this many distinct index terms (first occurrence
/// wins); accumulator term masks are fixed-width.
pub const MAX_QUERY_TERMS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: DocId,
    pub impact: Impact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostingList {
    pub term: TermId,
    /// Strictly ascending by `doc`.
    pub postings: Vec<Posting>,
    pub max_impact: Impact,
}

impl PostingList {
    fn from_postings(term: TermId, postings: Vec<Posting>) -> Self {
        let max_impact = postings.iter().map(|p| p.impact).max().unwrap_or(0);
        PostingList {
            term,
            postings,
            max_impact,
        }
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }
}

/// Immutable after construction; concurrent readers need no synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactIndex {
    term_ids: HashMap<String, TermId>,
    term_names: Vec<String>,
    lists: Vec<PostingList>,
    document_count: u32,
    doc_names: Vec<String>,
    quantization: QuantizationMeta,
}

impl ImpactIndex {
    pub fn document_count(&self) -> u32 {
        self.document_count
    }

    pub fn term_count(&self) -> u32 {
        self.lists.len() as u32
    }

    pub fn total_postings(&self) -> u64 {
        self.lists.iter().map(|l| l.len() as u64).sum()
    }

    pub fn quantization(&self) -> &QuantizationMeta {
        &self.quantization
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_ids.get(term).copied()
    }

    pub fn term_name(&self, term: TermId) -> &str {
        &self.term_names[term as usize]
    }

    pub fn doc_name(&self, doc: DocId) -> &str {
        &self.doc_names[doc as usize]
    }

    pub fn list(&self, term: TermId) -> &PostingList {
        &self.lists[term as usize]
    }

    pub fn lists(&self) -> &[PostingList] {
        &self.lists
    }

    /// Impact of `(term, doc)` if that posting exists. Binary search;
    /// observationally equivalent to a linear scan of the list.
    pub fn lookup(&self, term: TermId, doc: DocId) -> Option<Impact> {
        let postings = &self.list(term).postings;
        postings
            .binary_search_by_key(&doc, |p| p.doc)
            .ok()
            .map(|i| postings[i].impact)
    }

    /// Element-wise equal to repeated `lookup`, executed as one forward pass
    /// with skipping. `docs` must be strictly ascending.
    pub fn batch_lookup(&self, term: TermId, docs: &[DocId]) -> Result<Vec<Option<Impact>>> {
        if docs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "batch_lookup requires strictly ascending docIDs".into(),
            ));
        }
        let postings = &self.list(term).postings;
        let mut out = Vec::with_capacity(docs.len());
        let mut pos = 0usize;
        for &doc in docs {
            pos += postings[pos..].partition_point(|p| p.doc < doc);
            if pos < postings.len() && postings[pos].doc == doc {
                out.push(Some(postings[pos].impact));
                pos += 1;
            } else {
                out.push(None);
            }
        }
        Ok(out)
    }

    /// Largest impact in the term's list; the MaxScore upper bound.
    pub fn max_impact(&self, term: TermId) -> Impact {
        self.list(term).max_impact
    }

    /// Deterministic document sample: doc `d` is kept iff
    /// `mix64(seed, d) / 2^64 < rate`. Kept documents are renumbered densely
    /// in order; terms left with empty lists are dropped from the dictionary.
    pub fn sample(&self, rate: f64, seed: u64) -> Result<ImpactIndex> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Argument(format!(
                "sample rate must be in (0, 1], got {rate}"
            )));
        }
        let keep_all = rate >= 1.0;
        let threshold = (rate * 2f64.powi(64)) as u64;

        let mut new_ids: Vec<Option<DocId>> = vec![None; self.document_count as usize];
        let mut doc_names = Vec::new();
        for doc in 0..self.document_count {
            if keep_all || mix64(seed, doc as u64) < threshold {
                new_ids[doc as usize] = Some(doc_names.len() as DocId);
                doc_names.push(self.doc_names[doc as usize].clone());
            }
        }

        let mut term_ids = HashMap::new();
        let mut term_names = Vec::new();
        let mut lists = Vec::new();
        for list in &self.lists {
            let postings: Vec<Posting> = list
                .postings
                .iter()
                .filter_map(|p| {
                    new_ids[p.doc as usize].map(|doc| Posting {
                        doc,
                        impact: p.impact,
                    })
                })
                .collect();
            if postings.is_empty() {
                continue;
            }
            let term = lists.len() as TermId;
            let name = self.term_names[list.term as usize].clone();
            term_ids.insert(name.clone(), term);
            term_names.push(name);
            lists.push(PostingList::from_postings(term, postings));
        }

        let sampled = ImpactIndex {
            term_ids,
            term_names,
            lists,
            document_count: doc_names.len() as u32,
            doc_names,
            quantization: self.quantization,
        };
        sampled.validate()?;
        Ok(sampled)
    }

    /// Stable 64-bit identity of this index, stored in prefix stores to
    /// reject store/index mixups.
    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprinter::new();
        fp.push(self.document_count as u64);
        fp.push(self.term_count() as u64);
        fp.push(self.total_postings());
        match self.quantization.scorer {
            ScoringModel::Bm25 { k1, b } => {
                fp.push(0);
                fp.push(k1.to_bits());
                fp.push(b.to_bits());
            }
            ScoringModel::Qld { mu } => {
                fp.push(1);
                fp.push(mu.to_bits());
            }
            ScoringModel::Precomputed => fp.push(2),
        }
        fp.push(self.quantization.bits as u64);
        fp.push(self.quantization.global_max_raw_score.to_bits());
        fp.finish()
    }

    /// Checks the structural invariants: dense non-empty lists, strictly
    /// ascending docIDs, in-range impacts, correct max_impact, aligned names.
    pub fn validate(&self) -> Result<()> {
        if self.doc_names.len() != self.document_count as usize {
            return Err(Error::Format("doc name table length mismatch".into()));
        }
        if self.term_names.len() != self.lists.len() || self.term_ids.len() != self.lists.len() {
            return Err(Error::Format("term dictionary length mismatch".into()));
        }
        self.quantization.validate()?;
        for (id, list) in self.lists.iter().enumerate() {
            if list.term != id as TermId {
                return Err(Error::Format(format!("list {id} has term id {}", list.term)));
            }
            if list.postings.is_empty() {
                return Err(Error::Format(format!("term {id} has an empty list")));
            }
            let mut max = 0;
            let mut prev: Option<DocId> = None;
            for p in &list.postings {
                if p.impact == 0 {
                    return Err(Error::Range(format!("zero impact posting in term {id}")));
                }
                if p.doc >= self.document_count {
                    return Err(Error::Format(format!(
                        "docID {} out of range in term {id}",
                        p.doc
                    )));
                }
                if let Some(prev) = prev {
                    if p.doc <= prev {
                        return Err(Error::Format(format!(
                            "non-ascending docIDs in term {id}"
                        )));
                    }
                }
                prev = Some(p.doc);
                max = max.max(p.impact);
            }
            if max != list.max_impact {
                return Err(Error::Format(format!("stale max_impact for term {id}")));
            }
        }
        Ok(())
    }

    /// Builds an index directly from per-term posting lists; impacts are
    /// taken verbatim (scorer = precomputed). Intended for programmatic
    /// construction in tests and bindings.
    pub fn from_term_lists(
        document_count: u32,
        term_lists: &[(&str, Vec<(DocId, Impact)>)],
    ) -> Result<ImpactIndex> {
        let mut term_ids = HashMap::new();
        let mut term_names = Vec::new();
        let mut lists = Vec::new();
        for (name, postings) in term_lists {
            let term = lists.len() as TermId;
            if term_ids.insert(name.to_string(), term).is_some() {
                return Err(Error::Argument(format!("duplicate term {name:?}")));
            }
            term_names.push(name.to_string());
            let postings: Vec<Posting> = postings
                .iter()
                .map(|&(doc, impact)| Posting { doc, impact })
                .collect();
            lists.push(PostingList::from_postings(term, postings));
        }
        let index = ImpactIndex {
            term_ids,
            term_names,
            lists,
            document_count,
            doc_names: (0..document_count).map(|d| d.to_string()).collect(),
            quantization: QuantizationMeta::precomputed(),
        };
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ImpactIndex> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// `TKIX` container, version 1; layout documented in docs/FORMATS.md.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        binfmt::put_u8(&mut buf, INDEX_VERSION);
        match self.quantization.scorer {
            ScoringModel::Bm25 { k1, b } => {
                binfmt::put_u8(&mut buf, 0);
                binfmt::put_f64(&mut buf, k1);
                binfmt::put_f64(&mut buf, b);
            }
            ScoringModel::Qld { mu } => {
                binfmt::put_u8(&mut buf, 1);
                binfmt::put_f64(&mut buf, mu);
            }
            ScoringModel::Precomputed => binfmt::put_u8(&mut buf, 2),
        }
        binfmt::put_u8(&mut buf, self.quantization.bits);
        binfmt::put_f64(&mut buf, self.quantization.global_max_raw_score);

        binfmt::put_u32(&mut buf, self.document_count);
        for name in &self.doc_names {
            binfmt::put_str(&mut buf, name);
        }
        binfmt::put_u32(&mut buf, self.term_count());
        for name in &self.term_names {
            binfmt::put_str(&mut buf, name);
        }
        // Offsets into the postings blob, one per term plus the end offset.
        let mut offset = 0u64;
        for list in &self.lists {
            binfmt::put_u64(&mut buf, offset);
            offset += 4 + 6 * list.len() as u64;
        }
        binfmt::put_u64(&mut buf, offset);
        for list in &self.lists {
            binfmt::put_u32(&mut buf, list.len() as u32);
            for p in &list.postings {
                binfmt::put_u32(&mut buf, p.doc);
                binfmt::put_u16(&mut buf, p.impact);
            }
        }
        binfmt::seal(buf)
    }

    pub fn from_bytes(data: &[u8]) -> Result<ImpactIndex> {
        let mut r = Reader::open(data, "index")?;
        r.expect_magic(INDEX_MAGIC, "index")?;
        let version = r.u8()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let scorer = match r.u8()? {
            0 => ScoringModel::Bm25 {
                k1: r.f64()?,
                b: r.f64()?,
            },
            1 => ScoringModel::Qld { mu: r.f64()? },
            2 => ScoringModel::Precomputed,
            tag => return Err(Error::Format(format!("unknown scorer tag {tag}"))),
        };
        let bits = r.u8()?;
        let global_max_raw_score = r.f64()?;
        let quantization = QuantizationMeta {
            scorer,
            bits,
            global_max_raw_score,
        };

        let document_count = r.u32()?;
        let mut doc_names = Vec::with_capacity(document_count as usize);
        for _ in 0..document_count {
            doc_names.push(r.str()?);
        }
        let term_count = r.u32()?;
        let mut term_names = Vec::with_capacity(term_count as usize);
        for _ in 0..term_count {
            term_names.push(r.str()?);
        }
        let mut offsets = Vec::with_capacity(term_count as usize + 1);
        for _ in 0..=term_count {
            offsets.push(r.u64()?);
        }
        let blob_start = r.position();
        let mut term_ids = HashMap::new();
        let mut lists = Vec::with_capacity(term_count as usize);
        for term in 0..term_count {
            if r.position() - blob_start != offsets[term as usize] as usize {
                return Err(Error::Format(format!("bad list offset for term {term}")));
            }
            let count = r.u32()?;
            let mut postings = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let doc = r.u32()?;
                let impact = r.u16()?;
                postings.push(Posting { doc, impact });
            }
            term_ids.insert(term_names[term as usize].clone(), term);
            lists.push(PostingList::from_postings(term, postings));
        }
        if r.position() - blob_start != *offsets.last().unwrap() as usize {
            return Err(Error::Format("postings blob length mismatch".into()));
        }
        r.finish("index")?;

        let index = ImpactIndex {
            term_ids,
            term_names,
            lists,
            document_count,
            doc_names,
            quantization,
        };
        index.validate()?;
        Ok(index)
    }
}

/// A parsed query: the set of distinct index terms it contains, sorted
/// ascending. Unknown terms are dropped and counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    terms: Vec<TermId>,
    original_length: u32,
    unknown_terms: u32,
}

impl Query {
    pub fn parse(index: &ImpactIndex, text: &str) -> Query {
        let tokens = tokenize(text);
        let original_length = tokens.len() as u32;
        let mut terms: Vec<TermId> = Vec::new();
        let mut unknown: Vec<String> = Vec::new();
        for tok in tokens {
            match index.term_id(&tok) {
                Some(t) => {
                    if !terms.contains(&t) && terms.len() < MAX_QUERY_TERMS {
                        terms.push(t);
                    }
                }
                None => {
                    if !unknown.contains(&tok) {
                        unknown.push(tok);
                    }
                }
            }
        }
        let unknown_terms = unknown.len() as u32;
        terms.sort_unstable();
        Query {
            terms,
            original_length,
            unknown_terms,
        }
    }

    /// Builds a query from term ids (deduplicated, sorted). Ids must be valid
    /// for `index`.
    pub fn from_term_ids(index: &ImpactIndex, ids: impl IntoIterator<Item = TermId>) -> Result<Query> {
        let mut terms: Vec<TermId> = ids.into_iter().collect();
        terms.sort_unstable();
        terms.dedup();
        if let Some(&bad) = terms.iter().find(|&&t| t >= index.term_count()) {
            return Err(Error::Argument(format!("term id {bad} out of range")));
        }
        if terms.len() > MAX_QUERY_TERMS {
            return Err(Error::Argument(format!(
                "queries are limited to {MAX_QUERY_TERMS} distinct terms"
            )));
        }
        let original_length = terms.len() as u32;
        Ok(Query {
            terms,
            original_length,
            unknown_terms: 0,
        })
    }

    /// Distinct resolved terms, ascending.
    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn original_length(&self) -> u32 {
        self.original_length
    }

    pub fn unknown_terms(&self) -> u32 {
        self.unknown_terms
    }
}

/// Builds a quantized impact index from a TSV corpus
/// (`external_docid<TAB>text`, one document per line).
pub fn build_index(path: &Path, scorer: ScoringModel, quant_bits: u8) -> Result<ImpactIndex> {
    let file = fs::File::open(path)?;
    build_index_from_tsv(BufReader::new(file), scorer, quant_bits)
}

pub fn build_index_from_tsv(
    reader: impl BufRead,
    scorer: ScoringModel,
    quant_bits: u8,
) -> Result<ImpactIndex> {
    if matches!(scorer, ScoringModel::Precomputed) {
        return Err(Error::Argument(
            "precomputed impacts are loaded with load_precomputed, not built".into(),
        ));
    }

    let mut term_ids: HashMap<String, TermId> = HashMap::new();
    let mut term_names: Vec<String> = Vec::new();
    // Per term: (doc, tf), ascending by doc because documents arrive in order.
    let mut term_tfs: Vec<Vec<(DocId, u32)>> = Vec::new();
    let mut term_cf: Vec<u64> = Vec::new();
    let mut doc_names: Vec<String> = Vec::new();
    let mut doc_lens: Vec<u32> = Vec::new();

    for (line_idx, line) in reader.lines().enumerate() {
        let line = line?;
        let (name, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(line_idx + 1, "missing tab separator"))?;
        let doc = doc_names.len() as DocId;
        doc_names.push(name.to_string());
        let tokens = tokenize(text);
        doc_lens.push(tokens.len() as u32);

        let mut local: HashMap<TermId, u32> = HashMap::new();
        for tok in tokens {
            let next_id = term_names.len() as TermId;
            let id = *term_ids.entry(tok.clone()).or_insert_with(|| {
                term_names.push(tok);
                term_tfs.push(Vec::new());
                term_cf.push(0);
                next_id
            });
            *local.entry(id).or_insert(0) += 1;
        }
        for (id, tf) in local {
            term_tfs[id as usize].push((doc, tf));
            term_cf[id as usize] += tf as u64;
        }
    }

    if doc_names.is_empty() {
        return Err(Error::parse(0, "empty corpus"));
    }

    let total_tokens: u64 = doc_lens.iter().map(|&l| l as u64).sum();
    let stats = CollectionStats {
        document_count: doc_names.len() as u64,
        total_tokens,
        avg_doc_len: total_tokens as f64 / doc_names.len() as f64,
    };

    // Per-term tf lists were appended in doc order but may interleave; sort
    // to be safe against future multi-threaded ingestion.
    for tfs in &mut term_tfs {
        tfs.sort_unstable_by_key(|&(doc, _)| doc);
    }

    // Pass 1: global maximum raw score, the quantizer's scale anchor.
    let mut global_max = 0f64;
    for (id, tfs) in term_tfs.iter().enumerate() {
        let ts = TermStats {
            document_frequency: tfs.len() as u64,
            collection_frequency: term_cf[id],
        };
        for &(doc, tf) in tfs {
            let raw = scorer.raw_score(&stats, &ts, tf, doc_lens[doc as usize]);
            if raw > global_max {
                global_max = raw;
            }
        }
    }

    let quantization = QuantizationMeta {
        scorer,
        bits: quant_bits,
        global_max_raw_score: global_max,
    };
    quantization.validate()?;

    // Pass 2: quantize into posting lists.
    let mut lists = Vec::with_capacity(term_tfs.len());
    for (id, tfs) in term_tfs.iter().enumerate() {
        let ts = TermStats {
            document_frequency: tfs.len() as u64,
            collection_frequency: term_cf[id],
        };
        let postings = tfs
            .iter()
            .map(|&(doc, tf)| {
                let raw = scorer.raw_score(&stats, &ts, tf, doc_lens[doc as usize]);
                Posting {
                    doc,
                    impact: quantization.quantize(raw),
                }
            })
            .collect();
        lists.push(PostingList::from_postings(id as TermId, postings));
    }

    let index = ImpactIndex {
        term_ids,
        term_names,
        lists,
        document_count: doc_names.len() as u32,
        doc_names,
        quantization,
    };
    index.validate()?;
    Ok(index)
}

/// Loads precomputed impacts from the exchange format
/// (`term<TAB>docid:impact docid:impact ...`, docIDs ascending per line).
/// File docIDs are taken as the internal ids; `document_count` is the
/// largest id seen plus one.
pub fn load_precomputed(path: &Path) -> Result<ImpactIndex> {
    let file = fs::File::open(path)?;
    load_precomputed_from_reader(BufReader::new(file))
}

pub fn load_precomputed_from_reader(reader: impl BufRead) -> Result<ImpactIndex> {
    let mut term_ids: HashMap<String, TermId> = HashMap::new();
    let mut term_names = Vec::new();
    let mut lists: Vec<PostingList> = Vec::new();
    let mut max_doc: Option<DocId> = None;

    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (term, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(line_no, "missing tab separator"))?;
        if term_ids.contains_key(term) {
            return Err(Error::parse(line_no, format!("duplicate term {term:?}")));
        }
        let mut postings = Vec::new();
        for pair in rest.split_whitespace() {
            let (doc_s, impact_s) = pair
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("malformed posting {pair:?}")))?;
            let doc: DocId = doc_s
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad docID {doc_s:?}")))?;
            let impact: u32 = impact_s
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad impact {impact_s:?}")))?;
            if impact == 0 || impact > u16::MAX as u32 {
                return Err(Error::Range(format!(
                    "line {line_no}: impact {impact} outside [1, 65535]"
                )));
            }
            if let Some(last) = postings.last() {
                let last: &Posting = last;
                if doc <= last.doc {
                    return Err(Error::Format(format!(
                        "line {line_no}: non-ascending docIDs ({} then {doc})",
                        last.doc
                    )));
                }
            }
            postings.push(Posting {
                doc,
                impact: impact as Impact,
            });
        }
        if postings.is_empty() {
            return Err(Error::parse(line_no, "term line with no postings"));
        }
        max_doc = max_doc.max(postings.last().map(|p| p.doc));
        let id = lists.len() as TermId;
        term_ids.insert(term.to_string(), id);
        term_names.push(term.to_string());
        lists.push(PostingList::from_postings(id, postings));
    }

    let document_count = max_doc.map_or(0, |d| d + 1);
    let index = ImpactIndex {
        term_ids,
        term_names,
        lists,
        document_count,
        doc_names: (0..document_count).map(|d| d.to_string()).collect(),
        quantization: QuantizationMeta::precomputed(),
    };
    index.validate()?;
    Ok(index)
}
