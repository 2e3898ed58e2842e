//! The estimation ladder. Each method trades a little more work for a
//! tighter safe (never overestimating) top-k threshold estimate:
//!
//! * quantile: max stored th(s, k) over subsets of the query;
//! * remove duplicates: merge matching prefixes by descending total and
//!   report the k-th distinct docID's score;
//! * combine scores: accumulate per-term scores of the same docID across
//!   prefixes, never counting a term twice;
//! * lookups: fetch missing term scores from the inverted index for the
//!   best accumulators, within a lookup budget.
//!
//! A sampling reduction runs the same ladder on a document sample at a
//! reduced k', bounding the overestimate probability by a binomial tail.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::index::{DocId, ImpactIndex, Query, Score};
use crate::store::{Prefix, PrefixStore};

/// Estimation method, as named in CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Quantile,
    RemoveDuplicates,
    CombineScores,
    Lookups,
    Sampled,
}

impl Method {
    pub fn csv_name(&self) -> &'static str {
        match self {
            Method::Quantile => "quantile",
            Method::RemoveDuplicates => "rd",
            Method::CombineScores => "cs",
            Method::Lookups => "lookups",
            Method::Sampled => "sampled",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Method::Quantile),
            "rd" => Ok(Method::RemoveDuplicates),
            "cs" => Ok(Method::CombineScores),
            "lookups" => Ok(Method::Lookups),
            "sampled" => Ok(Method::Sampled),
            other => Err(Error::Argument(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.csv_name())
    }
}

/// Work limits: `ab` caps processed prefix entries, `lb` caps accumulators
/// that receive index lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub ab: usize,
    pub lb: usize,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.lb > self.ab {
            return Err(Error::Argument(format!(
                "lookup budget {} exceeds access budget {} (lookup candidates come from processed accumulators)",
                self.lb, self.ab
            )));
        }
        Ok(())
    }
}

/// A threshold estimate with budget-usage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Estimate {
    pub value: Score,
    pub method: Method,
    /// Prefix entries actually processed.
    pub ab_used: usize,
    /// Accumulators that received at least one index lookup.
    pub lb_used: usize,
    /// True when the quantile backup supplied the final value.
    pub backed_by_quantile: bool,
}

impl Estimate {
    fn raw(method: Method, value: Score, ab_used: usize, lb_used: usize) -> Estimate {
        Estimate {
            value,
            method,
            ab_used,
            lb_used,
            backed_by_quantile: false,
        }
    }
}

/// Per-document running score with a record of which query terms have
/// contributed; each term's score is added at most once.
#[derive(Debug, Clone, Copy)]
pub struct Accumulator {
    pub doc: DocId,
    pub partial: Score,
    known: u128,
}

impl Accumulator {
    pub fn knows(&self, term_position: usize) -> bool {
        self.known & (1u128 << term_position) != 0
    }

    pub fn known_count(&self) -> u32 {
        self.known.count_ones()
    }
}

/// Maximum stored th(s, k) over the stored subsets contained in the query;
/// 0 when none match. Errors when k is not in the store's grid.
pub fn estimate_quantile(store: &PrefixStore, query: &Query, k: usize) -> Result<Estimate> {
    let value = quantile_value(store, query, k).ok_or_else(|| {
        Error::Argument(format!("k = {k} is not in the store's k grid {:?}", store.k_values()))
    })?;
    Ok(Estimate::raw(Method::Quantile, value, 0, 0))
}

fn quantile_value(store: &PrefixStore, query: &Query, k: usize) -> Option<Score> {
    let k = u32::try_from(k).ok()?;
    if !store.k_values().contains(&k) {
        return None;
    }
    let mut best = 0;
    for m in store.matching_subsets(query) {
        if let Some(th) = store.th(&m.key, k) {
            best = best.max(th);
        }
    }
    Some(best)
}

/// One prefix entry in the global descending merge. `BinaryHeap` pops the
/// greatest item, so "greater" means higher total, then smaller docID, then
/// smaller subset, then lower source index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct MergeItem {
    total: Score,
    doc: DocId,
    size: u8,
    src: u32,
    pos: u32,
}

impl Ord for MergeItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total
            .cmp(&other.total)
            .then_with(|| other.doc.cmp(&self.doc))
            .then_with(|| other.size.cmp(&self.size))
            .then_with(|| other.src.cmp(&self.src))
    }
}

impl PartialOrd for MergeItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Streams the matching prefixes' entries in globally descending total
/// order, up to the access budget.
struct PrefixMerge<'a> {
    sources: Vec<&'a Prefix>,
    /// Positions of each source's subset terms within the query, aligned
    /// with the prefix's per-term score order.
    term_positions: Vec<[u8; 4]>,
    heap: BinaryHeap<MergeItem>,
    popped: usize,
}

impl<'a> PrefixMerge<'a> {
    fn new(store: &'a PrefixStore, query: &Query) -> PrefixMerge<'a> {
        let mut sources = Vec::new();
        let mut term_positions = Vec::new();
        for m in store.matching_subsets(query) {
            if !m.has_prefix {
                continue;
            }
            let prefix = store.prefix(&m.key).expect("match reported a prefix");
            let mut positions = [0u8; 4];
            for (i, t) in m.key.terms().iter().enumerate() {
                let pos = query
                    .terms()
                    .binary_search(t)
                    .expect("matching subset term is in the query");
                positions[i] = pos as u8;
            }
            sources.push(prefix);
            term_positions.push(positions);
        }
        let mut heap = BinaryHeap::with_capacity(sources.len());
        for (src, prefix) in sources.iter().enumerate() {
            if !prefix.is_empty() {
                heap.push(MergeItem {
                    total: prefix.total(0),
                    doc: prefix.doc(0),
                    size: prefix.subset_len() as u8,
                    src: src as u32,
                    pos: 0,
                });
            }
        }
        PrefixMerge {
            sources,
            term_positions,
            heap,
            popped: 0,
        }
    }

    fn next(&mut self) -> Option<MergeItem> {
        let item = self.heap.pop()?;
        self.popped += 1;
        let prefix = self.sources[item.src as usize];
        let next_pos = item.pos as usize + 1;
        if next_pos < prefix.len() {
            self.heap.push(MergeItem {
                total: prefix.total(next_pos),
                doc: prefix.doc(next_pos),
                size: item.size,
                src: item.src,
                pos: next_pos as u32,
            });
        }
        Some(item)
    }
}

/// Merges matching prefixes in descending total order until k distinct
/// docIDs are seen; the k-th one's total is the estimate. 0 when the budget
/// or the prefixes run out first (the quantile backup then supplies the
/// estimate).
pub fn estimate_remove_duplicates(
    store: &PrefixStore,
    query: &Query,
    k: usize,
    ab: usize,
) -> Estimate {
    let mut merge = PrefixMerge::new(store, query);
    let mut seen: HashSet<DocId> = HashSet::new();
    let mut value = 0;
    while merge.popped < ab {
        let Some(item) = merge.next() else { break };
        if seen.insert(item.doc) && seen.len() == k {
            value = item.total;
            break;
        }
    }
    Estimate::raw(Method::RemoveDuplicates, value, merge.popped, 0)
}

struct AccumState {
    partial: Score,
    known: u128,
}

/// Shared core of Combine Scores and Lookups: process up to `ab` entries,
/// folding each entry's term scores into per-document accumulators without
/// ever double-counting a term.
fn combine_accumulators(store: &PrefixStore, query: &Query, ab: usize) -> (Vec<Accumulator>, usize) {
    let mut merge = PrefixMerge::new(store, query);
    let mut accs: HashMap<DocId, AccumState> = HashMap::new();
    #[cfg(debug_assertions)]
    let mut seen_scores: HashMap<(DocId, u8), crate::index::Impact> = HashMap::new();

    while merge.popped < ab {
        let Some(item) = merge.next() else { break };
        let prefix = merge.sources[item.src as usize];
        let positions = &merge.term_positions[item.src as usize];
        let scores = prefix.term_scores(item.pos as usize);
        let acc = accs.entry(item.doc).or_insert(AccumState { partial: 0, known: 0 });
        for (i, &score) in scores.iter().enumerate() {
            let pos = positions[i];
            #[cfg(debug_assertions)]
            {
                // Conflicting stored scores for the same (term, doc) mean a
                // corrupt store; first writer wins in release builds.
                let prev = seen_scores.insert((item.doc, pos), score);
                debug_assert!(
                    prev.is_none_or(|p| p == score),
                    "prefixes disagree on sc(term@{pos}, doc {})",
                    item.doc
                );
            }
            let bit = 1u128 << pos;
            if acc.known & bit == 0 {
                acc.known |= bit;
                acc.partial += score as Score;
            }
        }
    }

    let mut out: Vec<Accumulator> = accs
        .into_iter()
        .map(|(doc, st)| Accumulator {
            doc,
            partial: st.partial,
            known: st.known,
        })
        .collect();
    // Highest partial first, docID ascending on ties.
    out.sort_unstable_by(|a, b| b.partial.cmp(&a.partial).then_with(|| a.doc.cmp(&b.doc)));
    (out, merge.popped)
}

fn kth_partial(accs: &[Accumulator], k: usize) -> Score {
    if k == 0 || accs.len() < k {
        0
    } else {
        accs[k - 1].partial
    }
}

/// Combine Scores: the k-th highest accumulator total after processing up
/// to `ab` prefix entries; 0 when fewer than k accumulators exist. Also
/// returns the accumulator set (highest partial first).
pub fn estimate_combine_scores(
    store: &PrefixStore,
    query: &Query,
    k: usize,
    ab: usize,
) -> (Estimate, Vec<Accumulator>) {
    let (accs, ab_used) = combine_accumulators(store, query, ab);
    let value = kth_partial(&accs, k);
    (
        Estimate::raw(Method::CombineScores, value, ab_used, 0),
        accs,
    )
}

/// Lookups: run Combine Scores, then fetch missing term scores from the
/// index for the `lb` accumulators with the highest partials (docID breaks
/// ties). Lookups per term go docID-ascending in one batch.
pub fn estimate_with_lookups(
    store: &PrefixStore,
    index: &ImpactIndex,
    query: &Query,
    k: usize,
    ab: usize,
    lb: usize,
) -> Estimate {
    let (mut accs, ab_used) = combine_accumulators(store, query, ab);
    let selected = lb.min(accs.len());

    let mut lb_used = 0;
    let full_mask: u128 = if query.is_empty() {
        0
    } else {
        u128::MAX >> (128 - query.len())
    };
    for acc in &accs[..selected] {
        if acc.known != full_mask {
            lb_used += 1;
        }
    }

    if lb_used > 0 {
        for (pos, &term) in query.terms().iter().enumerate() {
            let bit = 1u128 << pos;
            // (doc, accumulator slot) pairs missing this term, docID-ascending.
            let mut wanted: Vec<(DocId, usize)> = accs[..selected]
                .iter()
                .enumerate()
                .filter(|(_, a)| a.known & bit == 0)
                .map(|(i, a)| (a.doc, i))
                .collect();
            if wanted.is_empty() {
                continue;
            }
            wanted.sort_unstable_by_key(|&(doc, _)| doc);
            let docs: Vec<DocId> = wanted.iter().map(|&(doc, _)| doc).collect();
            let found = index
                .batch_lookup(term, &docs)
                .expect("docs are distinct and sorted");
            for ((_, slot), impact) in wanted.into_iter().zip(found) {
                if let Some(impact) = impact {
                    accs[slot].partial += impact as Score;
                    accs[slot].known |= bit;
                }
            }
        }
        accs.sort_unstable_by(|a, b| b.partial.cmp(&a.partial).then_with(|| a.doc.cmp(&b.doc)));
    }

    let value = kth_partial(&accs, k);
    Estimate {
        value,
        method: Method::Lookups,
        ab_used,
        lb_used,
        backed_by_quantile: false,
    }
}

/// Returns the better of the primary estimate and the quantile estimate.
/// When the store does not materialize this k, the primary passes through.
pub fn with_quantile_backup(
    primary: Estimate,
    store: &PrefixStore,
    query: &Query,
    k: usize,
) -> Estimate {
    let quantile = quantile_value(store, query, k).unwrap_or(0);
    if quantile > primary.value {
        Estimate {
            value: quantile,
            backed_by_quantile: true,
            ..primary
        }
    } else {
        primary
    }
}

/// Probability that a top-k' threshold on an s-rate document sample exceeds
/// the full top-k threshold: the binomial tail
/// sum_{i=k'}^{k-1} C(k-1, i) s^i (1-s)^(k-1-i).
///
/// Evaluated exactly with a log-space starting term, so it stays stable for
/// large k. Empty sum (k' >= k) is 0.
pub fn overestimate_probability(k: usize, k_prime: usize, s: f64) -> Result<f64> {
    if k == 0 || k_prime == 0 {
        return Err(Error::Argument("k and k' must be >= 1".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Argument(format!("sample rate must be in (0, 1), got {s}")));
    }
    if k_prime >= k {
        return Ok(0.0);
    }
    let n = k - 1;
    let mut ln_choose = 0.0f64;
    for j in 0..k_prime {
        ln_choose += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
    }
    let mut term =
        (ln_choose + k_prime as f64 * s.ln() + (n - k_prime) as f64 * (1.0 - s).ln()).exp();
    let odds = s / (1.0 - s);
    let mut total = 0.0f64;
    for i in k_prime..k {
        total += term;
        term *= (n - i) as f64 / (i + 1) as f64 * odds;
    }
    Ok(total.min(1.0))
}

/// Smallest k' >= 1 whose overestimate probability is within epsilon;
/// k when no smaller value qualifies. With s = 1 the sample is the whole
/// collection and only k' = k is safe.
pub fn choose_k_prime(k: usize, s: f64, epsilon: f64) -> Result<usize> {
    if k == 0 {
        return Err(Error::Argument("k must be >= 1".into()));
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Argument(format!("sample rate must be in (0, 1], got {s}")));
    }
    if s >= 1.0 {
        return Ok(k);
    }
    for k_prime in 1..k {
        if overestimate_probability(k, k_prime, s)? <= epsilon {
            return Ok(k_prime);
        }
    }
    Ok(k)
}

/// Sampling reduction parameters: estimate a top-k threshold via a top-k'
/// threshold on a rate-s sample, with overestimate probability <= epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    pub rate: f64,
    pub epsilon: f64,
    pub k: usize,
    pub k_prime: usize,
}

impl SamplePlan {
    pub fn new(k: usize, rate: f64, epsilon: f64) -> Result<SamplePlan> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Argument(format!(
                "epsilon must be in (0, 1), got {epsilon}"
            )));
        }
        let k_prime = choose_k_prime(k, rate, epsilon)?;
        Ok(SamplePlan {
            rate,
            epsilon,
            k,
            k_prime,
        })
    }
}

/// Runs the backed Lookups estimator at k' on the sample artifacts. NOT
/// safe: may overestimate the full-collection threshold with probability at
/// most epsilon. `query` must be parsed against the sample index. Degrades
/// to 0 when the sample holds fewer than k' documents.
pub fn estimate_sampled(
    sample_store: &PrefixStore,
    sample_index: &ImpactIndex,
    query: &Query,
    ab: usize,
    lb: usize,
    plan: &SamplePlan,
) -> Estimate {
    if plan.k_prime > sample_index.document_count() as usize {
        return Estimate::raw(Method::Sampled, 0, 0, 0);
    }
    let inner = estimate_with_lookups(sample_store, sample_index, query, plan.k_prime, ab, lb);
    let backed = with_quantile_backup(inner, sample_store, query, plan.k_prime);
    Estimate {
        method: Method::Sampled,
        ..backed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::SubsetKey;
    use crate::index::ImpactIndex;
    use crate::store::QuantileRecord;
    use std::collections::BTreeMap;

    fn record(k_values: &[u32], values: &[Score]) -> QuantileRecord {
        QuantileRecord {
            thresholds: k_values.iter().copied().zip(values.iter().copied()).collect(),
        }
    }

    /// Store for the duplicate-removal scenario: two single-term subsets
    /// whose prefixes jointly hold 10 distinct documents scoring >= 120,
    /// while the best stored top-10 quantile is only 100.
    fn rd_scenario() -> (ImpactIndex, PrefixStore, Query) {
        let idx = ImpactIndex::from_term_lists(
            20,
            &[("t1", vec![(0, 1)]), ("t2", vec![(1, 1)])],
        )
        .unwrap();
        let mut store = PrefixStore::new(vec![10], "test", idx.fingerprint()).unwrap();
        let s1_entries: Vec<(DocId, Vec<u16>)> = vec![
            (0, vec![130]),
            (1, vec![128]),
            (2, vec![126]),
            (3, vec![124]),
            (4, vec![122]),
            (5, vec![120]),
        ];
        let s2_entries: Vec<(DocId, Vec<u16>)> = vec![
            (10, vec![128]),
            (11, vec![127]),
            (12, vec![126]),
            (13, vec![125]),
        ];
        store
            .insert_subset(
                SubsetKey::new(vec![0]).unwrap(),
                record(&[10], &[100]),
                Some(Prefix::from_entries(1, &s1_entries).unwrap()),
            )
            .unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![1]).unwrap(),
                record(&[10], &[90]),
                Some(Prefix::from_entries(1, &s2_entries).unwrap()),
            )
            .unwrap();
        let query = Query::from_term_ids(&idx, [0, 1]).unwrap();
        (idx, store, query)
    }

    #[test]
    fn quantile_takes_max_over_matching_subsets() {
        let (_, store, query) = rd_scenario();
        let est = estimate_quantile(&store, &query, 10).unwrap();
        assert_eq!(est.value, 100);
        assert!(estimate_quantile(&store, &query, 7).is_err());
    }

    #[test]
    fn remove_duplicates_reaches_across_prefixes() {
        let (_, store, query) = rd_scenario();
        // Ten distinct docIDs scoring >= 120 across the two prefixes.
        let est = estimate_remove_duplicates(&store, &query, 10, 100);
        assert_eq!(est.value, 120);
        assert_eq!(est.ab_used, 10);
    }

    #[test]
    fn remove_duplicates_skips_duplicate_docs() {
        let idx = ImpactIndex::from_term_lists(
            8,
            &[("t1", vec![(0, 1)]), ("t2", vec![(1, 1)])],
        )
        .unwrap();
        let mut store = PrefixStore::new(vec![3], "test", idx.fingerprint()).unwrap();
        let s1: Vec<(DocId, Vec<u16>)> = vec![(1, vec![125]), (2, vec![120]), (3, vec![100])];
        let s2: Vec<(DocId, Vec<u16>)> = vec![(2, vec![126]), (4, vec![90])];
        store
            .insert_subset(
                SubsetKey::new(vec![0]).unwrap(),
                record(&[3], &[0]),
                Some(Prefix::from_entries(1, &s1).unwrap()),
            )
            .unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![1]).unwrap(),
                record(&[3], &[0]),
                Some(Prefix::from_entries(1, &s2).unwrap()),
            )
            .unwrap();
        let query = Query::from_term_ids(&idx, [0, 1]).unwrap();
        // Merged: d2@126, d1@125, d2@120 (dup), d3@100 -> third distinct is d3.
        let est = estimate_remove_duplicates(&store, &query, 3, 100);
        assert_eq!(est.value, 100);

        // k = 1 degenerates to the highest total anywhere.
        assert_eq!(estimate_remove_duplicates(&store, &query, 1, 100).value, 126);
    }

    #[test]
    fn remove_duplicates_returns_zero_when_budget_or_prefixes_run_out() {
        let (_, store, query) = rd_scenario();
        assert_eq!(estimate_remove_duplicates(&store, &query, 10, 5).value, 0);
        assert_eq!(estimate_remove_duplicates(&store, &query, 11, 100).value, 0);
    }

    #[test]
    fn combine_scores_counts_each_term_once() {
        let idx = ImpactIndex::from_term_lists(
            4,
            &[("t1", vec![(1, 5)]), ("t2", vec![(1, 4), (2, 3)])],
        )
        .unwrap();
        let mut store = PrefixStore::new(vec![2], "test", idx.fingerprint()).unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![0]).unwrap(),
                record(&[2], &[0]),
                Some(Prefix::from_entries(1, &[(1, vec![5])]).unwrap()),
            )
            .unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![1]).unwrap(),
                record(&[2], &[0]),
                Some(Prefix::from_entries(1, &[(1, vec![4]), (2, vec![3])]).unwrap()),
            )
            .unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![0, 1]).unwrap(),
                record(&[2], &[0]),
                Some(Prefix::from_entries(2, &[(1, vec![5, 4])]).unwrap()),
            )
            .unwrap();
        let query = Query::from_term_ids(&idx, [0, 1]).unwrap();
        let (est, accs) = estimate_combine_scores(&store, &query, 2, 10);
        // d1 = 9 despite three sources carrying its scores, d2 = 3.
        assert_eq!(est.value, 3);
        assert_eq!(accs.len(), 2);
        assert_eq!((accs[0].doc, accs[0].partial), (1, 9));
        assert_eq!((accs[1].doc, accs[1].partial), (2, 3));
    }

    #[test]
    fn combine_scores_on_disjoint_prefixes_is_kth_total() {
        let (_, store, query) = rd_scenario();
        let (est, _) = estimate_combine_scores(&store, &query, 2, 100);
        // Top-2 accumulators are d0@130 and d1/d10@128 (tie): k-th = 128.
        assert_eq!(est.value, 128);
    }

    #[test]
    fn lookups_fill_in_missing_terms() {
        let idx = ImpactIndex::from_term_lists(
            6,
            &[("t1", vec![(5, 3)]), ("t2", vec![(5, 2)])],
        )
        .unwrap();
        let mut store = PrefixStore::new(vec![1], "test", idx.fingerprint()).unwrap();
        store
            .insert_subset(
                SubsetKey::new(vec![0]).unwrap(),
                record(&[1], &[3]),
                Some(Prefix::from_entries(1, &[(5, vec![3])]).unwrap()),
            )
            .unwrap();
        let query = Query::from_term_ids(&idx, [0, 1]).unwrap();
        let est = estimate_with_lookups(&store, &idx, &query, 1, 10, 10);
        assert_eq!(est.value, 5);
        assert_eq!(est.lb_used, 1);

        // lb = 0 degenerates to Combine Scores.
        let est = estimate_with_lookups(&store, &idx, &query, 1, 10, 0);
        assert_eq!(est.value, 3);
        assert_eq!(est.lb_used, 0);
    }

    #[test]
    fn backup_takes_the_maximum() {
        let (_, store, query) = rd_scenario();
        let weak = Estimate::raw(Method::CombineScores, 0, 4, 0);
        let backed = with_quantile_backup(weak, &store, &query, 10);
        assert_eq!(backed.value, 100);
        assert!(backed.backed_by_quantile);
        assert_eq!(backed.method, Method::CombineScores);

        let strong = Estimate::raw(Method::CombineScores, 120, 4, 0);
        let backed = with_quantile_backup(strong, &store, &query, 10);
        assert_eq!(backed.value, 120);
        assert!(!backed.backed_by_quantile);
    }

    #[test]
    fn overestimate_probability_matches_closed_forms() {
        // Empty sum.
        assert_eq!(overestimate_probability(10, 10, 0.5).unwrap(), 0.0);
        // 1 - (1-s)^(k-1) for k' = 1.
        let p = overestimate_probability(10, 1, 0.1).unwrap();
        assert!((p - (1.0 - 0.9f64.powi(9))).abs() < 1e-12);
        // C(9,8)/2^9 + C(9,9)/2^9 = 10/512.
        let p = overestimate_probability(10, 8, 0.5).unwrap();
        assert!((p - 10.0 / 512.0).abs() < 1e-12);
        assert!(overestimate_probability(10, 1, 0.0).is_err());
        assert!(overestimate_probability(10, 1, 1.0).is_err());
    }

    #[test]
    fn overestimate_probability_is_nonincreasing_in_k_prime() {
        let mut prev = f64::INFINITY;
        for k_prime in 1..=20 {
            let p = overestimate_probability(20, k_prime, 0.3).unwrap();
            assert!(p <= prev + 1e-15);
            prev = p;
        }
    }

    #[test]
    fn choose_k_prime_scans_the_tail() {
        assert_eq!(choose_k_prime(10, 0.5, 0.05).unwrap(), 8);
        // Any k' qualifies for a vacuous bound.
        assert_eq!(choose_k_prime(10, 0.5, 1.0).unwrap(), 1);
        // Full-rate sampling admits no reduction.
        assert_eq!(choose_k_prime(10, 1.0, 0.01).unwrap(), 10);
    }

    #[test]
    fn sample_plan_validates_and_degrades() {
        let plan = SamplePlan::new(10, 0.5, 0.05).unwrap();
        assert_eq!(plan.k_prime, 8);
        assert!(SamplePlan::new(10, 0.5, 0.0).is_err());
        assert!(SamplePlan::new(10, 1.5, 0.1).is_err());

        // k' larger than the sample collection degrades to 0.
        let idx = ImpactIndex::from_term_lists(1, &[("t", vec![(0, 5)])]).unwrap();
        let store = PrefixStore::new(vec![5], "test", idx.fingerprint()).unwrap();
        let query = Query::from_term_ids(&idx, [0]).unwrap();
        let plan = SamplePlan {
            rate: 0.5,
            epsilon: 0.01,
            k: 10,
            k_prime: 5,
        };
        let est = estimate_sampled(&store, &idx, &query, 10, 10, &plan);
        assert_eq!(est.value, 0);
        assert_eq!(est.method, Method::Sampled);
    }

    #[test]
    fn budget_requires_lb_within_ab() {
        assert!(Budget { ab: 10, lb: 10 }.validate().is_ok());
        assert!(Budget { ab: 10, lb: 11 }.validate().is_err());
    }
}
