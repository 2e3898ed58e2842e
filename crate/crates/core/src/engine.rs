//! Exact disjunctive top-k evaluation (the ground truth everything else is
//! measured against) and a MaxScore processor that accepts an initial
//! threshold and reports how much work it did.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::index::{DocId, ImpactIndex, Query, Score};

/// Top-k result entries, descending by score with ascending-docID tiebreak.
/// `threshold` is the k-th score, or 0 when fewer than k documents match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopKResult {
    pub entries: Vec<(DocId, Score)>,
    pub threshold: Score,
}

/// Work counters for one engine run.
#[derive(Debug, Clone, Default)]
pub struct EngineStats {
    /// Postings whose impact was added into a candidate score.
    pub postings_scored: u64,
    /// Candidate documents whose score was (at least partially) evaluated.
    pub documents_evaluated: u64,
    /// Successful insertions/replacements in the top-k heap.
    pub heap_insertions: u64,
    pub elapsed: Duration,
}

/// Heap entry ordered so that "greater" means higher score, then smaller
/// docID. A min-heap of these keeps the worst kept result on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ScoredDoc {
    score: Score,
    doc: DocId,
}

impl Ord for ScoredDoc {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .cmp(&other.score)
            .then_with(|| other.doc.cmp(&self.doc))
    }
}

impl PartialOrd for ScoredDoc {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct TopKHeap {
    heap: BinaryHeap<Reverse<ScoredDoc>>,
    k: usize,
}

impl TopKHeap {
    fn new(k: usize) -> Self {
        TopKHeap {
            heap: BinaryHeap::with_capacity(k + 1),
            k,
        }
    }

    fn worst(&self) -> Option<ScoredDoc> {
        self.heap.peek().map(|r| r.0)
    }

    /// Inserts if the candidate beats the current worst; returns true when
    /// the heap changed.
    fn offer(&mut self, cand: ScoredDoc) -> bool {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(cand));
            return true;
        }
        match self.worst() {
            Some(worst) if cand > worst => {
                self.heap.pop();
                self.heap.push(Reverse(cand));
                true
            }
            _ => false,
        }
    }

    fn is_full(&self) -> bool {
        self.heap.len() == self.k
    }

    /// Score of the k-th kept result, 0 while underfull.
    fn kth_score(&self) -> Score {
        if self.is_full() {
            self.worst().map_or(0, |w| w.score)
        } else {
            0
        }
    }

    fn into_sorted(self) -> Vec<(DocId, Score)> {
        let mut out: Vec<ScoredDoc> = self.heap.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out.into_iter().map(|s| (s.doc, s.score)).collect()
    }
}

/// Exhaustive document-at-a-time merge of the query's posting lists.
/// Deterministic: ties at equal score keep the smaller docID.
pub fn exact_topk(index: &ImpactIndex, query: &Query, k: usize) -> TopKResult {
    let mut heap = TopKHeap::new(k);
    if k == 0 || query.is_empty() {
        return TopKResult {
            entries: Vec::new(),
            threshold: 0,
        };
    }

    let lists: Vec<&[crate::index::Posting]> = query
        .terms()
        .iter()
        .map(|&t| index.list(t).postings.as_slice())
        .collect();
    let mut pos = vec![0usize; lists.len()];

    loop {
        let mut doc = DocId::MAX;
        for (i, list) in lists.iter().enumerate() {
            if pos[i] < list.len() {
                doc = doc.min(list[pos[i]].doc);
            }
        }
        if doc == DocId::MAX {
            break;
        }
        let mut score: Score = 0;
        for (i, list) in lists.iter().enumerate() {
            if pos[i] < list.len() && list[pos[i]].doc == doc {
                score += list[pos[i]].impact as Score;
                pos[i] += 1;
            }
        }
        heap.offer(ScoredDoc { score, doc });
    }

    let threshold = heap.kth_score();
    TopKResult {
        entries: heap.into_sorted(),
        threshold,
    }
}

/// The k-th highest disjunctive score, 0 when fewer than k documents match.
pub fn exact_threshold(index: &ImpactIndex, query: &Query, k: usize) -> Score {
    exact_topk(index, query, k).threshold
}

struct Cursor<'a> {
    postings: &'a [crate::index::Posting],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn doc(&self) -> DocId {
        self.postings
            .get(self.pos)
            .map_or(DocId::MAX, |p| p.doc)
    }

    fn impact(&self) -> Score {
        self.postings[self.pos].impact as Score
    }

    fn advance(&mut self) {
        self.pos += 1;
    }

    fn next_geq(&mut self, target: DocId) {
        if self.doc() < target {
            self.pos += self.postings[self.pos..].partition_point(|p| p.doc < target);
        }
    }
}

/// MaxScore with an externally supplied starting threshold.
///
/// Contract: `initial_threshold <= exact_threshold(index, query, k)`. The
/// returned threshold then equals the exact threshold, and the entries match
/// `exact_topk` up to ties at the threshold score (heap admission is strict,
/// so tying documents may be dropped). Tests cross-check against `exact_topk`.
pub fn maxscore_topk(
    index: &ImpactIndex,
    query: &Query,
    k: usize,
    initial_threshold: Score,
) -> (TopKResult, EngineStats) {
    let start = Instant::now();
    let mut stats = EngineStats::default();
    let mut heap = TopKHeap::new(k);

    if k == 0 || query.is_empty() {
        let elapsed = start.elapsed();
        stats.elapsed = elapsed;
        return (
            TopKResult {
                entries: Vec::new(),
                threshold: initial_threshold,
            },
            stats,
        );
    }

    // Ascending by max impact; upper_bounds[i] bounds any document score
    // drawn only from lists 0..=i.
    let mut order: Vec<u32> = query.terms().to_vec();
    order.sort_unstable_by_key(|&t| (index.max_impact(t), t));
    let mut cursors: Vec<Cursor> = order
        .iter()
        .map(|&t| Cursor {
            postings: index.list(t).postings.as_slice(),
            pos: 0,
        })
        .collect();
    let upper_bounds: Vec<Score> = order
        .iter()
        .scan(0 as Score, |acc, &t| {
            *acc += index.max_impact(t) as Score;
            Some(*acc)
        })
        .collect();

    let mut theta = initial_threshold;
    let mut first_essential = upper_bounds.partition_point(|&ub| ub <= theta);

    while first_essential < cursors.len() {
        // Next candidate: smallest current docID among essential lists.
        let mut doc = DocId::MAX;
        for cursor in &cursors[first_essential..] {
            doc = doc.min(cursor.doc());
        }
        if doc == DocId::MAX {
            break;
        }

        stats.documents_evaluated += 1;
        let mut score: Score = 0;
        for cursor in &mut cursors[first_essential..] {
            if cursor.doc() == doc {
                score += cursor.impact();
                stats.postings_scored += 1;
                cursor.advance();
            }
        }
        // Non-essential lists, highest bound first; bail as soon as the
        // remaining bound cannot lift the candidate over theta.
        for j in (0..first_essential).rev() {
            if score + upper_bounds[j] <= theta {
                break;
            }
            cursors[j].next_geq(doc);
            if cursors[j].doc() == doc {
                score += cursors[j].impact();
                stats.postings_scored += 1;
            }
        }

        if score > theta && heap.offer(ScoredDoc { score, doc }) {
            stats.heap_insertions += 1;
            if heap.is_full() {
                let kth = heap.kth_score();
                if kth > theta {
                    theta = kth;
                    while first_essential < upper_bounds.len()
                        && upper_bounds[first_essential] <= theta
                    {
                        first_essential += 1;
                    }
                }
            }
        }
    }

    let threshold = initial_threshold.max(heap.kth_score());
    let entries = heap.into_sorted();
    stats.elapsed = start.elapsed();
    (TopKResult { entries, threshold }, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ImpactIndex;

    fn two_term_index() -> ImpactIndex {
        ImpactIndex::from_term_lists(
            3,
            &[("t1", vec![(0, 2), (1, 1)]), ("t2", vec![(1, 1), (2, 3)])],
        )
        .unwrap()
    }

    #[test]
    fn exact_topk_hand_example() {
        let idx = two_term_index();
        let q = Query::from_term_ids(&idx, [0, 1]).unwrap();
        // Scores: d0 = 2, d1 = 2, d2 = 3; tie at 2 keeps the smaller docID.
        let result = exact_topk(&idx, &q, 2);
        assert_eq!(result.entries, vec![(2, 3), (0, 2)]);
        assert_eq!(result.threshold, 2);
    }

    #[test]
    fn exact_topk_underfull_reports_zero_threshold() {
        let idx = two_term_index();
        let q = Query::from_term_ids(&idx, [0, 1]).unwrap();
        let result = exact_topk(&idx, &q, 5);
        assert_eq!(result.entries.len(), 3);
        assert_eq!(result.threshold, 0);
    }

    #[test]
    fn single_term_threshold_is_kth_impact() {
        let idx = ImpactIndex::from_term_lists(4, &[("t", vec![(0, 9), (1, 4), (3, 7)])]).unwrap();
        let q = Query::from_term_ids(&idx, [0]).unwrap();
        assert_eq!(exact_threshold(&idx, &q, 1), 9);
        assert_eq!(exact_threshold(&idx, &q, 2), 7);
        assert_eq!(exact_threshold(&idx, &q, 3), 4);
        assert_eq!(exact_threshold(&idx, &q, 4), 0);
    }

    #[test]
    fn empty_query_threshold_is_zero() {
        let idx = two_term_index();
        let q = Query::parse(&idx, "unknownterm");
        assert_eq!(exact_threshold(&idx, &q, 3), 0);
    }

    #[test]
    fn maxscore_matches_exact_for_zero_threshold() {
        let idx = two_term_index();
        let q = Query::from_term_ids(&idx, [0, 1]).unwrap();
        let (result, stats) = maxscore_topk(&idx, &q, 2, 0);
        assert_eq!(result.threshold, 2);
        assert!(stats.postings_scored > 0);
    }

    #[test]
    fn maxscore_with_exact_threshold_keeps_threshold_and_prunes() {
        let idx = two_term_index();
        let q = Query::from_term_ids(&idx, [0, 1]).unwrap();
        let exact = exact_threshold(&idx, &q, 2);
        let (_, stats0) = maxscore_topk(&idx, &q, 2, 0);
        let (res, stats) = maxscore_topk(&idx, &q, 2, exact);
        assert_eq!(res.threshold, exact);
        assert!(stats.postings_scored <= stats0.postings_scored);
    }

    #[test]
    fn maxscore_single_term_scans_at_most_list_len() {
        let idx = ImpactIndex::from_term_lists(4, &[("t", vec![(0, 9), (1, 4), (3, 7)])]).unwrap();
        let q = Query::from_term_ids(&idx, [0]).unwrap();
        let (res, stats) = maxscore_topk(&idx, &q, 2, 0);
        assert_eq!(res.threshold, 7);
        assert!(stats.postings_scored <= 3);
    }
}
