//! Term-subset mining from a training query log, and the size/frequency
//! policies that assign each mined subset a prefix depth.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::index::{ImpactIndex, TermId};
use crate::text::tokenize;

pub const MAX_SUBSET_SIZE: usize = 4;

/// Queries longer than this contribute only subsets of their rarest terms;
/// guards against the combinatorial blowup of pathological log lines.
pub const SUBSET_TERM_CAP: usize = 12;

/// A subset of 1..=4 query terms, strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubsetKey {
    terms: Vec<TermId>,
}

impl SubsetKey {
    pub fn new(mut terms: Vec<TermId>) -> Result<SubsetKey> {
        terms.sort_unstable();
        terms.dedup();
        if terms.is_empty() || terms.len() > MAX_SUBSET_SIZE {
            return Err(Error::Argument(format!(
                "subset size must be in [1, {MAX_SUBSET_SIZE}], got {}",
                terms.len()
            )));
        }
        Ok(SubsetKey { terms })
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when every subset term appears in `sorted_terms` (ascending).
    pub fn is_contained_in(&self, sorted_terms: &[TermId]) -> bool {
        let mut rest = sorted_terms;
        for &t in &self.terms {
            match rest.binary_search(&t) {
                Ok(i) => rest = &rest[i + 1..],
                Err(_) => return false,
            }
        }
        true
    }
}

// Lets maps keyed by SubsetKey be probed with a plain term slice.
impl std::borrow::Borrow<[TermId]> for SubsetKey {
    fn borrow(&self) -> &[TermId] {
        &self.terms
    }
}

/// A mined subset and the number of training queries containing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetStats {
    pub key: SubsetKey,
    pub frequency: u32,
}

/// One step of a frequency-tiered depth schedule: subsets at least
/// `min_frequency` frequent get `multiplier` of the base depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyTier {
    pub min_frequency: u32,
    pub multiplier: f64,
}

/// Per-size base depths plus the frequency tiers that scale them down for
/// rare subsets. Subsets below `min_frequency_to_keep` are dropped entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPolicy {
    pub name: String,
    /// size -> base prefix depth; the key set defines which sizes exist.
    pub base_depths: BTreeMap<usize, u32>,
    /// Sorted descending by `min_frequency`, multipliers non-increasing
    /// down the list so depth is monotone in frequency.
    pub tiers: Vec<FrequencyTier>,
    /// size -> minimum frequency a subset needs to be kept at all.
    pub min_frequency_to_keep: BTreeMap<usize, u32>,
}

impl DepthPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.base_depths.is_empty() {
            return Err(Error::Argument("policy has no base depths".into()));
        }
        for (&size, &depth) in &self.base_depths {
            if size == 0 || size > MAX_SUBSET_SIZE {
                return Err(Error::Argument(format!("invalid subset size {size}")));
            }
            if depth == 0 {
                return Err(Error::Argument(format!("size {size} has zero base depth")));
            }
        }
        for pair in self.tiers.windows(2) {
            if pair[0].min_frequency <= pair[1].min_frequency {
                return Err(Error::Argument(
                    "tiers must be sorted strictly descending by min_frequency".into(),
                ));
            }
            if pair[0].multiplier < pair[1].multiplier {
                return Err(Error::Argument(
                    "tier multipliers must not increase as frequency drops".into(),
                ));
            }
        }
        for tier in &self.tiers {
            if !(tier.multiplier > 0.0 && tier.multiplier <= 1.0) {
                return Err(Error::Argument(format!(
                    "tier multiplier {} outside (0, 1]",
                    tier.multiplier
                )));
            }
        }
        Ok(())
    }

    /// Largest subset size this policy materializes.
    pub fn max_size(&self) -> usize {
        self.base_depths.keys().copied().max().unwrap_or(0)
    }

    pub fn min_frequencies(&self) -> BTreeMap<usize, u32> {
        let mut out = BTreeMap::new();
        for &size in self.base_depths.keys() {
            out.insert(size, self.min_frequency_to_keep.get(&size).copied().unwrap_or(1));
        }
        out
    }

    fn multiplier_for(&self, frequency: u32) -> f64 {
        self.tiers
            .iter()
            .find(|t| frequency >= t.min_frequency)
            .map_or(1.0, |t| t.multiplier)
    }

    /// Depth before the k_max clamp; None when the subset is dropped.
    fn raw_depth(&self, size: usize, frequency: u32) -> Option<u32> {
        let base = *self.base_depths.get(&size)?;
        let keep = self.min_frequency_to_keep.get(&size).copied().unwrap_or(1);
        if frequency < keep {
            return None;
        }
        Some((base as f64 * self.multiplier_for(frequency)).floor() as u32)
    }
}

/// A subset admitted to the store, with the prefix depth to materialize.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub key: SubsetKey,
    pub frequency: u32,
    pub depth: u32,
}

/// Named space configurations. The shape (size caps, frequency-tiered
/// depths) is fixed; the constants are this artifact's documented choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceConfig {
    /// Sizes 1-4 at depths 10000/10000/4000/3000, no frequency scaling.
    Huge,
    /// Sizes 1-3; triples only when frequent; frequency-tiered depths.
    Large,
    /// Sizes 1-2 with mid-range depths and rising frequency floors.
    Medium,
    /// Sizes 1-2 with short prefixes for frequent subsets only.
    Small,
}

impl std::str::FromStr for SpaceConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huge" => Ok(SpaceConfig::Huge),
            "large" => Ok(SpaceConfig::Large),
            "medium" => Ok(SpaceConfig::Medium),
            "small" => Ok(SpaceConfig::Small),
            other => Err(Error::Argument(format!("unknown config {other:?}"))),
        }
    }
}

impl std::fmt::Display for SpaceConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SpaceConfig::Huge => "huge",
            SpaceConfig::Large => "large",
            SpaceConfig::Medium => "medium",
            SpaceConfig::Small => "small",
        };
        f.write_str(name)
    }
}

pub fn named_config(config: SpaceConfig) -> DepthPolicy {
    let tiers_adaptive = vec![
        FrequencyTier { min_frequency: 100, multiplier: 1.0 },
        FrequencyTier { min_frequency: 10, multiplier: 0.5 },
        FrequencyTier { min_frequency: 1, multiplier: 0.25 },
    ];
    let policy = match config {
        SpaceConfig::Huge => DepthPolicy {
            name: "huge".into(),
            base_depths: BTreeMap::from([(1, 10_000), (2, 10_000), (3, 4_000), (4, 3_000)]),
            tiers: vec![FrequencyTier { min_frequency: 1, multiplier: 1.0 }],
            min_frequency_to_keep: BTreeMap::from([(1, 1), (2, 1), (3, 1), (4, 1)]),
        },
        SpaceConfig::Large => DepthPolicy {
            name: "large".into(),
            base_depths: BTreeMap::from([(1, 10_000), (2, 10_000), (3, 4_000)]),
            tiers: tiers_adaptive,
            min_frequency_to_keep: BTreeMap::from([(1, 1), (2, 1), (3, 8)]),
        },
        SpaceConfig::Medium => DepthPolicy {
            name: "medium".into(),
            base_depths: BTreeMap::from([(1, 4_000), (2, 4_000)]),
            tiers: tiers_adaptive,
            min_frequency_to_keep: BTreeMap::from([(1, 1), (2, 2)]),
        },
        SpaceConfig::Small => DepthPolicy {
            name: "small".into(),
            base_depths: BTreeMap::from([(1, 1_000), (2, 1_000)]),
            tiers: tiers_adaptive,
            min_frequency_to_keep: BTreeMap::from([(1, 1), (2, 3)]),
        },
    };
    debug_assert!(policy.validate().is_ok());
    policy
}

/// Mines every subset of size <= `max_size` of every log query whose terms
/// all resolve in the index dictionary and whose query count reaches
/// `min_freq` for its size. Output is sorted by key.
pub fn mine_subsets(
    log_path: &Path,
    index: &ImpactIndex,
    max_size: usize,
    min_freq: &BTreeMap<usize, u32>,
) -> Result<Vec<SubsetStats>> {
    let file = fs::File::open(log_path)?;
    mine_subsets_from_reader(BufReader::new(file), index, max_size, min_freq)
}

pub fn mine_subsets_from_reader(
    reader: impl BufRead,
    index: &ImpactIndex,
    max_size: usize,
    min_freq: &BTreeMap<usize, u32>,
) -> Result<Vec<SubsetStats>> {
    if max_size == 0 || max_size > MAX_SUBSET_SIZE {
        return Err(Error::Argument(format!(
            "max subset size must be in [1, {MAX_SUBSET_SIZE}], got {max_size}"
        )));
    }

    let mut counts: HashMap<Vec<TermId>, u32> = HashMap::new();
    for line in reader.lines() {
        let line = line?;
        let mut terms: Vec<TermId> = Vec::new();
        for tok in tokenize(&line) {
            if let Some(t) = index.term_id(&tok) {
                if !terms.contains(&t) {
                    terms.push(t);
                }
            }
        }
        if terms.len() > SUBSET_TERM_CAP {
            // Keep the rarest terms; rarity by list length, id as tiebreak.
            terms.sort_unstable_by_key(|&t| (index.list(t).len(), t));
            terms.truncate(SUBSET_TERM_CAP);
        }
        terms.sort_unstable();
        for_each_combination(&terms, max_size, &mut |subset| {
            *counts.entry(subset.to_vec()).or_insert(0) += 1;
        });
    }

    let mut stats: Vec<SubsetStats> = counts
        .into_iter()
        .filter(|(terms, freq)| {
            let floor = min_freq.get(&terms.len()).copied().unwrap_or(1);
            *freq >= floor
        })
        .map(|(terms, frequency)| SubsetStats {
            key: SubsetKey { terms },
            frequency,
        })
        .collect();
    stats.sort_unstable_by(|a, b| a.key.cmp(&b.key));
    Ok(stats)
}

/// Calls `f` with every non-empty combination of `sorted` of size <= max_size.
pub(crate) fn for_each_combination(
    sorted: &[TermId],
    max_size: usize,
    f: &mut impl FnMut(&[TermId]),
) {
    let mut current: Vec<TermId> = Vec::with_capacity(max_size);
    fn recurse(
        sorted: &[TermId],
        start: usize,
        max_size: usize,
        current: &mut Vec<TermId>,
        f: &mut impl FnMut(&[TermId]),
    ) {
        for i in start..sorted.len() {
            current.push(sorted[i]);
            f(current);
            if current.len() < max_size {
                recurse(sorted, i + 1, max_size, current, f);
            }
            current.pop();
        }
    }
    recurse(sorted, 0, max_size, &mut current, f);
}

/// Applies the policy: depth = floor(base * tier multiplier), clamped up to
/// `k_max` so a kept subset can always answer top-k_max duplicate removal.
/// Subsets below the keep floor, or of sizes the policy does not cover, are
/// dropped.
pub fn assign_depths(stats: &[SubsetStats], policy: &DepthPolicy, k_max: u32) -> Vec<CatalogEntry> {
    debug_assert!(policy.validate().is_ok());
    stats
        .iter()
        .filter_map(|s| {
            policy.raw_depth(s.key.len(), s.frequency).map(|raw| CatalogEntry {
                key: s.key.clone(),
                frequency: s.frequency,
                depth: raw.max(k_max),
            })
        })
        .collect()
}

/// Writes the catalog dump: `terms(comma-joined)<TAB>frequency<TAB>depth`.
pub fn write_catalog(entries: &[CatalogEntry], index: &ImpactIndex, mut w: impl Write) -> Result<()> {
    for e in entries {
        let names: Vec<&str> = e.key.terms().iter().map(|&t| index.term_name(t)).collect();
        writeln!(w, "{}\t{}\t{}", names.join(","), e.frequency, e.depth)?;
    }
    Ok(())
}

/// Reads a catalog dump back, resolving term names against `index`.
/// Subsets with unresolvable terms are skipped and counted.
pub fn read_catalog(reader: impl BufRead, index: &ImpactIndex) -> Result<(Vec<CatalogEntry>, u32)> {
    let mut entries = Vec::new();
    let mut skipped = 0u32;
    for (line_idx, line) in reader.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (terms_s, freq_s, depth_s) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::parse(line_no, "expected 3 tab-separated fields")),
        };
        let frequency: u32 = freq_s
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad frequency {freq_s:?}")))?;
        let depth: u32 = depth_s
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad depth {depth_s:?}")))?;
        let mut terms = Vec::new();
        let mut unresolved = false;
        for name in terms_s.split(',') {
            match index.term_id(name) {
                Some(t) => terms.push(t),
                None => {
                    unresolved = true;
                    break;
                }
            }
        }
        if unresolved {
            skipped += 1;
            continue;
        }
        let key = SubsetKey::new(terms)
            .map_err(|e| Error::parse(line_no, format!("bad subset: {e}")))?;
        entries.push(CatalogEntry { key, frequency, depth });
    }
    Ok((entries, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ImpactIndex;
    use std::io::Cursor;

    fn abc_index() -> ImpactIndex {
        ImpactIndex::from_term_lists(
            2,
            &[("a", vec![(0, 1)]), ("b", vec![(0, 1)]), ("c", vec![(1, 1)])],
        )
        .unwrap()
    }

    fn freq_of(stats: &[SubsetStats], index: &ImpactIndex, names: &[&str]) -> Option<u32> {
        let terms: Vec<TermId> = names.iter().map(|n| index.term_id(n).unwrap()).collect();
        let key = SubsetKey::new(terms).unwrap();
        stats.iter().find(|s| s.key == key).map(|s| s.frequency)
    }

    #[test]
    fn mine_counts_queries_containing_each_subset() {
        let idx = abc_index();
        let log = "a b\na b c\nb\n";
        let stats =
            mine_subsets_from_reader(Cursor::new(log), &idx, 2, &BTreeMap::new()).unwrap();
        assert_eq!(freq_of(&stats, &idx, &["a"]), Some(2));
        assert_eq!(freq_of(&stats, &idx, &["b"]), Some(3));
        assert_eq!(freq_of(&stats, &idx, &["c"]), Some(1));
        assert_eq!(freq_of(&stats, &idx, &["a", "b"]), Some(2));
        assert_eq!(freq_of(&stats, &idx, &["a", "c"]), Some(1));
        assert_eq!(freq_of(&stats, &idx, &["b", "c"]), Some(1));
        assert_eq!(stats.len(), 6);
    }

    #[test]
    fn mine_empty_log_gives_empty_catalog() {
        let idx = abc_index();
        let stats =
            mine_subsets_from_reader(Cursor::new(""), &idx, 2, &BTreeMap::new()).unwrap();
        assert!(stats.is_empty());
    }

    #[test]
    fn mine_collapses_duplicate_terms() {
        let idx = abc_index();
        let stats =
            mine_subsets_from_reader(Cursor::new("a a b\n"), &idx, 2, &BTreeMap::new()).unwrap();
        assert_eq!(freq_of(&stats, &idx, &["a"]), Some(1));
        assert_eq!(freq_of(&stats, &idx, &["b"]), Some(1));
        assert_eq!(freq_of(&stats, &idx, &["a", "b"]), Some(1));
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn assign_depths_applies_tiers_and_clamp() {
        let policy = DepthPolicy {
            name: "test".into(),
            base_depths: BTreeMap::from([(2, 10_000)]),
            tiers: vec![
                FrequencyTier { min_frequency: 100, multiplier: 1.0 },
                FrequencyTier { min_frequency: 1, multiplier: 0.1 },
            ],
            min_frequency_to_keep: BTreeMap::from([(2, 1)]),
        };
        policy.validate().unwrap();
        let key = SubsetKey::new(vec![0, 1]).unwrap();
        let stats = vec![
            SubsetStats { key: key.clone(), frequency: 5 },
            SubsetStats { key: key.clone(), frequency: 100 },
        ];
        let entries = assign_depths(&stats, &policy, 1000);
        assert_eq!(entries[0].depth, 1000); // 10000 * 0.1, clamp is a no-op
        assert_eq!(entries[1].depth, 10_000);
    }

    #[test]
    fn assign_depths_drops_below_keep_floor_and_uncovered_sizes() {
        let policy = DepthPolicy {
            name: "test".into(),
            base_depths: BTreeMap::from([(1, 100)]),
            tiers: vec![FrequencyTier { min_frequency: 1, multiplier: 1.0 }],
            min_frequency_to_keep: BTreeMap::from([(1, 5)]),
        };
        let stats = vec![
            SubsetStats { key: SubsetKey::new(vec![0]).unwrap(), frequency: 4 },
            SubsetStats { key: SubsetKey::new(vec![1]).unwrap(), frequency: 5 },
            SubsetStats { key: SubsetKey::new(vec![0, 1]).unwrap(), frequency: 50 },
        ];
        let entries = assign_depths(&stats, &policy, 10);
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].key.terms(), &[1]);
    }

    #[test]
    fn named_configs_validate_and_match_documented_shapes() {
        for config in [SpaceConfig::Huge, SpaceConfig::Large, SpaceConfig::Medium, SpaceConfig::Small] {
            named_config(config).validate().unwrap();
        }
        let huge = named_config(SpaceConfig::Huge);
        assert_eq!(
            huge.base_depths,
            BTreeMap::from([(1, 10_000), (2, 10_000), (3, 4_000), (4, 3_000)])
        );
        assert_eq!(named_config(SpaceConfig::Small).max_size(), 2);
        assert_eq!(named_config(SpaceConfig::Medium).max_size(), 2);
        assert_eq!(named_config(SpaceConfig::Large).max_size(), 3);
    }

    #[test]
    fn config_parses_from_name() {
        assert_eq!("huge".parse::<SpaceConfig>().unwrap(), SpaceConfig::Huge);
        assert!("colossal".parse::<SpaceConfig>().is_err());
    }

    #[test]
    fn catalog_tsv_roundtrips_and_skips_unknown_terms() {
        let idx = abc_index();
        let entries = vec![
            CatalogEntry {
                key: SubsetKey::new(vec![0, 1]).unwrap(),
                frequency: 7,
                depth: 1000,
            },
            CatalogEntry {
                key: SubsetKey::new(vec![2]).unwrap(),
                frequency: 2,
                depth: 500,
            },
        ];
        let mut buf = Vec::new();
        write_catalog(&entries, &idx, &mut buf).unwrap();
        let (back, skipped) = read_catalog(Cursor::new(&buf), &idx).unwrap();
        assert_eq!(back, entries);
        assert_eq!(skipped, 0);

        let with_unknown = String::from_utf8(buf).unwrap() + "zz,a\t3\t100\n";
        let (back, skipped) = read_catalog(Cursor::new(with_unknown.as_bytes()), &idx).unwrap();
        assert_eq!(back, entries);
        assert_eq!(skipped, 1);
    }
}
