//! Candidate entity pairs per sentence range, negative sampling and splits.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, RelationSchema, NONE_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidateKey {
    pub doc: String,
    pub e1: String,
    pub e2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub doc: String,
    pub e1: String,
    pub e2: String,
    pub label: String,
    pub sentence_distance: usize,
}

impl CandidatePair {
    pub fn key(&self) -> CandidateKey {
        CandidateKey {
            doc: self.doc.clone(),
            e1: self.e1.clone(),
            e2: self.e2.clone(),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label != NONE_LABEL
    }
}

/// All schema-admissible ordered mention pairs at most `k_max` sentences apart.
///
/// Pass `usize::MAX` for an unbounded range.
pub fn generate_candidates(doc: &Document, k_max: usize, schema: &RelationSchema) -> Vec<CandidatePair> {
    let mut order: Vec<usize> = (0..doc.mentions.len()).collect();
    order.sort_by_key(|&i| (doc.mentions[i].sentence, doc.mentions[i].first, i));

    let mut gold: HashMap<(&str, &str), &str> = HashMap::new();
    for r in &doc.gold_relations {
        gold.entry((r.e1.as_str(), r.e2.as_str())).or_insert(r.label.as_str());
    }

    let mut out = Vec::new();
    for &i in &order {
        let a = &doc.mentions[i];
        for &j in &order {
            if i == j {
                continue;
            }
            let b = &doc.mentions[j];
            if !schema.admits(&a.etype, &b.etype) {
                continue;
            }
            let distance = a.sentence.abs_diff(b.sentence);
            if distance > k_max {
                continue;
            }
            let label = match gold.get(&(a.id.as_str(), b.id.as_str())) {
                Some(&l) if schema.admits_label(l, &a.etype, &b.etype) => l,
                _ => NONE_LABEL,
            };
            out.push(CandidatePair {
                doc: doc.id.clone(),
                e1: a.id.clone(),
                e2: b.id.clone(),
                label: label.to_string(),
                sentence_distance: distance,
            });
        }
    }
    out
}

/// Keeps every positive and an equal number of uniformly drawn negatives.
/// Relative order of the input is preserved.
pub fn sample_negatives(candidates: &[CandidatePair], seed: u64) -> Vec<CandidatePair> {
    let positives = candidates.iter().filter(|c| c.is_positive()).count();
    let negatives: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_positive())
        .map(|(i, _)| i)
        .collect();
    let mut keep = vec![false; candidates.len()];
    if negatives.len() <= positives {
        for &i in &negatives {
            keep[i] = true;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pick in index::sample(&mut rng, negatives.len(), positives) {
            keep[negatives[pick]] = true;
        }
    }
    candidates
        .iter()
        .zip(keep)
        .filter(|(c, k)| c.is_positive() || *k)
        .map(|(c, _)| c.clone())
        .collect()
}

/// Seeded document-level train/dev/test partition.
///
/// Sizes follow the ratios by largest remainder, so each is within one item
/// of its exact share; every split with a nonzero ratio gets at least one.
pub fn split_corpus<T>(items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<[Vec<T>; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} sum to {total}, not 1")));
    }
    let n = items.len();
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(Error::Config(format!(
            "{n} documents cannot fill {nonzero} nonzero splits"
        )));
    }

    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = sizes.iter().sum();
    for &i in by_remainder.iter().cycle() {
        if assigned >= n {
            break;
        }
        sizes[i] += 1;
        assigned += 1;
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0u8; n];
    let mut offset = 0;
    for (split, &size) in sizes.iter().enumerate() {
        for &i in &order[offset..offset + size] {
            assignment[i] = split as u8;
        }
        offset += size;
    }

    let mut out: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (item, split) in items.into_iter().zip(assignment) {
        out[split as usize].push(item);
    }
    Ok(out)
}

/// Seeded `folds`-way cross-validation: one `(train, test)` pair per fold.
pub fn cross_validation_folds<T: Clone>(items: &[T], folds: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    if folds < 2 || folds > items.len() {
        return Err(Error::Config(format!(
            "{folds} folds over {} documents",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; items.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    Ok((0..folds)
        .map(|f| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (item, &g) in items.iter().zip(&fold_of) {
                if g == f {
                    test.push(item.clone());
                } else {
                    train.push(item.clone());
                }
            }
            (train, test)
        })
        .collect())
}

/// Positive candidate counts per label, split into intra- and inter-sentential.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RelationStats {
    pub intra: usize,
    pub inter: usize,
}

pub fn relation_stats(candidates: &[CandidatePair]) -> BTreeMap<String, RelationStats> {
    let mut out: BTreeMap<String, RelationStats> = BTreeMap::new();
    for c in candidates.iter().filter(|c| c.is_positive()) {
        let e = out.entry(c.label.clone()).or_default();
        if c.sentence_distance == 0 {
            e.intra += 1;
        } else {
            e.inter += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::sentence;
    use crate::corpus::{EntityMention, RelationInstance};

    fn schema() -> RelationSchema {
        RelationSchema::parse(&["Lives_In:B:H"]).unwrap()
    }

    fn doc(mentions: Vec<EntityMention>, gold: Vec<RelationInstance>, n_sent: usize) -> Document {
        let sents = (0..n_sent).map(|_| sentence(&[0, 1, 1])).collect();
        Document::new("d", None, sents, mentions, gold).unwrap()
    }

    fn pair(c: &CandidatePair) -> (&str, &str, usize) {
        (&c.e1, &c.e2, c.sentence_distance)
    }

    #[test]
    fn distance_filter_excludes_cross_sentence_at_k0() {
        let d = doc(
            vec![EntityMention::new("a", 0, 1, 1, "B"), EntityMention::new("b", 1, 1, 1, "H")],
            vec![],
            2,
        );
        assert!(generate_candidates(&d, 0, &schema()).is_empty());
    }

    #[test]
    fn chain_of_three_mentions_at_k2() {
        // Same type everywhere so every ordered pair is admissible.
        let s = RelationSchema::parse(&["R:T:T"]).unwrap();
        let d = doc(
            vec![
                EntityMention::new("e1", 0, 1, 1, "T"),
                EntityMention::new("e2", 1, 1, 1, "T"),
                EntityMention::new("e3", 3, 1, 1, "T"),
            ],
            vec![],
            4,
        );
        let got: Vec<_> = generate_candidates(&d, 2, &s).iter().map(|c| (c.e1.clone(), c.e2.clone(), c.sentence_distance)).collect();
        // Enumerate every ordered pair and filter by distance.
        let sent = [("e1", 0usize), ("e2", 1), ("e3", 3)];
        let mut expected = Vec::new();
        for (a, sa) in sent {
            for (b, sb) in sent {
                if a != b && sa.abs_diff(sb) <= 2 {
                    expected.push((a.to_string(), b.to_string(), sa.abs_diff(sb)));
                }
            }
        }
        assert_eq!(got, expected);
        assert!(!got.iter().any(|(a, b, _)| (a == "e1" && b == "e3") || (a == "e3" && b == "e1")));
    }

    #[test]
    fn gold_labels_follow_role_order_and_schema() {
        let d = doc(
            vec![EntityMention::new("b", 0, 1, 1, "B"), EntityMention::new("h", 0, 2, 2, "H")],
            vec![RelationInstance::new("b", "h", "Lives_In")],
            1,
        );
        let c = generate_candidates(&d, 0, &schema());
        assert_eq!(c.len(), 1);
        assert_eq!(pair(&c[0]), ("b", "h", 0));
        assert_eq!(c[0].label, "Lives_In");
    }

    #[test]
    fn empty_documents_yield_no_candidates() {
        let d = Document::new("e", None, vec![], vec![], vec![]).unwrap();
        assert!(generate_candidates(&d, usize::MAX, &schema()).is_empty());
    }

    fn labeled(pos: usize, neg: usize) -> Vec<CandidatePair> {
        (0..pos + neg)
            .map(|i| CandidatePair {
                doc: "d".into(),
                e1: format!("a{i}"),
                e2: format!("b{i}"),
                label: if i % 6 == 0 && i / 6 < pos { "R".into() } else { NONE_LABEL.into() },
                sentence_distance: 0,
            })
            .collect()
    }

    #[test]
    fn negatives_balance_positives() {
        let c = labeled(10, 50);
        assert_eq!(c.iter().filter(|c| c.is_positive()).count(), 10);
        let s = sample_negatives(&c, 3);
        assert_eq!(s.iter().filter(|c| c.is_positive()).count(), 10);
        assert_eq!(s.iter().filter(|c| !c.is_positive()).count(), 10);
        assert_eq!(s, sample_negatives(&c, 3));
        assert_ne!(s, sample_negatives(&c, 4));
    }

    #[test]
    fn zero_positives_keep_zero_negatives() {
        let c = labeled(0, 5);
        assert!(sample_negatives(&c, 1).is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let docs: Vec<usize> = (0..10).collect();
        let [a, b, c] = split_corpus(docs.clone(), [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let again = split_corpus(docs.clone(), [0.6, 0.2, 0.2], 9).unwrap();
        assert_eq!([a.clone(), b.clone(), c.clone()], again);
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        assert_eq!(all, docs);

        let [t, d, e] = split_corpus(vec!["only"], [1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!((t.len(), d.len(), e.len()), (1, 0, 0));
        assert!(split_corpus(vec![1, 2], [0.6, 0.2, 0.2], 0).is_err());
        assert!(split_corpus(vec![1, 2, 3], [0.6, 0.2, 0.1], 0).is_err());
    }

    #[test]
    fn folds_partition_items() {
        let items: Vec<u32> = (0..9).collect();
        let folds = cross_validation_folds(&items, 3, 1).unwrap();
        let mut tested: Vec<u32> = folds.iter().flat_map(|(_, t)| t.clone()).collect();
        tested.sort();
        assert_eq!(tested, items);
        assert!(folds.iter().all(|(tr, te)| tr.len() == 6 && te.len() == 3));
    }
}
