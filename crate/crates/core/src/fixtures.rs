//! Seeded synthetic corpora with one planted Bacteria/Habitat pair per
//! document. The pair is positive exactly when the trigger word sits strictly
//! inside the tree path between the two entity heads.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityMention, RelationInstance, RelationSchema, Sentence, Token};
use crate::error::{Error, Result};
use crate::graph::{build_document_graph, shortest_path, NodeRef};

pub const TRIGGER: &str = "lives";
pub const LABEL: &str = "Lives_In";
pub const BACTERIA: &str = "Bacteria";
pub const HABITAT: &str = "Habitat";

pub const DEPRELS: [&str; 10] = [
    "nsubj", "obj", "amod", "det", "case", "nmod", "advmod", "conj", "cc", "compound",
];
const POS_TAGS: [&str; 5] = ["NN", "VB", "JJ", "DT", "IN"];
const FILLER: [&str; 24] = [
    "the", "cell", "grew", "in", "a", "sample", "was", "found", "near", "strain", "culture", "from", "and", "with",
    "colony", "water", "were", "isolated", "on", "medium", "of", "high", "rapidly", "after",
];
const BACTERIA_NAMES: [&str; 4] = ["listeria", "salmonella", "vibrio", "bacillus"];
const HABITAT_NAMES: [&str; 4] = ["soil", "milk", "gut", "cheese"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub num_docs: usize,
    /// Inclusive range of sentences per document.
    pub sentences: (usize, usize),
    /// Inclusive range of tokens per sentence.
    pub tokens: (usize, usize),
    /// Probability of each sentence distance 0..=3.
    pub distance_probs: [f64; 4],
    pub positive_rate: f64,
    /// Chance that a negative document carries the trigger off the path.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            num_docs: 200,
            sentences: (1, 4),
            tokens: (4, 9),
            distance_probs: [0.25; 4],
            positive_rate: 0.5,
            distractor_rate: 0.3,
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.sentences;
        let (t0, t1) = self.tokens;
        if s0 == 0 || s0 > s1 {
            return Err(Error::Config(format!("invalid sentence range {s0}..={s1}")));
        }
        if t0 < 3 || t0 > t1 {
            return Err(Error::Config(format!("invalid token range {t0}..={t1} (minimum 3)")));
        }
        if self.distance_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("distance probabilities must be non-negative".into()));
        }
        let sum: f64 = self.distance_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("distance probabilities sum to {sum}, not 1")));
        }
        for (name, p) in [("positive_rate", self.positive_rate), ("distractor_rate", self.distractor_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn schema() -> RelationSchema {
    RelationSchema::parse(&[format!("{LABEL}:{BACTERIA}:{HABITAT}")]).expect("valid schema")
}

/// Single-rooted tree where token `i > 1` attaches to a uniform earlier token.
pub fn random_tree(n_tokens: usize, seed: u64) -> Result<Sentence> {
    random_tree_with(n_tokens, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_tree_with<R: Rng + ?Sized>(n_tokens: usize, rng: &mut R) -> Result<Sentence> {
    if n_tokens == 0 {
        return Err(Error::Config("random tree needs at least one token".into()));
    }
    let tokens = (1..=n_tokens)
        .map(|i| {
            let (head, deprel) = if i == 1 {
                (0, "root")
            } else {
                (rng.random_range(1..i), *DEPRELS.choose(rng).expect("nonempty"))
            };
            Token {
                index: i,
                surface: FILLER.choose(rng).expect("nonempty").to_string(),
                pos: POS_TAGS.choose(rng).expect("nonempty").to_string(),
                head,
                deprel: deprel.to_string(),
                char_span: None,
            }
        })
        .collect();
    Ok(Sentence { doc_index: 0, tokens })
}

fn sample_distance<R: Rng + ?Sized>(probs: &[f64; 4], rng: &mut R) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Interior of the tree path between the two mention heads.
fn interior(doc: &Document) -> Result<Vec<NodeRef>> {
    let g = build_document_graph(doc)?;
    let a = &doc.mentions[0];
    let b = &doc.mentions[1];
    let path = shortest_path(
        &g,
        NodeRef::new(a.sentence, a.head_token),
        NodeRef::new(b.sentence, b.head_token),
    )?;
    let n = path.nodes.len();
    Ok(if n > 2 { path.nodes[1..n - 1].to_vec() } else { Vec::new() })
}

/// Recomputes the planted label of a generated document.
pub fn derive_label(doc: &Document) -> Result<Option<String>> {
    let hit = interior(doc)?
        .iter()
        .any(|n| doc.token(n.sentence, n.token).is_some_and(|t| t.surface == TRIGGER));
    Ok(hit.then(|| LABEL.to_string()))
}

fn generate_document<R: Rng + ?Sized>(spec: &FixtureSpec, id: String, rng: &mut R) -> Result<Document> {
    loop {
        let k = sample_distance(&spec.distance_probs, rng);
        let n_sent = rng.random_range(spec.sentences.0..=spec.sentences.1).max(k + 1);
        let mut sentences = Vec::with_capacity(n_sent);
        for i in 0..n_sent {
            let mut s = random_tree_with(rng.random_range(spec.tokens.0..=spec.tokens.1), rng)?;
            s.doc_index = i;
            sentences.push(s);
        }
        let s1 = rng.random_range(0..n_sent - k);
        let s2 = s1 + k;
        let a = rng.random_range(1..=sentences[s1].len());
        let b = rng.random_range(1..=sentences[s2].len());
        if k == 0 && a == b {
            continue;
        }
        let (bac, hab) = if rng.random_bool(0.5) { ((s1, a), (s2, b)) } else { ((s2, b), (s1, a)) };
        sentences[bac.0].tokens[bac.1 - 1].surface = BACTERIA_NAMES.choose(rng).expect("nonempty").to_string();
        sentences[hab.0].tokens[hab.1 - 1].surface = HABITAT_NAMES.choose(rng).expect("nonempty").to_string();
        let mentions = vec![
            EntityMention::new("T1", bac.0, bac.1, bac.1, BACTERIA),
            EntityMention::new("T2", hab.0, hab.1, hab.1, HABITAT),
        ];
        let draft = Document::new(id.clone(), None, sentences, mentions, Vec::new())?;
        let inside = interior(&draft)?;
        if inside.is_empty() {
            continue;
        }
        let Document {
            mut sentences,
            mentions,
            ..
        } = draft;
        let positive = rng.random_bool(spec.positive_rate);
        let mut relations = Vec::new();
        if positive {
            let n = inside.choose(rng).expect("nonempty");
            sentences[n.sentence].tokens[n.token - 1].surface = TRIGGER.to_string();
            relations.push(RelationInstance::new("T1", "T2", LABEL));
        } else if rng.random_bool(spec.distractor_rate) {
            let heads = [
                NodeRef::new(bac.0, bac.1),
                NodeRef::new(hab.0, hab.1),
            ];
            let off: Vec<NodeRef> = sentences
                .iter()
                .enumerate()
                .flat_map(|(s, sent)| (1..=sent.len()).map(move |t| NodeRef::new(s, t)))
                .filter(|n| !inside.contains(n) && !heads.contains(n))
                .collect();
            if let Some(n) = off.choose(rng) {
                sentences[n.sentence].tokens[n.token - 1].surface = TRIGGER.to_string();
            }
        }
        return Document::new(id, None, sentences, mentions, relations);
    }
}

pub fn generate_corpus(spec: &FixtureSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_docs)
        .map(|i| generate_document(spec, format!("s{}d{i}", spec.seed), &mut rng))
        .collect()
}
