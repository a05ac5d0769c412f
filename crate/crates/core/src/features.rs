//! Vocabularies, embedding tables and per-unit input vectors.
//!
//! An input vector is the concatenation `[word, subtree?, pos, pi, et]`,
//! skipping the subtree slot in SDP mode and any disabled lexical feature.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::graph::Marker;
use crate::linalg::Matrix;

pub const UNK: &str = "<unk>";
pub const NULL: &str = "<null>";

/// Standard deviation of randomly initialised embedding rows.
pub const EMBEDDING_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabData", into = "VocabData")]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    unk: usize,
    specials: usize,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabData {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    unk: usize,
    specials: usize,
}

impl From<VocabData> for Vocab {
    fn from(d: VocabData) -> Self {
        let ids = d.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens: d.tokens,
            freqs: d.freqs,
            unk: d.unk,
            specials: d.specials,
            ids,
        }
    }
}

impl From<Vocab> for VocabData {
    fn from(v: Vocab) -> Self {
        VocabData {
            tokens: v.tokens,
            freqs: v.freqs,
            unk: v.unk,
            specials: v.specials,
        }
    }
}

impl Vocab {
    fn with_specials(specials: &[&str], unk: usize) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            freqs: Vec::new(),
            unk,
            specials: specials.len(),
            ids: HashMap::new(),
        };
        for s in specials {
            v.push(s, 0);
        }
        v
    }

    /// Word vocabulary: `<unk>` at 0 followed by the four entity markers.
    pub fn words() -> Self {
        let mut specials = vec![UNK];
        specials.extend(Marker::ALL.iter().map(|m| m.as_str()));
        Self::with_specials(&specials, 0)
    }

    /// Lexical-feature vocabulary: `<null>` at 0 (markers), `<unk>` at 1.
    pub fn features() -> Self {
        Self::with_specials(&[NULL, UNK], 1)
    }

    fn push(&mut self, token: &str, freq: u64) -> usize {
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.freqs.push(freq);
        self.ids.insert(token.to_string(), id);
        id
    }

    /// Adds `token` if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        match self.ids.get(token) {
            Some(&id) => id,
            None => self.push(token, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special_count(&self) -> usize {
        self.specials
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    /// Exact lookup, falling back to the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(self.unk)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Surface lookup for words: lowercased first.
    pub fn word_id(&self, surface: &str) -> usize {
        self.id(&surface.to_lowercase())
    }

    pub fn marker_id(&self, marker: Marker) -> usize {
        self.id(marker.as_str())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    /// `token\tid\tfreq` per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            out.push_str(&format!("{t}\t{i}\t{f}\n"));
        }
        out
    }
}

/// Word vocabulary over lowercased surfaces with frequency ≥ `min_freq`,
/// ids assigned by descending frequency then token.
pub fn build_vocab(corpus: &[Document], min_freq: u64) -> Vocab {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for d in corpus {
        for s in &d.sentences {
            for t in &s.tokens {
                *counts.entry(t.surface.to_lowercase()).or_default() += 1;
            }
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut v = Vocab::words();
    for (t, c) in entries {
        if v.get(&t).is_none() {
            v.push(&t, c);
        }
    }
    v
}

/// Feature vocabulary (POS tags, entity types) sorted by name.
pub fn build_feature_vocab<'a>(values: impl IntoIterator<Item = &'a str>) -> Vocab {
    let mut all: Vec<&str> = values.into_iter().collect();
    all.sort_unstable();
    all.dedup();
    let mut v = Vocab::features();
    for t in all {
        v.insert(t);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    /// Rows excluded from updates.
    pub frozen: Vec<bool>,
}

impl EmbeddingTable {
    pub fn random<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
        EmbeddingTable {
            matrix: Matrix::from_vec(rows, dim, data),
            frozen: vec![false; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn is_trainable(&self, id: usize) -> bool {
        !self.frozen[id]
    }

    /// Zeroes and freezes `id`, for the marker null-feature row.
    pub fn make_null_row(&mut self, id: usize) {
        self.matrix.row_mut(id).fill(0.0);
        self.frozen[id] = true;
    }
}

/// Reads `token v1 … vD` lines. Specials come first and are randomly
/// initialised and trainable; pretrained rows are frozen.
///
/// A leading `count dim` header line (word2vec text format) is skipped.
pub fn load_embeddings<R: BufRead, G: Rng + ?Sized>(
    reader: R,
    expected_dim: usize,
    rng: &mut G,
) -> Result<(Vocab, EmbeddingTable)> {
    let mut vocab = Vocab::words();
    let specials = vocab.len();
    let mut table = EmbeddingTable::random(specials, expected_dim, rng);
    let mut rows: Vec<f64> = table.matrix.as_slice().to_vec();
    let mut frozen = table.frozen.clone();

    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if lineno == 1 && values.len() == 1 && token.parse::<u64>().is_ok() && values[0].parse::<u64>().is_ok() {
            continue;
        }
        if values.len() != expected_dim {
            return Err(Error::Embedding {
                line: lineno,
                message: format!("expected {expected_dim} values, found {}", values.len()),
            });
        }
        let lower = token.to_lowercase();
        if vocab.get(&lower).is_some() {
            if lower == token {
                return Err(Error::Embedding {
                    line: lineno,
                    message: format!("duplicate token {token:?}"),
                });
            }
            // A case variant of an earlier token; the first occurrence wins.
            continue;
        }
        for v in values {
            let x: f64 = v.parse().map_err(|_| Error::Embedding {
                line: lineno,
                message: format!("non-numeric value {v:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Embedding {
                    line: lineno,
                    message: "non-finite value".into(),
                });
            }
            rows.push(x);
        }
        vocab.push(&lower, 0);
        frozen.push(true);
    }
    table.matrix = Matrix::from_vec(vocab.len(), expected_dim, rows);
    table.frozen = frozen;
    Ok((vocab, table))
}

/// Enabled lexical features and their embedding sizes; `None` disables one.
/// In config files a size of 0 also disables a feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalFeatureConfig {
    #[serde(deserialize_with = "zero_disables")]
    pub pos: Option<usize>,
    #[serde(deserialize_with = "zero_disables")]
    pub pi: Option<usize>,
    #[serde(deserialize_with = "zero_disables")]
    pub et: Option<usize>,
}

fn zero_disables<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    Ok(Option::<usize>::deserialize(d)?.filter(|&n| n > 0))
}

impl Default for LexicalFeatureConfig {
    fn default() -> Self {
        LexicalFeatureConfig {
            pos: Some(5),
            pi: Some(5),
            et: Some(5),
        }
    }
}

impl LexicalFeatureConfig {
    pub fn none() -> Self {
        LexicalFeatureConfig {
            pos: None,
            pi: None,
            et: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("pos", self.pos), ("pi", self.pi), ("et", self.et)] {
            if d == Some(0) {
                return Err(Error::Config(format!("{name} feature dimension must be positive")));
            }
        }
        Ok(())
    }

    /// |L|: the summed size of the enabled features.
    pub fn total_dim(&self) -> usize {
        self.pos.unwrap_or(0) + self.pi.unwrap_or(0) + self.et.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    Sdp,
    Adp,
}

pub fn input_dim(mode: InputMode, word_dim: usize, subtree_dim: usize, features: &LexicalFeatureConfig) -> usize {
    let base = match mode {
        InputMode::Sdp => word_dim,
        InputMode::Adp => word_dim + subtree_dim,
    };
    base + features.total_dim()
}

/// Position of a unit relative to the two entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    BeforeE1 = 0,
    E1 = 1,
    Between = 2,
    E2 = 3,
    AfterE2 = 4,
}

pub const ZONES: usize = 5;

/// Row ids of one sequence unit in each table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFeatures {
    pub word: usize,
    pub pos: usize,
    pub zone: Zone,
    pub et: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTables {
    pub words: EmbeddingTable,
    pub pos: EmbeddingTable,
    pub pi: EmbeddingTable,
    pub et: EmbeddingTable,
}

/// Builds the input vector of one unit. ADP mode requires the subtree vector.
pub fn assemble_input(
    unit: &UnitFeatures,
    mode: InputMode,
    tables: &FeatureTables,
    config: &LexicalFeatureConfig,
    subtree: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(tables.words.dim() + subtree.map_or(0, |s| s.len()) + config.total_dim());
    out.extend_from_slice(tables.words.row(unit.word));
    if mode == InputMode::Adp {
        let c = subtree.ok_or_else(|| Error::Config("ADP input requires a subtree vector".into()))?;
        out.extend_from_slice(c);
    }
    if config.pos.is_some() {
        out.extend_from_slice(tables.pos.row(unit.pos));
    }
    if config.pi.is_some() {
        out.extend_from_slice(tables.pi.row(unit.zone as usize));
    }
    if config.et.is_some() {
        out.extend_from_slice(tables.et.row(unit.et));
    }
    Ok(out)
}
