//! The full classifier: embedding tables, the optional subtree encoder and
//! the sequence encoder, wired together for one candidate pair at a time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePair, Document, RelationSchema, NONE_LABEL};
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::features::{
    assemble_input, build_feature_vocab, build_vocab, input_dim, EmbeddingTable, FeatureTables, InputMode,
    LexicalFeatureConfig, UnitFeatures, Vocab, Zone, ZONES,
};
use crate::graph::{
    build_adp, build_document_graph, linear_sequence, path_token_sequence, shortest_path, DocumentGraph, Marker,
    NodeRef, Subtree, TokenUnit,
};
use crate::linalg::{self, Matrix};
use crate::recursive::{self, RecursiveGrads, RecursiveParams, SubtreeEncoding};
use crate::sequence::{self, SequenceParams};

/// Entity type for words outside every mention.
pub const OUTSIDE_TYPE: &str = "O";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "iDepNN-ADP")]
    Adp,
    #[serde(rename = "iDepNN-SDP")]
    Sdp,
    #[serde(rename = "i-biRNN")]
    BiRnn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Adp, Variant::Sdp, Variant::BiRnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Adp => "iDepNN-ADP",
            Variant::Sdp => "iDepNN-SDP",
            Variant::BiRnn => "i-biRNN",
        }
    }

    pub fn input_mode(self) -> InputMode {
        match self {
            Variant::Adp => InputMode::Adp,
            Variant::Sdp | Variant::BiRnn => InputMode::Sdp,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "idepnn-adp" | "adp" => Ok(Variant::Adp),
            "idepnn-sdp" | "sdp" => Ok(Variant::Sdp),
            "i-birnn" | "birnn" => Ok(Variant::BiRnn),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected iDepNN-ADP, iDepNN-SDP or i-biRNN)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            clip_norm: 5.0,
            max_epochs: 200,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub word_dim: usize,
    pub subtree_dim: usize,
    pub hidden: usize,
    pub features: LexicalFeatureConfig,
    /// Sentence-range cap for training candidates; `None` is unbounded.
    pub k_train: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Depth cap for off-path subtrees; `None` keeps them whole.
    pub max_subtree_depth: Option<usize>,
    /// Minimum training frequency for a word to get its own row.
    pub min_freq: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Adp,
            word_dim: 200,
            subtree_dim: 50,
            hidden: 100,
            features: LexicalFeatureConfig::default(),
            k_train: None,
            optimizer: OptimizerConfig::default(),
            seed: 1,
            max_subtree_depth: None,
            min_freq: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        for (name, v) in [("word_dim", self.word_dim), ("hidden", self.hidden)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.variant == Variant::Adp && self.subtree_dim == 0 {
            return Err(Error::Config("subtree_dim must be positive for iDepNN-ADP".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(o.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if o.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.variant.input_mode(), self.word_dim, self.subtree_dim, &self.features)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub skipped_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub schema: RelationSchema,
    pub words: Vocab,
    pub pos: Vocab,
    pub etypes: Vocab,
    pub tables: FeatureTables,
    /// Present only for iDepNN-ADP.
    pub recursive: Option<RecursiveParams>,
    pub sequence: SequenceParams,
    pub metadata: TrainingMetadata,
}

/// Schema labels in schema order, then NONE.
pub fn label_list(schema: &RelationSchema) -> Vec<String> {
    schema.labels().map(str::to_string).chain([NONE_LABEL.to_string()]).collect()
}

fn feature_table<R: Rng + ?Sized>(vocab: &Vocab, dim: Option<usize>, rng: &mut R) -> EmbeddingTable {
    let mut t = EmbeddingTable::random(vocab.len(), dim.unwrap_or(0), rng);
    t.make_null_row(0);
    t
}

impl TrainedModel {
    /// Fresh parameters with vocabularies drawn from `train_docs`.
    ///
    /// `pretrained` replaces the corpus word vocabulary and its table.
    pub fn initialize<R: Rng + ?Sized>(
        config: &ModelConfig,
        schema: &RelationSchema,
        train_docs: &[&Document],
        pretrained: Option<(Vocab, EmbeddingTable)>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (words, word_table) = match pretrained {
            Some((v, t)) => {
                if t.dim() != config.word_dim {
                    return Err(Error::Dimension {
                        context: "pretrained embeddings",
                        expected: config.word_dim,
                        found: t.dim(),
                    });
                }
                (v, t)
            }
            None => {
                let owned: Vec<Document> = train_docs.iter().map(|d| (*d).clone()).collect();
                let v = build_vocab(&owned, config.min_freq);
                let t = EmbeddingTable::random(v.len(), config.word_dim, rng);
                (v, t)
            }
        };
        let pos_values: BTreeSet<&str> = train_docs
            .iter()
            .flat_map(|d| d.sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.pos.as_str())))
            .collect();
        let pos = build_feature_vocab(pos_values);
        let et_values: BTreeSet<&str> = train_docs
            .iter()
            .flat_map(|d| d.mentions.iter().map(|m| m.etype.as_str()))
            .chain([OUTSIDE_TYPE])
            .collect();
        let etypes = build_feature_vocab(et_values);

        let pos_table = feature_table(&pos, config.features.pos, rng);
        let pi_table = EmbeddingTable::random(ZONES, config.features.pi.unwrap_or(0), rng);
        let et_table = feature_table(&etypes, config.features.et, rng);

        let recursive = if config.variant == Variant::Adp {
            let rels: BTreeSet<&str> = train_docs
                .iter()
                .flat_map(|d| d.sentences.iter().flat_map(|s| s.tokens.iter().map(|t| t.deprel.as_str())))
                .collect();
            Some(RecursiveParams::new(config.word_dim, config.subtree_dim, rels, rng))
        } else {
            None
        };
        let sequence = SequenceParams::new(config.input_dim(), config.hidden, label_list(schema), rng);
        Ok(TrainedModel {
            config: config.clone(),
            schema: schema.clone(),
            words,
            pos,
            etypes,
            tables: FeatureTables {
                words: word_table,
                pos: pos_table,
                pi: pi_table,
                et: et_table,
            },
            recursive,
            sequence,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.sequence.labels
    }

    /// Converts one candidate into its unit sequence.
    pub fn prepare_instance(&self, doc: &Document, graph: &DocumentGraph, cand: &CandidatePair) -> Result<Instance> {
        let m1 = doc
            .mention(&cand.e1)
            .ok_or_else(|| Error::invariant(&doc.id, format!("unknown mention {}", cand.e1)))?;
        let m2 = doc
            .mention(&cand.e2)
            .ok_or_else(|| Error::invariant(&doc.id, format!("unknown mention {}", cand.e2)))?;
        let a = NodeRef::new(m1.sentence, m1.head_token);
        let b = NodeRef::new(m2.sentence, m2.head_token);
        let (nodes, subtrees) = match self.config.variant {
            Variant::BiRnn => (linear_sequence(doc, a, b), None),
            Variant::Sdp => (shortest_path(graph, a, b)?.nodes, None),
            Variant::Adp => {
                let path = shortest_path(graph, a, b)?;
                let adp = build_adp(graph, &path, self.config.max_subtree_depth);
                (path.nodes, Some(adp.subtrees))
            }
        };
        if nodes.is_empty() {
            return Err(Error::Graph(format!("empty sequence for {} -> {}", cand.e1, cand.e2)));
        }
        let last_word = nodes.len() - 1;
        let mut units = Vec::new();
        let mut unit_subtrees = Vec::new();
        let mut word_rows = BTreeMap::new();
        let mut word_index = 0;
        for unit in path_token_sequence(&nodes) {
            match unit {
                TokenUnit::Marker(m) => {
                    let zone = match m {
                        Marker::E1Start => Zone::BeforeE1,
                        Marker::E1End | Marker::E2Start => Zone::Between,
                        Marker::E2End => Zone::AfterE2,
                    };
                    units.push(UnitFeatures {
                        word: self.words.marker_id(m),
                        pos: 0,
                        zone,
                        et: 0,
                    });
                    unit_subtrees.push(None);
                }
                TokenUnit::Word(n) => {
                    let token = doc
                        .token(n.sentence, n.token)
                        .ok_or_else(|| Error::Graph(format!("node {n} outside document")))?;
                    let (zone, etype) = if word_index == 0 {
                        (Zone::E1, m1.etype.as_str())
                    } else if word_index == last_word {
                        (Zone::E2, m2.etype.as_str())
                    } else {
                        let covering = doc.mentions.iter().find(|m| m.contains(n.sentence, n.token));
                        (Zone::Between, covering.map_or(OUTSIDE_TYPE, |m| m.etype.as_str()))
                    };
                    units.push(UnitFeatures {
                        word: self.words.word_id(&token.surface),
                        pos: self.pos.id(&token.pos),
                        zone,
                        et: self.etypes.id(etype),
                    });
                    let subtree = subtrees.as_ref().map(|s| s[word_index].clone());
                    if let Some(s) = &subtree {
                        for d in s.descendants() {
                            let surface = doc.token(d.sentence, d.token).map_or("", |t| t.surface.as_str());
                            word_rows.insert(d, self.words.word_id(surface));
                        }
                    }
                    unit_subtrees.push(subtree);
                    word_index += 1;
                }
            }
        }
        let gold = self.sequence.label_index(&cand.label);
        Ok(Instance {
            candidate: cand.clone(),
            gold,
            units,
            subtrees: unit_subtrees,
            word_rows,
        })
    }

    /// Prepares every candidate, skipping (and counting) those without a
    /// usable sequence.
    pub fn prepare_instances(&self, docs: &[Document], candidates: &[CandidatePair]) -> Result<(Vec<Instance>, usize)> {
        let index: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut graphs: HashMap<&str, Option<DocumentGraph>> = HashMap::new();
        let mut out = Vec::with_capacity(candidates.len());
        let mut skipped = 0;
        for cand in candidates {
            let doc = *index
                .get(cand.doc.as_str())
                .ok_or_else(|| Error::Config(format!("candidate refers to unknown document {}", cand.doc)))?;
            let graph = graphs.entry(doc.id.as_str()).or_insert_with(|| match build_document_graph(doc) {
                Ok(g) => Some(g),
                Err(e) => {
                    warn!("document {}: {e}", doc.id);
                    None
                }
            });
            let Some(graph) = graph.as_ref() else {
                skipped += 1;
                continue;
            };
            match self.prepare_instance(doc, graph, cand) {
                Ok(i) => out.push(i),
                Err(e) => {
                    warn!("skipping {}:{}->{}: {e}", cand.doc, cand.e1, cand.e2);
                    skipped += 1;
                }
            }
        }
        Ok((out, skipped))
    }

    fn word_vector(&self, inst: &Instance, n: NodeRef) -> Vec<f64> {
        let row = inst.word_rows.get(&n).copied().unwrap_or(self.words.unk_id());
        self.tables.words.row(row).to_vec()
    }

    pub fn forward(&self, inst: &Instance) -> Result<ForwardPass> {
        let mode = self.config.variant.input_mode();
        let mut encodings = Vec::with_capacity(inst.units.len());
        let mut inputs = Vec::with_capacity(inst.units.len());
        for (unit, subtree) in inst.units.iter().zip(&inst.subtrees) {
            let encoding = match (&self.recursive, subtree) {
                (Some(params), Some(s)) => {
                    Some(recursive::encode_subtree(s, &|n| self.word_vector(inst, n), params)?)
                }
                _ => None,
            };
            let c = match (&self.recursive, &encoding) {
                (_, Some(e)) => Some(e.c.as_slice()),
                (Some(params), None) => Some(params.leaf.as_slice()),
                (None, _) => None,
            };
            inputs.push(assemble_input(unit, mode, &self.tables, &self.config.features, c)?);
            encodings.push(encoding);
        }
        let states = sequence::forward(inputs, &self.sequence)?;
        Ok(ForwardPass { encodings, states })
    }

    fn gold(&self, inst: &Instance) -> Result<usize> {
        inst.gold.ok_or_else(|| {
            Error::Label(format!(
                "label {:?} of {}:{}->{} is not among the model labels",
                inst.candidate.label, inst.candidate.doc, inst.candidate.e1, inst.candidate.e2
            ))
        })
    }

    pub fn loss(&self, inst: &Instance) -> Result<f64> {
        let gold = self.gold(inst)?;
        Ok(crate::trainer::cross_entropy(&self.forward(inst)?.states.distribution, gold))
    }

    pub fn predict(&self, inst: &Instance) -> Result<Prediction> {
        let states = self.forward(inst)?.states;
        let c = sequence::classify(states.distribution, &self.sequence);
        Ok(Prediction {
            key: inst.candidate.key(),
            sentence_distance: inst.candidate.sentence_distance,
            label: c.label,
            probability: c.probability,
            distribution: c.distribution,
        })
    }

    /// Loss and gradients of every trainable parameter for one instance.
    pub fn loss_and_gradients(&self, inst: &Instance) -> Result<(f64, Gradients)> {
        let gold = self.gold(inst)?;
        let pass = self.forward(inst)?;
        let loss = crate::trainer::cross_entropy(&pass.states.distribution, gold);
        let sg = sequence::backward(&pass.states, gold, &self.sequence)?;
        let mut g = Gradients {
            v: sg.v,
            w: sg.w,
            u: sg.u,
            b_y: sg.b_y,
            w_rel: BTreeMap::new(),
            bias: Vec::new(),
            leaf: Vec::new(),
            words: BTreeMap::new(),
            pos: BTreeMap::new(),
            pi: BTreeMap::new(),
            et: BTreeMap::new(),
        };
        let mut rg = self.recursive.as_ref().map(RecursiveGrads::zeros);
        let d = self.config.word_dim;
        let f = self.config.features;
        for (t, unit) in inst.units.iter().enumerate() {
            let di = &sg.inputs[t];
            let mut off = 0;
            add_row(&mut g.words, &self.tables.words, unit.word, &di[off..off + d]);
            off += d;
            if let (Some(params), Some(rg)) = (&self.recursive, rg.as_mut()) {
                let dc = &di[off..off + params.subtree_dim];
                match &pass.encodings[t] {
                    Some(enc) => recursive::backprop_into(enc, dc, params, rg)?,
                    None => linalg::add_assign(&mut rg.leaf, dc),
                }
                off += params.subtree_dim;
            }
            if let Some(k) = f.pos {
                add_row(&mut g.pos, &self.tables.pos, unit.pos, &di[off..off + k]);
                off += k;
            }
            if let Some(k) = f.pi {
                add_row(&mut g.pi, &self.tables.pi, unit.zone as usize, &di[off..off + k]);
                off += k;
            }
            if let Some(k) = f.et {
                add_row(&mut g.et, &self.tables.et, unit.et, &di[off..off + k]);
            }
        }
        if let Some(rg) = rg {
            for (n, dx) in &rg.words {
                let row = inst.word_rows.get(n).copied().unwrap_or(self.words.unk_id());
                add_row(&mut g.words, &self.tables.words, row, dx);
            }
            g.w_rel = rg.w_rel;
            g.bias = rg.bias;
            g.leaf = rg.leaf;
        }
        if !g.is_finite() {
            return Err(Error::Numeric("gradient".into()));
        }
        Ok((loss, g))
    }

    /// Plain SGD step.
    pub fn apply_gradients(&mut self, g: &Gradients, lr: f64) {
        let s = &mut self.sequence;
        linalg::axpy(-lr, g.v.as_slice(), s.v.as_mut_slice());
        linalg::axpy(-lr, g.w.as_slice(), s.w.as_mut_slice());
        linalg::axpy(-lr, g.u.as_slice(), s.u.as_mut_slice());
        linalg::axpy(-lr, &g.b_y, &mut s.b_y);
        if let Some(r) = self.recursive.as_mut() {
            for (i, m) in &g.w_rel {
                linalg::axpy(-lr, m.as_slice(), r.w_rel[*i].as_mut_slice());
            }
            if !g.bias.is_empty() {
                linalg::axpy(-lr, &g.bias, &mut r.bias);
                linalg::axpy(-lr, &g.leaf, &mut r.leaf);
            }
        }
        for (rows, table) in [
            (&g.words, &mut self.tables.words),
            (&g.pos, &mut self.tables.pos),
            (&g.pi, &mut self.tables.pi),
            (&g.et, &mut self.tables.et),
        ] {
            for (row, grad) in rows {
                linalg::axpy(-lr, grad, table.matrix.row_mut(*row));
            }
        }
    }

    /// Every trainable parameter block with its length.
    pub fn param_keys(&self) -> Vec<(ParamKey, usize)> {
        let s = &self.sequence;
        let mut out = vec![
            (ParamKey::V, s.v.as_slice().len()),
            (ParamKey::W, s.w.as_slice().len()),
            (ParamKey::U, s.u.as_slice().len()),
            (ParamKey::By, s.b_y.len()),
        ];
        if let Some(r) = &self.recursive {
            for (i, m) in r.w_rel.iter().enumerate() {
                out.push((ParamKey::Wrel(i), m.as_slice().len()));
            }
            out.push((ParamKey::Bias, r.bias.len()));
            out.push((ParamKey::Leaf, r.leaf.len()));
        }
        let tables: [(fn(usize) -> ParamKey, &EmbeddingTable); 4] = [
            (ParamKey::Word, &self.tables.words),
            (ParamKey::Pos, &self.tables.pos),
            (ParamKey::Pi, &self.tables.pi),
            (ParamKey::Et, &self.tables.et),
        ];
        for (key, table) in tables {
            if table.dim() == 0 {
                continue;
            }
            for row in 0..table.rows() {
                if table.is_trainable(row) {
                    out.push((key(row), table.dim()));
                }
            }
        }
        out
    }

    pub fn param_mut(&mut self, key: ParamKey) -> Option<&mut [f64]> {
        let s = &mut self.sequence;
        Some(match key {
            ParamKey::V => s.v.as_mut_slice(),
            ParamKey::W => s.w.as_mut_slice(),
            ParamKey::U => s.u.as_mut_slice(),
            ParamKey::By => &mut s.b_y,
            ParamKey::Wrel(i) => self.recursive.as_mut()?.w_rel.get_mut(i)?.as_mut_slice(),
            ParamKey::Bias => &mut self.recursive.as_mut()?.bias,
            ParamKey::Leaf => &mut self.recursive.as_mut()?.leaf,
            ParamKey::Word(r) => self.tables.words.matrix.row_mut(r),
            ParamKey::Pos(r) => self.tables.pos.matrix.row_mut(r),
            ParamKey::Pi(r) => self.tables.pi.matrix.row_mut(r),
            ParamKey::Et(r) => self.tables.et.matrix.row_mut(r),
        })
    }
}

fn add_row(rows: &mut BTreeMap<usize, Vec<f64>>, table: &EmbeddingTable, row: usize, grad: &[f64]) {
    if grad.is_empty() || !table.is_trainable(row) {
        return;
    }
    linalg::add_assign(rows.entry(row).or_insert_with(|| vec![0.0; grad.len()]), grad);
}

/// One candidate ready for the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub candidate: CandidatePair,
    /// Index of the candidate label; `None` when the model lacks it.
    pub gold: Option<usize>,
    pub units: Vec<UnitFeatures>,
    /// Off-path subtree per unit (ADP word units only).
    pub subtrees: Vec<Option<Subtree>>,
    /// Word-table rows of subtree descendants.
    pub word_rows: BTreeMap<NodeRef, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub encodings: Vec<Option<SubtreeEncoding>>,
    pub states: sequence::EncoderStates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    V,
    W,
    U,
    By,
    Wrel(usize),
    Bias,
    Leaf,
    Word(usize),
    Pos(usize),
    Pi(usize),
    Et(usize),
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKey::V => write!(f, "V"),
            ParamKey::W => write!(f, "W"),
            ParamKey::U => write!(f, "U"),
            ParamKey::By => write!(f, "b_y"),
            ParamKey::Wrel(i) => write!(f, "W_r[{i}]"),
            ParamKey::Bias => write!(f, "b"),
            ParamKey::Leaf => write!(f, "c_leaf"),
            ParamKey::Word(r) => write!(f, "word[{r}]"),
            ParamKey::Pos(r) => write!(f, "pos[{r}]"),
            ParamKey::Pi(r) => write!(f, "pi[{r}]"),
            ParamKey::Et(r) => write!(f, "et[{r}]"),
        }
    }
}

/// Gradients of one instance. Embedding rows and relation matrices are
/// sparse; frozen rows never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub v: Matrix,
    pub w: Matrix,
    pub u: Matrix,
    pub b_y: Vec<f64>,
    pub w_rel: BTreeMap<usize, Matrix>,
    /// Empty without the subtree encoder.
    pub bias: Vec<f64>,
    pub leaf: Vec<f64>,
    pub words: BTreeMap<usize, Vec<f64>>,
    pub pos: BTreeMap<usize, Vec<f64>>,
    pub pi: BTreeMap<usize, Vec<f64>>,
    pub et: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        [self.v.as_slice(), self.w.as_slice(), self.u.as_slice(), &self.b_y, &self.bias, &self.leaf]
            .into_iter()
            .chain(self.w_rel.values().map(Matrix::as_slice))
            .chain(
                [&self.words, &self.pos, &self.pi, &self.et]
                    .into_iter()
                    .flat_map(|m| m.values().map(Vec::as_slice)),
            )
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        [
            self.v.as_mut_slice(),
            self.w.as_mut_slice(),
            self.u.as_mut_slice(),
            &mut self.b_y,
            &mut self.bias,
            &mut self.leaf,
        ]
        .into_iter()
        .chain(self.w_rel.values_mut().map(Matrix::as_mut_slice))
        .chain(
            [&mut self.words, &mut self.pos, &mut self.pi, &mut self.et]
                .into_iter()
                .flat_map(|m| m.values_mut().map(Vec::as_mut_slice)),
        )
    }

    pub fn norm(&self) -> f64 {
        self.blocks().map(linalg::sum_squares).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Rescales to norm `max_norm` if larger; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    /// Gradient block for `key`; `None` means zero.
    pub fn get(&self, key: ParamKey) -> Option<&[f64]> {
        match key {
            ParamKey::V => Some(self.v.as_slice()),
            ParamKey::W => Some(self.w.as_slice()),
            ParamKey::U => Some(self.u.as_slice()),
            ParamKey::By => Some(&self.b_y),
            ParamKey::Wrel(i) => self.w_rel.get(&i).map(Matrix::as_slice),
            ParamKey::Bias => (!self.bias.is_empty()).then_some(self.bias.as_slice()),
            ParamKey::Leaf => (!self.leaf.is_empty()).then_some(self.leaf.as_slice()),
            ParamKey::Word(r) => self.words.get(&r).map(Vec::as_slice),
            ParamKey::Pos(r) => self.pos.get(&r).map(Vec::as_slice),
            ParamKey::Pi(r) => self.pi.get(&r).map(Vec::as_slice),
            ParamKey::Et(r) => self.et.get(&r).map(Vec::as_slice),
        }
    }
}
