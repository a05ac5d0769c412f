//! Annotated-corpus model: dependency-parsed sentences, typed entity mentions
//! and gold relations, plus the readers that produce them.

mod candidates;
mod conllu;
mod jsonl;
mod standoff;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use candidates::{
    cross_validation_folds, generate_candidates, relation_stats, sample_negatives, split_corpus,
    CandidateKey, CandidatePair, RelationStats,
};
pub use conllu::{parse_conllu, parse_conllu_documents, write_conllu};
pub use jsonl::{load_jsonl, read_jsonl, to_jsonl_line, write_jsonl};
pub use standoff::{import_standoff, parse_a1, parse_a2, StandoffEntity, StandoffRelation};

/// Label of candidate pairs that hold no relation.
pub const NONE_LABEL: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position within the sentence.
    pub index: usize,
    pub surface: String,
    pub pos: String,
    /// Index of the governor; 0 marks the syntactic root.
    pub head: usize,
    pub deprel: String,
    /// `[start, end)` in Unicode scalar values of the document text.
    pub char_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_index: usize,
    pub tokens: Vec<Token>,
}

/// A violated tree invariant, pointing at the token that exposes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TreeViolation {
    pub token: usize,
    pub message: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Index of the root token. Only meaningful on validated sentences.
    pub fn root(&self) -> usize {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .map(|t| t.index)
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.check_tree().map_err(|v| {
            Error::Graph(format!(
                "sentence {}: token {}: {}",
                self.doc_index, v.token, v.message
            ))
        })
    }

    pub(crate) fn check_tree(&self) -> std::result::Result<(), TreeViolation> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(TreeViolation {
                token: 0,
                message: "empty sentence".into(),
            });
        }
        let mut root = None;
        for (i, tok) in self.tokens.iter().enumerate() {
            let fail = |message: &str| TreeViolation {
                token: i + 1,
                message: message.to_string(),
            };
            if tok.index != i + 1 {
                return Err(fail("token ids must run 1..n"));
            }
            if tok.head > n {
                return Err(fail("head out of range"));
            }
            if tok.head == tok.index {
                return Err(fail("self-loop head"));
            }
            if tok.deprel.is_empty() {
                return Err(fail("empty dependency relation"));
            }
            if tok.head == 0 {
                if root.is_some() {
                    return Err(fail("multiple roots"));
                }
                root = Some(tok.index);
            }
        }
        if root.is_none() {
            return Err(TreeViolation {
                token: 1,
                message: "no root".into(),
            });
        }
        // Every chain of heads must reach 0 within n steps.
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(TreeViolation {
                        token: start,
                        message: "cyclic heads".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: String,
    pub sentence: usize,
    /// Inclusive token range `[first, last]`.
    pub first: usize,
    pub last: usize,
    pub etype: String,
    /// Head token of the span; filled in by [`Document::new`].
    #[serde(default)]
    pub head_token: usize,
}

impl EntityMention {
    pub fn new(
        id: impl Into<String>,
        sentence: usize,
        first: usize,
        last: usize,
        etype: impl Into<String>,
    ) -> Self {
        EntityMention {
            id: id.into(),
            sentence,
            first,
            last,
            etype: etype.into(),
            head_token: 0,
        }
    }

    pub fn contains(&self, sentence: usize, token: usize) -> bool {
        self.sentence == sentence && (self.first..=self.last).contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub e1: String,
    pub e2: String,
    pub label: String,
}

impl RelationInstance {
    pub fn new(e1: impl Into<String>, e2: impl Into<String>, label: impl Into<String>) -> Self {
        RelationInstance {
            e1: e1.into(),
            e2: e2.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: Option<String>,
    pub sentences: Vec<Sentence>,
    pub mentions: Vec<EntityMention>,
    pub gold_relations: Vec<RelationInstance>,
}

impl Document {
    /// Validates every invariant and computes mention heads.
    pub fn new(
        id: impl Into<String>,
        text: Option<String>,
        mut sentences: Vec<Sentence>,
        mut mentions: Vec<EntityMention>,
        gold_relations: Vec<RelationInstance>,
    ) -> Result<Self> {
        let id = id.into();
        for (i, s) in sentences.iter_mut().enumerate() {
            s.doc_index = i;
            s.check_tree().map_err(|v| {
                Error::invariant(
                    &id,
                    format!("sentence {i}, token {}: {}", v.token, v.message),
                )
            })?;
        }
        let mut ids = HashSet::new();
        for m in &mut mentions {
            if !ids.insert(m.id.clone()) {
                return Err(Error::invariant(&id, format!("duplicate mention id {}", m.id)));
            }
            let sentence = sentences.get(m.sentence).ok_or_else(|| {
                Error::invariant(
                    &id,
                    format!(
                        "mention {} refers to sentence {} of {}",
                        m.id,
                        m.sentence,
                        sentences.len()
                    ),
                )
            })?;
            if m.first == 0 || m.first > m.last || m.last > sentence.len() {
                return Err(Error::invariant(
                    &id,
                    format!(
                        "mention {} span [{}, {}] outside sentence of {} tokens",
                        m.id,
                        m.first,
                        m.last,
                        sentence.len()
                    ),
                ));
            }
            m.head_token = crate::graph::entity_head(m, sentence)?;
        }
        for r in &gold_relations {
            if r.e1 == r.e2 {
                return Err(Error::invariant(&id, format!("relation {} links {} to itself", r.label, r.e1)));
            }
            for arg in [&r.e1, &r.e2] {
                if !ids.contains(arg) {
                    return Err(Error::invariant(
                        &id,
                        format!("relation {} references unknown mention {arg}", r.label),
                    ));
                }
            }
        }
        Ok(Document {
            id,
            text,
            sentences,
            mentions,
            gold_relations,
        })
    }

    pub fn mention(&self, id: &str) -> Option<&EntityMention> {
        self.mentions.iter().find(|m| m.id == id)
    }

    pub fn token(&self, sentence: usize, index: usize) -> Option<&Token> {
        self.sentences.get(sentence).and_then(|s| s.token(index))
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// A relation label with the entity types admissible for its two roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub label: String,
    pub role1: String,
    pub role2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationSchema {
    relations: Vec<RelationType>,
}

impl RelationSchema {
    pub fn new(relations: Vec<RelationType>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &relations {
            if r.label == NONE_LABEL {
                return Err(Error::Config(format!("{NONE_LABEL} cannot be a schema label")));
            }
            if r.label.is_empty() || !seen.insert(r.label.clone()) {
                return Err(Error::Config(format!("duplicate or empty schema label {:?}", r.label)));
            }
        }
        Ok(RelationSchema { relations })
    }

    /// Parses `Label:Role1Type:Role2Type` entries.
    pub fn parse<S: AsRef<str>>(entries: &[S]) -> Result<Self> {
        let relations = entries
            .iter()
            .map(|e| {
                let parts: Vec<&str> = e.as_ref().split(':').collect();
                match parts.as_slice() {
                    [label, t1, t2] if !t1.is_empty() && !t2.is_empty() => Ok(RelationType {
                        label: label.to_string(),
                        role1: t1.to_string(),
                        role2: t2.to_string(),
                    }),
                    _ => Err(Error::Config(format!(
                        "schema entry {:?} is not Label:Type1:Type2",
                        e.as_ref()
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(relations)
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(|r| r.label.as_str())
    }

    pub fn get(&self, label: &str) -> Option<&RelationType> {
        self.relations.iter().find(|r| r.label == label)
    }

    pub fn admits(&self, type1: &str, type2: &str) -> bool {
        self.relations
            .iter()
            .any(|r| r.role1 == type1 && r.role2 == type2)
    }

    pub fn admits_label(&self, label: &str, type1: &str, type2: &str) -> bool {
        self.get(label)
            .is_some_and(|r| r.role1 == type1 && r.role2 == type2)
    }
}

impl fmt::Display for RelationSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries: Vec<String> = self
            .relations
            .iter()
            .map(|r| format!("{}:{}:{}", r.label, r.role1, r.role2))
            .collect();
        write!(f, "{}", entries.join(","))
    }
}

/// Documents, sentences, mentions and relations, for ingest summaries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusCounts {
    pub documents: usize,
    pub sentences: usize,
    pub mentions: usize,
    pub relations: usize,
    pub intra: usize,
    pub inter: usize,
}

pub fn corpus_counts(docs: &[Document]) -> CorpusCounts {
    let mut c = CorpusCounts {
        documents: docs.len(),
        ..Default::default()
    };
    for d in docs {
        c.sentences += d.sentences.len();
        c.mentions += d.mentions.len();
        c.relations += d.gold_relations.len();
        for r in &d.gold_relations {
            let (Some(a), Some(b)) = (d.mention(&r.e1), d.mention(&r.e2)) else {
                continue;
            };
            if a.sentence == b.sentence {
                c.intra += 1;
            } else {
                c.inter += 1;
            }
        }
    }
    c
}

/// Lookup of documents by id, preserving corpus order.
pub fn index_documents(docs: &[Document]) -> BTreeMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}
