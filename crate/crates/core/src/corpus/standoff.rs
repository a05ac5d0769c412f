//! BioNLP shared-task standoff annotations (`.txt`, `.a1`, `.a2`).
//!
//! Entities are aligned to the minimal token span covering their character
//! range; offsets count Unicode scalar values.

use std::collections::HashMap;

use log::warn;

use crate::corpus::{Document, EntityMention, RelationInstance, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffEntity {
    pub id: String,
    pub etype: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandoffRelation {
    pub id: String,
    pub label: String,
    pub arg1: String,
    pub arg2: String,
}

fn standoff_err(doc: &str, message: String) -> Error {
    Error::Standoff {
        doc: doc.to_string(),
        message,
    }
}

/// Reads `T` lines. Discontinuous spans (`a b;c d`) collapse to their hull.
pub fn parse_a1(doc: &str, text: &str) -> Result<Vec<StandoffEntity>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if !line.starts_with('T') {
            continue;
        }
        let err = |m: &str| standoff_err(doc, format!("line {}: {m}", n + 1));
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let ann = fields.next().ok_or_else(|| err("missing annotation field"))?;
        let (etype, offsets) = ann.split_once(' ').ok_or_else(|| err("missing offsets"))?;
        let mut start = usize::MAX;
        let mut end = 0;
        for frag in offsets.split(';') {
            let (a, b) = frag.trim().split_once(' ').ok_or_else(|| err("malformed offsets"))?;
            let a: usize = a.parse().map_err(|_| err("non-integer offset"))?;
            let b: usize = b.parse().map_err(|_| err("non-integer offset"))?;
            if b < a {
                return Err(err("offset end before start"));
            }
            start = start.min(a);
            end = end.max(b);
        }
        out.push(StandoffEntity {
            id: id.to_string(),
            etype: etype.to_string(),
            start,
            end,
        });
    }
    Ok(out)
}

/// Reads `R` lines; the first argument fills role 1, the second role 2.
pub fn parse_a2(doc: &str, text: &str) -> Result<Vec<StandoffRelation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if !line.starts_with('R') {
            continue;
        }
        let err = |m: &str| standoff_err(doc, format!("line {}: {m}", n + 1));
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let ann = fields.next().ok_or_else(|| err("missing annotation field"))?;
        let mut parts = ann.split_whitespace();
        let label = parts.next().ok_or_else(|| err("missing label"))?;
        let mut args = parts.map(|p| p.split_once(':').map(|(_, id)| id).unwrap_or(p));
        let (Some(arg1), Some(arg2)) = (args.next(), args.next()) else {
            return Err(err("relation needs two arguments"));
        };
        out.push(StandoffRelation {
            id: id.to_string(),
            label: label.to_string(),
            arg1: arg1.to_string(),
            arg2: arg2.to_string(),
        });
    }
    Ok(out)
}

/// Aligns standoff entities to token spans and builds a validated document.
///
/// Entities that cross a sentence boundary (titles, paragraphs) are dropped
/// unless a relation refers to them, in which case the import fails.
pub fn import_standoff(
    doc_id: &str,
    txt: &str,
    a1: &str,
    a2: Option<&str>,
    sentences: Vec<Sentence>,
) -> Result<Document> {
    let chars: Vec<char> = txt.chars().collect();
    for s in &sentences {
        if let Some(t) = s.tokens.iter().find(|t| t.char_span.is_none()) {
            return Err(standoff_err(
                doc_id,
                format!("sentence {} token {} has no character offsets", s.doc_index, t.index),
            ));
        }
    }

    let mut entities = parse_a1(doc_id, a1)?;
    let relations = match a2 {
        Some(a2) => {
            entities.extend(parse_a1(doc_id, a2)?);
            parse_a2(doc_id, a2)?
        }
        None => Vec::new(),
    };

    let mut mentions = Vec::new();
    let mut dropped: HashMap<String, String> = HashMap::new();
    for e in &entities {
        match align_entity(e, &chars, &sentences) {
            Ok(Some((sentence, first, last))) => {
                mentions.push(EntityMention::new(&e.id, sentence, first, last, &e.etype))
            }
            Ok(None) => {
                warn!("{doc_id}: entity {} crosses a sentence boundary, skipped", e.id);
                dropped.insert(e.id.clone(), e.etype.clone());
            }
            Err(message) => {
                return Err(standoff_err(doc_id, format!("entity {}: {message}", e.id)));
            }
        }
    }

    let mut gold = Vec::new();
    for r in &relations {
        for arg in [&r.arg1, &r.arg2] {
            if dropped.contains_key(arg) {
                return Err(standoff_err(
                    doc_id,
                    format!("relation {} argument {arg} crosses a sentence boundary", r.id),
                ));
            }
            if !mentions.iter().any(|m| &m.id == arg) {
                return Err(standoff_err(
                    doc_id,
                    format!("relation {} references unknown entity {arg}", r.id),
                ));
            }
        }
        gold.push(RelationInstance::new(&r.arg1, &r.arg2, &r.label));
    }

    Document::new(doc_id, Some(txt.to_string()), sentences, mentions, gold)
}

/// Returns `(sentence, first, last)` for the minimal covering token span,
/// `None` when the covering tokens lie in different sentences.
fn align_entity(
    e: &StandoffEntity,
    chars: &[char],
    sentences: &[Sentence],
) -> std::result::Result<Option<(usize, usize, usize)>, String> {
    if e.end > chars.len() {
        return Err(format!("offsets {}-{} exceed text length {}", e.start, e.end, chars.len()));
    }
    let overlapping: Vec<(usize, usize, (usize, usize))> = sentences
        .iter()
        .flat_map(|s| {
            s.tokens.iter().filter_map(move |t| {
                let span = t.char_span?;
                (span.0 < e.end && span.1 > e.start && span.0 < span.1)
                    .then_some((s.doc_index, t.index, span))
            })
        })
        .collect();
    let (Some(first), Some(last)) = (overlapping.first(), overlapping.last()) else {
        return Err(format!("offsets {}-{} not covered by any token", e.start, e.end));
    };
    // Every non-space character of the entity must fall inside some token.
    for pos in e.start..e.end {
        if chars[pos].is_whitespace() {
            continue;
        }
        if !overlapping.iter().any(|(_, _, (a, b))| (*a..*b).contains(&pos)) {
            return Err(format!(
                "character {pos} of offsets {}-{} is outside every token (tokenization mismatch)",
                e.start, e.end
            ));
        }
    }
    if first.0 != last.0 {
        return Ok(None);
    }
    Ok(Some((first.0, first.1, last.1)))
}
