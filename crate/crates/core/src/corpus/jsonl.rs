//! Canonical line-delimited JSON corpus: one document per line.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EntityMention, RelationInstance, Sentence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    sentences: Vec<SentenceRecord>,
    #[serde(default)]
    mentions: Vec<MentionRecord>,
    #[serde(default)]
    relations: Vec<RelationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SentenceRecord {
    tokens: Vec<TokenRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenRecord {
    form: String,
    pos: String,
    head: usize,
    deprel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MentionRecord {
    id: String,
    sentence: usize,
    first: usize,
    last: usize,
    etype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationRecord {
    e1: String,
    e2: String,
    label: String,
}

/// Parses a whole JSONL text. Blank lines are ignored.
pub fn load_jsonl(text: &str) -> Result<Vec<Document>> {
    read_jsonl(text.as_bytes())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocRecord = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            line: n + 1,
            message: e.to_string(),
        })?;
        docs.push(from_record(record, n + 1)?);
    }
    Ok(docs)
}

fn from_record(r: DocRecord, line: usize) -> Result<Document> {
    let sentences = r
        .sentences
        .into_iter()
        .enumerate()
        .map(|(si, s)| {
            let tokens = s
                .tokens
                .into_iter()
                .enumerate()
                .map(|(ti, t)| {
                    let char_span = match (t.start, t.end) {
                        (Some(a), Some(b)) => Some((a, b)),
                        (None, None) => None,
                        _ => {
                            return Err(Error::Jsonl {
                                line,
                                message: format!("sentence {si} token {}: start and end must appear together", ti + 1),
                            })
                        }
                    };
                    Ok(Token {
                        index: ti + 1,
                        surface: t.form,
                        pos: t.pos,
                        head: t.head,
                        deprel: t.deprel,
                        char_span,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sentence { doc_index: si, tokens })
        })
        .collect::<Result<Vec<_>>>()?;
    let mentions = r
        .mentions
        .into_iter()
        .map(|m| EntityMention::new(m.id, m.sentence, m.first, m.last, m.etype))
        .collect();
    let relations = r
        .relations
        .into_iter()
        .map(|x| RelationInstance::new(x.e1, x.e2, x.label))
        .collect();
    Document::new(r.id, r.text, sentences, mentions, relations)
}

fn to_record(doc: &Document) -> DocRecord {
    DocRecord {
        id: doc.id.clone(),
        text: doc.text.clone(),
        sentences: doc
            .sentences
            .iter()
            .map(|s| SentenceRecord {
                tokens: s
                    .tokens
                    .iter()
                    .map(|t| TokenRecord {
                        form: t.surface.clone(),
                        pos: t.pos.clone(),
                        head: t.head,
                        deprel: t.deprel.clone(),
                        start: t.char_span.map(|c| c.0),
                        end: t.char_span.map(|c| c.1),
                    })
                    .collect(),
            })
            .collect(),
        mentions: doc
            .mentions
            .iter()
            .map(|m| MentionRecord {
                id: m.id.clone(),
                sentence: m.sentence,
                first: m.first,
                last: m.last,
                etype: m.etype.clone(),
            })
            .collect(),
        relations: doc
            .gold_relations
            .iter()
            .map(|r| RelationRecord {
                e1: r.e1.clone(),
                e2: r.e2.clone(),
                label: r.label.clone(),
            })
            .collect(),
    }
}

pub fn to_jsonl_line(doc: &Document) -> String {
    serde_json::to_string(&to_record(doc)).expect("document records always serialize")
}

pub fn write_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&to_jsonl_line(d));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_SENTENCES: &str = r#"{"id":"d1","sentences":[{"tokens":[{"form":"Paul","pos":"NNP","head":2,"deprel":"nsubj"},{"form":"runs","pos":"VBZ","head":0,"deprel":"root"}]},{"tokens":[{"form":"He","pos":"PRP","head":2,"deprel":"nsubj"},{"form":"won","pos":"VBD","head":0,"deprel":"root"}]}],"mentions":[{"id":"T1","sentence":0,"first":1,"last":1,"etype":"Per"},{"id":"T2","sentence":1,"first":1,"last":1,"etype":"Per"}],"relations":[{"e1":"T1","e2":"T2","label":"Same"}]}"#;

    #[test]
    fn zero_lines_is_empty_corpus() {
        assert!(load_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn valid_record_loads() {
        let docs = load_jsonl(TWO_SENTENCES).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences.len(), 2);
        assert_eq!(docs[0].mentions[1].head_token, 1);
        assert_eq!(write_jsonl(&docs).trim_end(), TWO_SENTENCES);
    }

    #[test]
    fn mention_in_missing_sentence_names_document() {
        let bad = TWO_SENTENCES.replace(r#""sentence":1"#, r#""sentence":5"#);
        let err = load_jsonl(&bad).unwrap_err();
        assert!(matches!(err, Error::Invariant { ref doc, .. } if doc == "d1"), "{err}");
    }

    #[test]
    fn schema_violation_reports_line() {
        let text = format!("{TWO_SENTENCES}\n\n{{\"id\":3}}\n");
        match load_jsonl(&text).unwrap_err() {
            Error::Jsonl { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }
}
