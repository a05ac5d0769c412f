//! CoNLL-U reading and writing. Only the basic HEAD/DEPREL tree is kept;
//! multiword-token ranges and empty nodes are skipped.

use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};

const COLUMNS: usize = 10;

struct Block {
    ordinal: usize,
    tokens: Vec<Token>,
    lines: Vec<usize>,
}

/// Parses every sentence block of `text`, numbering them in order.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>> {
    Ok(parse_conllu_documents(text, "")?
        .into_iter()
        .flat_map(|(_, s)| s)
        .enumerate()
        .map(|(i, mut s)| {
            s.doc_index = i;
            s
        })
        .collect())
}

/// Splits on `# newdoc id = ...` comments. Sentences before the first marker
/// belong to a document named `default_id`.
pub fn parse_conllu_documents(text: &str, default_id: &str) -> Result<Vec<(String, Vec<Sentence>)>> {
    let mut docs: Vec<(String, Vec<Sentence>)> = Vec::new();
    let mut current_id = default_id.to_string();
    let mut current: Vec<Sentence> = Vec::new();
    let mut block: Option<Block> = None;
    let mut ordinal = 0;

    let finish = |block: &mut Option<Block>, current: &mut Vec<Sentence>| -> Result<()> {
        if let Some(b) = block.take() {
            let sentence = Sentence {
                doc_index: current.len(),
                tokens: b.tokens,
            };
            if let Err(v) = sentence.check_tree() {
                let line = b.lines.get(v.token.saturating_sub(1)).copied().unwrap_or(0);
                return Err(Error::Conllu {
                    sentence: b.ordinal,
                    line,
                    message: v.message,
                });
            }
            current.push(sentence);
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut block, &mut current)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = newdoc_id(comment) {
                finish(&mut block, &mut current)?;
                if !current.is_empty() || !docs.is_empty() || current_id != default_id {
                    docs.push((std::mem::take(&mut current_id), std::mem::take(&mut current)));
                }
                current_id = id;
            }
            continue;
        }
        let b = block.get_or_insert_with(|| {
            ordinal += 1;
            Block {
                ordinal,
                tokens: Vec::new(),
                lines: Vec::new(),
            }
        });
        let err = |message: String| Error::Conllu {
            sentence: b.ordinal,
            line: lineno,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(err(format!("expected {COLUMNS} columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| err(format!("non-integer ID {:?}", cols[0])))?;
        if index != b.tokens.len() + 1 {
            return Err(err(format!("expected ID {}, found {index}", b.tokens.len() + 1)));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(format!("non-integer HEAD {:?}", cols[6])))?;
        let deprel = cols[7];
        if deprel.is_empty() || deprel == "_" {
            return Err(err("missing DEPREL".into()));
        }
        let pos = if cols[3] != "_" { cols[3] } else { cols[4] };
        let char_span = token_range(cols[9]).map_err(err)?;
        b.tokens.push(Token {
            index,
            surface: cols[1].to_string(),
            pos: pos.to_string(),
            head,
            deprel: deprel.to_string(),
            char_span,
        });
        b.lines.push(lineno);
    }
    finish(&mut block, &mut current)?;
    if !current.is_empty() || current_id != default_id {
        docs.push((current_id, current));
    }
    Ok(docs)
}

fn newdoc_id(comment: &str) -> Option<String> {
    let rest = comment.trim().strip_prefix("newdoc")?;
    let id = rest
        .trim()
        .strip_prefix("id")
        .and_then(|r| r.trim().strip_prefix('='))
        .map(|r| r.trim().to_string())
        .unwrap_or_default();
    Some(id)
}

fn token_range(misc: &str) -> std::result::Result<Option<(usize, usize)>, String> {
    for item in misc.split('|') {
        if let Some(v) = item.strip_prefix("TokenRange=") {
            let (a, b) = v
                .split_once(['-', ':'])
                .ok_or_else(|| format!("malformed TokenRange {v:?}"))?;
            let start = a.parse().map_err(|_| format!("malformed TokenRange {v:?}"))?;
            let end = b.parse().map_err(|_| format!("malformed TokenRange {v:?}"))?;
            if end < start {
                return Err(format!("TokenRange {v:?} ends before it starts"));
            }
            return Ok(Some((start, end)));
        }
    }
    Ok(None)
}

/// Writes sentences back out as 10-column CoNLL-U.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for t in &s.tokens {
            let misc = match t.char_span {
                Some((a, b)) => format!("TokenRange={a}-{b}"),
                None => "_".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t{}\n",
                t.index, t.surface, t.pos, t.head, t.deprel, misc
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, form: &str, head: &str, rel: &str) -> String {
        format!("{id}\t{form}\t{form}\tX\t_\t_\t{head}\t{rel}\t_\t_")
    }

    #[test]
    fn empty_input_has_no_sentences() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n# just a comment\n").unwrap().is_empty());
    }

    #[test]
    fn two_token_block() {
        let text = format!("{}\n{}\n", row(1, "Paul", "2", "nsubj"), row(2, "runs", "0", "root"));
        let s = parse_conllu(&text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[0].root(), 2);
        assert_eq!(s[0].tokens[0].deprel, "nsubj");
    }

    #[test]
    fn self_loop_is_reported_with_location() {
        let text = format!(
            "# sent\n{}\n{}\n\n{}\n{}\n",
            row(1, "a", "0", "root"),
            row(2, "b", "1", "dep"),
            row(1, "c", "0", "root"),
            row(2, "d", "2", "dep")
        );
        match parse_conllu(&text).unwrap_err() {
            Error::Conllu { sentence, line, message } => {
                assert_eq!(sentence, 2);
                assert_eq!(line, 6);
                assert_eq!(message, "self-loop head");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_heads_are_errors() {
        let non_int = format!("{}\n{}\n", row(1, "a", "x", "dep"), row(2, "b", "0", "root"));
        assert!(parse_conllu(&non_int).unwrap_err().to_string().contains("non-integer HEAD"));
        let out_of_range = format!("{}\n{}\n", row(1, "a", "7", "dep"), row(2, "b", "0", "root"));
        assert!(parse_conllu(&out_of_range).unwrap_err().to_string().contains("out of range"));
        let two_roots = format!("{}\n{}\n", row(1, "a", "0", "root"), row(2, "b", "0", "root"));
        assert!(parse_conllu(&two_roots).unwrap_err().to_string().contains("multiple roots"));
        let cycle = format!(
            "{}\n{}\n{}\n",
            row(1, "a", "0", "root"),
            row(2, "b", "3", "dep"),
            row(3, "c", "2", "dep")
        );
        assert!(parse_conllu(&cycle).unwrap_err().to_string().contains("cyclic"));
    }

    #[test]
    fn token_range_and_multiword_lines() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\tdo\tAUX\t_\t_\t2\taux\t_\tTokenRange=0-2\n\
                    2\tn't\tnot\tPART\t_\t_\t0\troot\t_\tSpaceAfter=No|TokenRange=2:5\n";
        let s = parse_conllu(text).unwrap();
        assert_eq!(s[0].tokens[0].char_span, Some((0, 2)));
        assert_eq!(s[0].tokens[1].char_span, Some((2, 5)));
        assert_eq!(s[0].tokens[1].pos, "PART");
    }

    #[test]
    fn newdoc_markers_split_documents() {
        let text = format!(
            "# newdoc id = A\n{}\n\n# newdoc id = B\n{}\n\n{}\n",
            row(1, "a", "0", "root"),
            row(1, "b", "0", "root"),
            row(1, "c", "0", "root")
        );
        let docs = parse_conllu_documents(&text, "x").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].0, "A");
        assert_eq!(docs[1].1.len(), 2);
        assert_eq!(docs[1].1[1].doc_index, 1);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let text = "1\tdo\t_\tAUX\t_\t_\t2\taux\t_\tTokenRange=0-2\n2\tit\t_\tPRON\t_\t_\t0\troot\t_\t_\n\n";
        let s = parse_conllu(text).unwrap();
        assert_eq!(write_conllu(&s), text);
    }
}
