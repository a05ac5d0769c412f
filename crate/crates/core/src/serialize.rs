//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IDNN" u32:version
//! repeated sections:
//!   u8:1  u64:len  json bytes              (exactly one, first)
//!   u8:2  u32:len  name  u64:rows  u64:cols  f64 × rows·cols
//! u8:0                                     end marker
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::RelationSchema;
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, FeatureTables, Vocab};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, TrainedModel, TrainingMetadata};
use crate::recursive::RecursiveParams;
use crate::sequence::SequenceParams;

pub const MAGIC: &[u8; 4] = b"IDNN";
pub const FORMAT_VERSION: u32 = 1;

const TAG_END: u8 = 0;
const TAG_JSON: u8 = 1;
const TAG_TENSOR: u8 = 2;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schema: RelationSchema,
    labels: Vec<String>,
    words: Vocab,
    pos: Vocab,
    etypes: Vocab,
    frozen: BTreeMap<String, Vec<bool>>,
    relations: Option<Vec<String>>,
    metadata: TrainingMetadata,
}

fn tensors(m: &TrainedModel) -> Vec<(String, Matrix)> {
    let mut out = vec![
        ("embed.words".to_string(), m.tables.words.matrix.clone()),
        ("embed.pos".to_string(), m.tables.pos.matrix.clone()),
        ("embed.pi".to_string(), m.tables.pi.matrix.clone()),
        ("embed.et".to_string(), m.tables.et.matrix.clone()),
    ];
    if let Some(r) = &m.recursive {
        for (i, w) in r.w_rel.iter().enumerate() {
            out.push((format!("subtree.w_rel.{i}"), w.clone()));
        }
        out.push(("subtree.bias".into(), Matrix::from_vec(1, r.bias.len(), r.bias.clone())));
        out.push(("subtree.leaf".into(), Matrix::from_vec(1, r.leaf.len(), r.leaf.clone())));
    }
    let s = &m.sequence;
    out.push(("seq.v".into(), s.v.clone()));
    out.push(("seq.w".into(), s.w.clone()));
    out.push(("seq.u".into(), s.u.clone()));
    out.push(("seq.b_y".into(), Matrix::from_vec(1, s.b_y.len(), s.b_y.clone())));
    out
}

pub fn save_model<W: Write>(model: &TrainedModel, mut w: W) -> Result<()> {
    let t = &model.tables;
    let frozen = [
        ("words", &t.words),
        ("pos", &t.pos),
        ("pi", &t.pi),
        ("et", &t.et),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.frozen.clone()))
    .collect();
    let header = Header {
        config: model.config.clone(),
        schema: model.schema.clone(),
        labels: model.sequence.labels.clone(),
        words: model.words.clone(),
        pos: model.pos.clone(),
        etypes: model.etypes.clone(),
        frozen,
        relations: model.recursive.as_ref().map(|r| r.relations.clone()),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[TAG_JSON])?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (name, m) in tensors(model) {
        w.write_all(&[TAG_TENSOR])?;
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
        for v in m.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&[TAG_END])?;
    w.flush()?;
    Ok(())
}

pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut out = Vec::new();
    save_model(model, &mut out).expect("writing to memory cannot fail");
    out
}

pub fn save_model_file(model: &TrainedModel, path: &Path) -> Result<()> {
    save_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model_file(path: &Path) -> Result<TrainedModel> {
    load_model(BufReader::new(File::open(path)?))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated model file while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Guards allocations against corrupt length fields.
const MAX_SECTION: u64 = 1 << 34;

pub fn load_model<R: Read>(mut r: R) -> Result<TrainedModel> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic bytes)".into()));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if read_u8(&mut r, "section tag")? != TAG_JSON {
        return Err(Error::Format("expected configuration section".into()));
    }
    let len = read_u64(&mut r, "configuration length")?;
    if len > MAX_SECTION {
        return Err(Error::Format("configuration section too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut r, &mut json, "configuration")?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("configuration: {e}")))?;

    let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
    loop {
        match read_u8(&mut r, "section tag")? {
            TAG_END => break,
            TAG_TENSOR => {
                let n = read_u32(&mut r, "tensor name length")? as u64;
                if n > MAX_SECTION {
                    return Err(Error::Format("tensor name too long".into()));
                }
                let mut name = vec![0u8; n as usize];
                read_exact(&mut r, &mut name, "tensor name")?;
                let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
                let rows = read_u64(&mut r, "tensor rows")?;
                let cols = read_u64(&mut r, "tensor cols")?;
                let count = rows.checked_mul(cols).filter(|&c| c * 8 <= MAX_SECTION).ok_or_else(|| {
                    Error::Format(format!("tensor {name} has implausible shape {rows}x{cols}"))
                })?;
                let mut bytes = vec![0u8; count as usize * 8];
                read_exact(&mut r, &mut bytes, &format!("tensor {name}"))?;
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                tensors.insert(name, Matrix::from_vec(rows as usize, cols as usize, data));
            }
            t => return Err(Error::Format(format!("unknown section tag {t}"))),
        }
    }
    assemble(header, tensors)
}

fn assemble(mut h: Header, mut t: BTreeMap<String, Matrix>) -> Result<TrainedModel> {
    let mut take = |name: &str| t.remove(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")));
    let mut table = |name: &str, matrix: Matrix| -> Result<EmbeddingTable> {
        let frozen = h.frozen.remove(name).unwrap_or_else(|| vec![false; matrix.rows()]);
        if frozen.len() != matrix.rows() {
            return Err(Error::Format(format!("frozen flags of {name} do not match its rows")));
        }
        Ok(EmbeddingTable { matrix, frozen })
    };
    let tables = FeatureTables {
        words: table("words", take("embed.words")?)?,
        pos: table("pos", take("embed.pos")?)?,
        pi: table("pi", take("embed.pi")?)?,
        et: table("et", take("embed.et")?)?,
    };
    let recursive = match h.relations.take() {
        Some(relations) => {
            let w_rel = (0..=relations.len())
                .map(|i| take(&format!("subtree.w_rel.{i}")))
                .collect::<Result<Vec<_>>>()?;
            Some(RecursiveParams {
                word_dim: h.config.word_dim,
                subtree_dim: h.config.subtree_dim,
                relations,
                w_rel,
                bias: take("subtree.bias")?.as_slice().to_vec(),
                leaf: take("subtree.leaf")?.as_slice().to_vec(),
            })
        }
        None => None,
    };
    let sequence = SequenceParams {
        input_dim: h.config.input_dim(),
        hidden: h.config.hidden,
        labels: h.labels,
        v: take("seq.v")?,
        w: take("seq.w")?,
        u: take("seq.u")?,
        b_y: take("seq.b_y")?.as_slice().to_vec(),
    };
    if sequence.v.cols() != sequence.input_dim || sequence.u.rows() != sequence.labels.len() {
        return Err(Error::Format("tensor shapes do not match the configuration".into()));
    }
    Ok(TrainedModel {
        config: h.config,
        schema: h.schema,
        words: h.words,
        pos: h.pos,
        etypes: h.etypes,
        tables,
        recursive,
        sequence,
        metadata: h.metadata,
    })
}
