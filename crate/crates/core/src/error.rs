use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("CoNLL-U sentence {sentence}, line {line}: {message}")]
    Conllu {
        sentence: usize,
        line: usize,
        message: String,
    },

    #[error("standoff {doc}: {message}")]
    Standoff { doc: String, message: String },

    #[error("JSONL line {line}: {message}")]
    Jsonl { line: usize, message: String },

    #[error("document {doc}: {message}")]
    Invariant { doc: String, message: String },

    #[error("graph: {0}")]
    Graph(String),

    #[error("embeddings line {line}: {message}")]
    Embedding { line: usize, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numeric overflow: {0}")]
    Numeric(String),

    #[error("label: {0}")]
    Label(String),

    #[error("training: {0}")]
    Training(String),

    #[error("model file: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invariant(doc: &str, message: impl Into<String>) -> Self {
        Error::Invariant {
            doc: doc.to_string(),
            message: message.into(),
        }
    }
}
