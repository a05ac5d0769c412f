//! Python bindings: corpora, candidate generation, training, prediction,
//! evaluation and gradient checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use idepnn::cli::{load_corpus, predict_all};
use idepnn::corpus::{
    corpus_counts, generate_candidates, load_jsonl, sample_negatives, write_jsonl, CandidatePair, Document,
    RelationSchema,
};
use idepnn::error::Error;
use idepnn::eval::{self, Prediction};
use idepnn::fixtures::{self, FixtureSpec};
use idepnn::graph::{build_document_graph, shortest_path as tree_path, NodeRef};
use idepnn::model::{ModelConfig, TrainedModel, Variant};
use idepnn::serialize::{load_model, load_model_file, save_model_file, to_bytes};
use idepnn::trainer::{self, GradCheckTarget};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into plain Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_schema(schema: Option<Vec<String>>) -> PyResult<RelationSchema> {
    match schema {
        Some(s) if !s.is_empty() => RelationSchema::parse(&s).map_err(to_py_err),
        _ => Ok(fixtures::schema()),
    }
}

fn k_limit(k: Option<usize>) -> usize {
    k.unwrap_or(usize::MAX)
}

/// A list of validated documents.
#[pyclass(module = "idepnn_py")]
struct Corpus {
    docs: Vec<Document>,
}

#[pymethods]
impl Corpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            docs: load_corpus(&path).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Corpus {
            docs: load_jsonl(text).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (num_docs = 200, seed = 7, distance_probs = None))]
    fn synthetic(num_docs: usize, seed: u64, distance_probs: Option<[f64; 4]>) -> PyResult<Self> {
        let mut spec = FixtureSpec {
            num_docs,
            seed,
            ..FixtureSpec::default()
        };
        if let Some(p) = distance_probs {
            spec.distance_probs = p;
        }
        Ok(Corpus {
            docs: fixtures::generate_corpus(&spec).map_err(to_py_err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        write_jsonl(&self.docs)
    }

    fn ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.id.clone()).collect()
    }

    fn counts(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let c = corpus_counts(&self.docs);
        to_py(
            py,
            &serde_json::json!({
                "documents": c.documents,
                "sentences": c.sentences,
                "mentions": c.mentions,
                "relations": c.relations,
                "intra": c.intra,
                "inter": c.inter,
            }),
        )
    }

    /// Candidate pairs as dicts with `doc, e1, e2, label, sentence_distance`.
    #[pyo3(signature = (k = None, schema = None))]
    fn candidates(&self, py: Python<'_>, k: Option<usize>, schema: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
        let schema = parse_schema(schema)?;
        let c: Vec<CandidatePair> = self.docs.iter().flat_map(|d| generate_candidates(d, k_limit(k), &schema)).collect();
        to_py(py, &c)
    }

    /// Tree path between two mention heads.
    fn shortest_path(&self, py: Python<'_>, doc: &str, e1: &str, e2: &str) -> PyResult<Py<PyAny>> {
        let d = self
            .docs
            .iter()
            .find(|d| d.id == doc)
            .ok_or_else(|| PyValueError::new_err(format!("unknown document {doc}")))?;
        let mention = |id: &str| d.mention(id).ok_or_else(|| PyValueError::new_err(format!("unknown mention {id}")));
        let (m1, m2) = (mention(e1)?, mention(e2)?);
        let g = build_document_graph(d).map_err(to_py_err)?;
        let p = tree_path(
            &g,
            NodeRef::new(m1.sentence, m1.head_token),
            NodeRef::new(m2.sentence, m2.head_token),
        )
        .map_err(to_py_err)?;
        let words: Vec<&str> = p.nodes.iter().map(|n| g.surface(*n).unwrap_or("")).collect();
        to_py(
            py,
            &serde_json::json!({
                "nodes": p.nodes,
                "words": words,
                "edges": p.edge_labels,
                "nexts_crossings": p.nexts_crossings(),
            }),
        )
    }

    fn __len__(&self) -> usize {
        self.docs.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} documents)", self.docs.len())
    }
}

/// A trained classifier.
#[pyclass(module = "idepnn_py")]
struct Model {
    inner: TrainedModel,
}

#[pymethods]
impl Model {
    /// Trains on `train`, selecting the snapshot on `dev`.
    #[staticmethod]
    #[pyo3(signature = (
        train, dev = None, variant = "iDepNN-ADP", schema = None, k_train = None, seed = 1,
        max_epochs = 200, word_dim = 200, subtree_dim = 50, hidden = 100, negative_sampling = true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        train: &Corpus,
        dev: Option<&Corpus>,
        variant: &str,
        schema: Option<Vec<String>>,
        k_train: Option<usize>,
        seed: u64,
        max_epochs: usize,
        word_dim: usize,
        subtree_dim: usize,
        hidden: usize,
        negative_sampling: bool,
    ) -> PyResult<Self> {
        let schema = parse_schema(schema)?;
        let mut config = ModelConfig {
            variant: variant.parse::<Variant>().map_err(to_py_err)?,
            word_dim,
            subtree_dim,
            hidden,
            k_train,
            seed,
            ..ModelConfig::default()
        };
        config.optimizer.max_epochs = max_epochs;
        let dev_docs = dev.map(|d| d.docs.clone()).unwrap_or_default();
        let cands = |docs: &[Document]| -> Vec<CandidatePair> {
            docs.iter().flat_map(|d| generate_candidates(d, k_limit(k_train), &schema)).collect()
        };
        let mut train_c = cands(&train.docs);
        if negative_sampling {
            train_c = sample_negatives(&train_c, seed);
        }
        let dev_c = cands(&dev_docs);
        let mut docs = train.docs.clone();
        docs.extend(dev_docs);
        let (inner, _) = py
            .detach(|| trainer::train(&docs, &train_c, &dev_c, &schema, &config, None))
            .map_err(to_py_err)?;
        Ok(Model { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: load_model_file(&path).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Model {
            inner: load_model(data).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model_file(&self.inner, &path).map_err(to_py_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &to_bytes(&self.inner))
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config.variant.to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn metadata(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.metadata)
    }

    /// Predictions for every candidate up to sentence range `k`.
    #[pyo3(signature = (corpus, k = None, threshold = None))]
    fn predict(&self, py: Python<'_>, corpus: &Corpus, k: Option<usize>, threshold: Option<f64>) -> PyResult<Py<PyAny>> {
        let preds = self.predictions(&corpus.docs, k)?;
        let preds = match threshold {
            Some(t) => eval::threshold_filter(&preds, t),
            None => preds,
        };
        to_py(py, &preds)
    }

    /// Scores the model on `corpus` at evaluation range `k`.
    #[pyo3(signature = (corpus, k = None))]
    fn evaluate(&self, py: Python<'_>, corpus: &Corpus, k: Option<usize>) -> PyResult<Py<PyAny>> {
        let cands: Vec<CandidatePair> = corpus
            .docs
            .iter()
            .flat_map(|d| generate_candidates(d, k_limit(k), &self.inner.schema))
            .collect();
        let preds = predict_all(&self.inner, &corpus.docs, &cands).map_err(to_py_err)?;
        let mut r = eval::evaluate(&preds, &cands, k).map_err(to_py_err)?;
        r.train_k = self.inner.config.k_train;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, labels={:?})", self.inner.config.variant, self.inner.labels())
    }
}

impl Model {
    fn predictions(&self, docs: &[Document], k: Option<usize>) -> PyResult<Vec<Prediction>> {
        let cands: Vec<CandidatePair> =
            docs.iter().flat_map(|d| generate_candidates(d, k_limit(k), &self.inner.schema)).collect();
        predict_all(&self.inner, docs, &cands).map_err(to_py_err)
    }
}

/// Scores prediction dicts against candidate dicts.
#[pyfunction]
#[pyo3(signature = (predictions, gold, k = None))]
fn evaluate(py: Python<'_>, predictions: &Bound<'_, PyAny>, gold: &Bound<'_, PyAny>, k: Option<usize>) -> PyResult<Py<PyAny>> {
    let p: Vec<Prediction> = from_py(py, predictions)?;
    let g: Vec<CandidatePair> = from_py(py, gold)?;
    to_py(py, &eval::evaluate(&p, &g, k).map_err(to_py_err)?)
}

/// Union of several prediction lists over one candidate set.
#[pyfunction]
fn ensemble(py: Python<'_>, prediction_sets: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let sets: Vec<Vec<Prediction>> = from_py(py, prediction_sets)?;
    to_py(py, &eval::ensemble(&sets).map_err(to_py_err)?)
}

/// Worst finite-difference relative error for one gradient target.
#[pyfunction]
#[pyo3(signature = (target = "full-adp", cases = 50, epsilon = 1e-4, seed = 1))]
fn grad_check(py: Python<'_>, target: &str, cases: usize, epsilon: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let t: GradCheckTarget = target.parse().map_err(to_py_err)?;
    let r = py.detach(|| trainer::grad_check(t, cases, epsilon, seed)).map_err(to_py_err)?;
    to_py(py, &r)
}

#[pymodule]
pub fn idepnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
