use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &str) {
    Python::attach(|py| {
        let m = wrap_pymodule!(idepnn_py::idepnn_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("idp", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn corpus_round_trip_and_paths() {
    run(r#"
c = idp.Corpus.synthetic(num_docs=12, seed=3)
assert len(c) == 12
assert idp.Corpus.from_jsonl(c.to_jsonl()).ids() == c.ids()
for cand in c.candidates():
    p = c.shortest_path(cand["doc"], cand["e1"], cand["e2"])
    assert p["nexts_crossings"] == cand["sentence_distance"]
try:
    c.shortest_path("missing", "T1", "T2")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#);
}

#[test]
fn train_predict_and_serialize() {
    run(r#"
train = idp.Corpus.synthetic(num_docs=30, seed=1)
test = idp.Corpus.synthetic(num_docs=10, seed=2)
m = idp.Model.train(train, None, variant="adp", max_epochs=2, word_dim=8, subtree_dim=4, hidden=6)
assert m.variant == "iDepNN-ADP"
preds = m.predict(test)
assert len(preds) == len(test.candidates())
assert idp.Model.from_bytes(m.to_bytes()).to_bytes() == m.to_bytes()
assert m.metadata["epochs_run"] <= 2
r = idp.grad_check("sequence", cases=3)
assert r["max_relative_error"] < 1e-4
"#);
}
