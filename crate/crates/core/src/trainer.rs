//! Cross-entropy training with per-instance SGD, early stopping on dev
//! macro-F1, and finite-difference gradient verification.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_candidates, CandidatePair, Document, RelationSchema, NONE_LABEL};
use crate::error::{Error, Result};
use crate::eval::{evaluate, filter_by_k};
use crate::features::{EmbeddingTable, LexicalFeatureConfig, Vocab};
use crate::fixtures::{self, FixtureSpec};
use crate::graph::{NodeRef, Subtree};
use crate::linalg::{self, Matrix};
use crate::model::{label_list, Instance, ModelConfig, TrainedModel, Variant};
use crate::recursive::{self, RecursiveParams};
use crate::sequence::{self, SequenceParams};

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// How often [`cross_entropy`] has hit the probability floor.
pub fn clamped_loss_count() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

/// `-ln y[gold]`, with `y[gold]` floored at [`PROB_FLOOR`].
pub fn cross_entropy(y: &[f64], gold: usize) -> f64 {
    let p = y[gold];
    if p < PROB_FLOOR {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        return -PROB_FLOOR.ln();
    }
    -p.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub skipped_train: usize,
    pub skipped_dev: usize,
}

impl TrainingLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tdev_loss\tdev_macro_f1\timproved\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                e.epoch, e.train_loss, e.dev_loss, e.dev_f1, e.improved as u8
            ));
        }
        s
    }
}

/// Trainable state saved at the best epoch.
struct Snapshot {
    word_rows: Vec<(usize, Vec<f64>)>,
    pos: Matrix,
    pi: Matrix,
    et: Matrix,
    recursive: Option<RecursiveParams>,
    sequence: SequenceParams,
}

impl Snapshot {
    fn take(m: &TrainedModel) -> Self {
        let w = &m.tables.words;
        Snapshot {
            word_rows: (0..w.rows())
                .filter(|&r| w.is_trainable(r))
                .map(|r| (r, w.row(r).to_vec()))
                .collect(),
            pos: m.tables.pos.matrix.clone(),
            pi: m.tables.pi.matrix.clone(),
            et: m.tables.et.matrix.clone(),
            recursive: m.recursive.clone(),
            sequence: m.sequence.clone(),
        }
    }

    fn restore(self, m: &mut TrainedModel) {
        for (r, v) in self.word_rows {
            m.tables.words.matrix.row_mut(r).copy_from_slice(&v);
        }
        m.tables.pos.matrix = self.pos;
        m.tables.pi.matrix = self.pi;
        m.tables.et.matrix = self.et;
        m.recursive = self.recursive;
        m.sequence = self.sequence;
    }
}

/// Mean loss and macro-F1 over `instances`, scored against `gold`.
pub fn score(model: &TrainedModel, instances: &[Instance], gold: &[CandidatePair]) -> Result<(f64, f64)> {
    let mut preds = Vec::with_capacity(instances.len());
    let mut loss = 0.0;
    for inst in instances {
        let p = model.predict(inst)?;
        if let Some(g) = inst.gold {
            loss += cross_entropy(&p.distribution, g);
        }
        preds.push(p);
    }
    let f1 = evaluate(&preds, gold, None)?.macro_scores.f1;
    Ok((loss / instances.len().max(1) as f64, f1))
}

/// Trains one model. Candidates beyond `config.k_train` are dropped from both
/// sets; with no dev candidates the training set drives model selection.
pub fn train(
    docs: &[Document],
    train: &[CandidatePair],
    dev: &[CandidatePair],
    schema: &RelationSchema,
    config: &ModelConfig,
    pretrained: Option<(Vocab, EmbeddingTable)>,
) -> Result<(TrainedModel, TrainingLog)> {
    config.validate()?;
    let train = filter_by_k(train, config.k_train);
    let dev = filter_by_k(dev, config.k_train);
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if train.iter().all(|c| c.label == NONE_LABEL) {
        return Err(Error::Training("degenerate labels: every training candidate is NONE".into()));
    }
    let labels = label_list(schema);
    if let Some(c) = train.iter().chain(&dev).find(|c| !labels.contains(&c.label)) {
        return Err(Error::Label(format!(
            "candidate {}:{}->{} has label {:?} outside the schema",
            c.doc, c.e1, c.e2, c.label
        )));
    }
    let train_ids: HashSet<&str> = train.iter().map(|c| c.doc.as_str()).collect();
    let train_docs: Vec<&Document> = docs.iter().filter(|d| train_ids.contains(d.id.as_str())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TrainedModel::initialize(config, schema, &train_docs, pretrained, &mut rng)?;
    let (mut train_inst, skipped_train) = model.prepare_instances(docs, &train)?;
    let (dev_inst, skipped_dev) = model.prepare_instances(docs, &dev)?;
    if train_inst.is_empty() {
        return Err(Error::Training("no training candidate has a usable path".into()));
    }
    if skipped_train + skipped_dev > 0 {
        warn!("skipped {skipped_train} training and {skipped_dev} dev candidates");
    }
    let use_train = dev_inst.is_empty();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        skipped_train,
        skipped_dev,
    };

    let opt = config.optimizer;
    let mut best: Option<(f64, f64, usize)> = None;
    let mut snapshot = Snapshot::take(&model);
    let mut stale = 0;
    for epoch in 1..=opt.max_epochs {
        train_inst.shuffle(&mut rng);
        let mut total = 0.0;
        for inst in &train_inst {
            let (loss, mut g) = model.loss_and_gradients(inst)?;
            g.clip(opt.clip_norm);
            model.apply_gradients(&g, opt.learning_rate);
            total += loss;
        }
        let train_loss = total / train_inst.len() as f64;
        let (dev_loss, dev_f1) = if use_train {
            score(&model, &train_inst, &train)?
        } else {
            score(&model, &dev_inst, &dev)?
        };
        let improved = match best {
            None => true,
            Some((f1, loss, _)) => dev_f1 > f1 || (dev_f1 == f1 && dev_loss < loss),
        };
        if improved {
            best = Some((dev_f1, dev_loss, epoch));
            snapshot = Snapshot::take(&model);
            stale = 0;
        } else {
            stale += 1;
        }
        info!("epoch {epoch}: train loss {train_loss:.5}, dev loss {dev_loss:.5}, dev F1 {dev_f1:.4}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_f1,
            improved,
        });
        if stale >= opt.patience {
            break;
        }
    }
    snapshot.restore(&mut model);
    let (f1, _, epoch) = best.expect("at least one epoch");
    model.metadata.epochs_run = log.epochs.len();
    model.metadata.best_epoch = epoch;
    model.metadata.best_dev_f1 = f1;
    model.metadata.skipped_candidates = skipped_train + skipped_dev;
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradCheckTarget {
    /// Subtree encoder alone, loss `r · c_root`.
    Recursive,
    /// Sequence encoder, softmax and cross-entropy.
    Sequence,
    /// Every trainable parameter of an iDepNN-ADP model.
    FullAdp,
}

impl GradCheckTarget {
    pub const ALL: [GradCheckTarget; 3] = [GradCheckTarget::Recursive, GradCheckTarget::Sequence, GradCheckTarget::FullAdp];
}

impl fmt::Display for GradCheckTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradCheckTarget::Recursive => "recursive",
            GradCheckTarget::Sequence => "sequence",
            GradCheckTarget::FullAdp => "full-adp",
        })
    }
}

impl FromStr for GradCheckTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(GradCheckTarget::Recursive),
            "sequence" => Ok(GradCheckTarget::Sequence),
            "full-adp" | "full" => Ok(GradCheckTarget::FullAdp),
            _ => Err(Error::Config(format!("unknown grad-check target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: GradCheckTarget,
    pub cases: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
}

/// Magnitude below which central differences at the default step are
/// dominated by roundoff.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

struct Tally {
    checked: usize,
    worst: f64,
}

impl Tally {
    fn add(&mut self, analytic: f64, plus: f64, minus: f64, eps: f64) -> Result<()> {
        if !(analytic.is_finite() && plus.is_finite() && minus.is_finite()) {
            return Err(Error::Numeric("non-finite value during gradient check".into()));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        self.worst = self.worst.max(relative_error(analytic, numeric));
        self.checked += 1;
        Ok(())
    }
}

/// Compares analytic gradients with central differences over `num_cases`
/// random configurations and returns the worst relative error.
pub fn grad_check(target: GradCheckTarget, num_cases: usize, epsilon: f64, seed: u64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally { checked: 0, worst: 0.0 };
    for _ in 0..num_cases {
        match target {
            GradCheckTarget::Recursive => check_recursive(&mut rng, epsilon, &mut tally)?,
            GradCheckTarget::Sequence => check_sequence(&mut rng, epsilon, &mut tally)?,
            GradCheckTarget::FullAdp => check_full(&mut rng, epsilon, &mut tally)?,
        }
    }
    Ok(GradCheckReport {
        target,
        cases: num_cases,
        parameters_checked: tally.checked,
        max_relative_error: tally.worst,
    })
}

fn random_vec<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_subtree<R: Rng + ?Sized>(depth: usize, next: &mut usize, labels: &[&str], rng: &mut R) -> Subtree {
    let root = NodeRef::new(0, *next);
    *next += 1;
    let fanout = if depth == 0 { 0 } else { rng.random_range(0..=3) };
    let children = (0..fanout)
        .map(|_| {
            let l = labels[rng.random_range(0..labels.len())].to_string();
            (l, random_subtree(depth - 1, next, labels, rng))
        })
        .collect();
    Subtree { root, children }
}

fn check_recursive<R: Rng + ?Sized>(rng: &mut R, eps: f64, tally: &mut Tally) -> Result<()> {
    let d = rng.random_range(1..=4);
    let dp = rng.random_range(1..=4);
    let mut params = RecursiveParams::new(d, dp, ["amod", "nmod", "nsubj"], rng);
    params.bias = random_vec(dp, 0.5, rng);
    params.leaf = random_vec(dp, 0.5, rng);
    let mut next = 1;
    let depth = rng.random_range(1..=3);
    let tree = random_subtree(depth, &mut next, &["amod", "nmod", "nsubj", "unseen"], rng);
    let mut words: Vec<Vec<f64>> = (0..next).map(|_| random_vec(d, 1.0, rng)).collect();
    let r = random_vec(dp, 1.0, rng);

    let loss = |p: &RecursiveParams, words: &[Vec<f64>]| -> Result<f64> {
        let enc = recursive::encode_subtree(&tree, &|n: NodeRef| words[n.token].clone(), p)?;
        Ok(linalg::dot(&enc.c, &r))
    };
    let enc = recursive::encode_subtree(&tree, &|n: NodeRef| words[n.token].clone(), &params)?;
    let g = recursive::backprop_subtree(&enc, &r, &params)?;

    for m in 0..params.w_rel.len() {
        for k in 0..params.w_rel[m].as_slice().len() {
            let orig = params.w_rel[m].as_slice()[k];
            params.w_rel[m].as_mut_slice()[k] = orig + eps;
            let lp = loss(&params, &words)?;
            params.w_rel[m].as_mut_slice()[k] = orig - eps;
            let lm = loss(&params, &words)?;
            params.w_rel[m].as_mut_slice()[k] = orig;
            tally.add(g.w_rel.get(&m).map_or(0.0, |w| w.as_slice()[k]), lp, lm, eps)?;
        }
    }
    for k in 0..dp {
        let orig = params.bias[k];
        params.bias[k] = orig + eps;
        let lp = loss(&params, &words)?;
        params.bias[k] = orig - eps;
        let lm = loss(&params, &words)?;
        params.bias[k] = orig;
        tally.add(g.bias[k], lp, lm, eps)?;

        let orig = params.leaf[k];
        params.leaf[k] = orig + eps;
        let lp = loss(&params, &words)?;
        params.leaf[k] = orig - eps;
        let lm = loss(&params, &words)?;
        params.leaf[k] = orig;
        tally.add(g.leaf[k], lp, lm, eps)?;
    }
    for w in 1..next {
        for k in 0..d {
            let analytic: f64 = g.words.iter().filter(|(n, _)| n.token == w).map(|(_, v)| v[k]).sum();
            let orig = words[w][k];
            words[w][k] = orig + eps;
            let lp = loss(&params, &words)?;
            words[w][k] = orig - eps;
            let lm = loss(&params, &words)?;
            words[w][k] = orig;
            tally.add(analytic, lp, lm, eps)?;
        }
    }
    Ok(())
}

fn check_sequence<R: Rng + ?Sized>(rng: &mut R, eps: f64, tally: &mut Tally) -> Result<()> {
    let n = rng.random_range(1..=6);
    let h = rng.random_range(1..=5);
    let dim = rng.random_range(1..=7);
    let r = rng.random_range(2..=4);
    let labels = (0..r).map(|i| format!("L{i}")).collect();
    let mut p = SequenceParams::new(dim, h, labels, rng);
    p.w = Matrix::uniform(h, h, 0.8, rng);
    p.b_y = random_vec(r, 0.5, rng);
    let mut inputs: Vec<Vec<f64>> = (0..n).map(|_| random_vec(dim, 1.0, rng)).collect();
    let gold = rng.random_range(0..r);

    let loss = |p: &SequenceParams, inputs: &[Vec<f64>]| -> Result<f64> {
        Ok(cross_entropy(&sequence::forward(inputs.to_vec(), p)?.distribution, gold))
    };
    let g = sequence::backward(&sequence::forward(inputs.clone(), &p)?, gold, &p)?;

    let blocks: [(fn(&mut SequenceParams) -> &mut [f64], &[f64]); 4] = [
        (|p| p.v.as_mut_slice(), g.v.as_slice()),
        (|p| p.w.as_mut_slice(), g.w.as_slice()),
        (|p| p.u.as_mut_slice(), g.u.as_slice()),
        (|p| &mut p.b_y, &g.b_y),
    ];
    for (get, grad) in blocks {
        for (k, &analytic) in grad.iter().enumerate() {
            let orig = get(&mut p)[k];
            get(&mut p)[k] = orig + eps;
            let lp = loss(&p, &inputs)?;
            get(&mut p)[k] = orig - eps;
            let lm = loss(&p, &inputs)?;
            get(&mut p)[k] = orig;
            tally.add(analytic, lp, lm, eps)?;
        }
    }
    for t in 0..n {
        for k in 0..dim {
            let orig = inputs[t][k];
            inputs[t][k] = orig + eps;
            let lp = loss(&p, &inputs)?;
            inputs[t][k] = orig - eps;
            let lm = loss(&p, &inputs)?;
            inputs[t][k] = orig;
            tally.add(g.inputs[t][k], lp, lm, eps)?;
        }
    }
    Ok(())
}

fn check_full<R: Rng + ?Sized>(rng: &mut R, eps: f64, tally: &mut Tally) -> Result<()> {
    let spec = FixtureSpec {
        num_docs: 1,
        sentences: (1, 3),
        tokens: (3, 6),
        seed: rng.random(),
        ..FixtureSpec::default()
    };
    let docs = fixtures::generate_corpus(&spec)?;
    let schema = fixtures::schema();
    let config = ModelConfig {
        variant: Variant::Adp,
        word_dim: rng.random_range(1..=4),
        subtree_dim: rng.random_range(1..=3),
        hidden: rng.random_range(1..=4),
        features: LexicalFeatureConfig {
            pos: Some(rng.random_range(1..=2)),
            pi: Some(rng.random_range(1..=2)),
            et: Some(rng.random_range(1..=2)),
        },
        ..ModelConfig::default()
    };
    let doc_refs: Vec<&Document> = docs.iter().collect();
    let mut model = TrainedModel::initialize(&config, &schema, &doc_refs, None, rng)?;
    let h = config.hidden;
    model.sequence.w = Matrix::uniform(h, h, 0.8, rng);
    model.sequence.b_y = random_vec(model.labels().len(), 0.5, rng);
    if let Some(rp) = model.recursive.as_mut() {
        rp.bias = random_vec(rp.subtree_dim, 0.5, rng);
        rp.leaf = random_vec(rp.subtree_dim, 0.5, rng);
    }
    for t in [
        &mut model.tables.words,
        &mut model.tables.pos,
        &mut model.tables.pi,
        &mut model.tables.et,
    ] {
        for r in 0..t.rows() {
            if t.is_trainable(r) {
                let v = random_vec(t.dim(), 1.0, rng);
                t.matrix.row_mut(r).copy_from_slice(&v);
            }
        }
    }
    let cands = generate_candidates(&docs[0], usize::MAX, &schema);
    let mut cand = cands
        .first()
        .cloned()
        .ok_or_else(|| Error::Training("fixture produced no candidate".into()))?;
    if rng.random_bool(0.5) {
        cand.label = NONE_LABEL.to_string();
    }
    let (insts, _) = model.prepare_instances(&docs, &[cand])?;
    let inst = insts
        .first()
        .ok_or_else(|| Error::Training("fixture candidate has no path".into()))?;
    let (_, g) = model.loss_and_gradients(inst)?;
    for (key, len) in model.param_keys() {
        let analytic = g.get(key).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = model.param_mut(key).expect("listed key")[k];
            model.param_mut(key).expect("listed key")[k] = orig + eps;
            let lp = model.loss(inst)?;
            model.param_mut(key).expect("listed key")[k] = orig - eps;
            let lm = model.loss(inst)?;
            model.param_mut(key).expect("listed key")[k] = orig;
            tally.add(a, lp, lm, eps)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.8, 0.2], 1) - 1.60944).abs() < 1e-5);
        let before = clamped_loss_count();
        assert!((cross_entropy(&[1.0, 0.0], 1) - 27.631021115928547).abs() < 1e-9);
        assert!(clamped_loss_count() > before);
    }

    #[test]
    fn grad_check_rejects_bad_epsilon() {
        assert!(grad_check(GradCheckTarget::Sequence, 1, 0.0, 1).is_err());
        assert!(grad_check(GradCheckTarget::Sequence, 1, -1e-4, 1).is_err());
    }

    #[test]
    fn grad_check_small_runs() {
        for t in GradCheckTarget::ALL {
            let r = grad_check(t, 5, 1e-4, 11).unwrap();
            assert!(r.parameters_checked > 0);
            assert!(r.max_relative_error < 1e-4, "{t}: {}", r.max_relative_error);
        }
    }

    #[test]
    fn training_rejects_degenerate_sets() {
        let docs = fixtures::generate_corpus(&FixtureSpec {
            num_docs: 4,
            ..FixtureSpec::default()
        })
        .unwrap();
        let schema = fixtures::schema();
        let config = ModelConfig::default();
        assert!(matches!(train(&docs, &[], &[], &schema, &config, None), Err(Error::Training(_))));
        let mut cands: Vec<CandidatePair> =
            docs.iter().flat_map(|d| generate_candidates(d, usize::MAX, &schema)).collect();
        cands.iter_mut().for_each(|c| c.label = NONE_LABEL.into());
        let err = train(&docs, &cands, &[], &schema, &config, None).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"));
    }
}
