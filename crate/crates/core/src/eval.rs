//! Sentence-range stratified scoring, ensembling and confidence filtering.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateKey, CandidatePair, NONE_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub key: CandidateKey,
    pub sentence_distance: usize,
    pub label: String,
    pub probability: f64,
    pub distribution: Vec<f64>,
}

impl Prediction {
    pub fn is_positive(&self) -> bool {
        self.label != NONE_LABEL
    }
}

pub fn positive_count(predictions: &[Prediction]) -> usize {
    predictions.iter().filter(|p| p.is_positive()).count()
}

/// Candidates at most `k` sentences apart; `None` keeps everything.
pub fn filter_by_k(candidates: &[CandidatePair], k: Option<usize>) -> Vec<CandidatePair> {
    candidates
        .iter()
        .filter(|c| k.is_none_or(|k| c.sentence_distance <= k))
        .cloned()
        .collect()
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl LabelScores {
    fn finish(&mut self) {
        self.p = ratio(self.tp, self.tp + self.fp);
        self.r = ratio(self.tp, self.tp + self.fn_);
        self.f1 = f1(self.p, self.r);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroScores {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` is unbounded.
    pub train_k: Option<usize>,
    pub eval_k: Option<usize>,
    /// Positive-label predictions.
    pub pr: usize,
    #[serde(rename = "macro")]
    pub macro_scores: MacroScores,
    pub per_label: BTreeMap<String, LabelScores>,
}

/// Scores `predictions` against the gold candidates within range `k`.
///
/// Gold candidates without a prediction count as predicted NONE. Macro
/// scores average the positive labels seen in gold or predictions.
pub fn evaluate(predictions: &[Prediction], gold: &[CandidatePair], k: Option<usize>) -> Result<EvalReport> {
    let universe: HashMap<CandidateKey, &CandidatePair> = gold.iter().map(|c| (c.key(), c)).collect();
    let mut predicted: HashMap<&CandidateKey, &str> = HashMap::new();
    for p in predictions {
        if !universe.contains_key(&p.key) {
            return Err(Error::Eval(format!(
                "prediction for unknown candidate {}:{}->{}",
                p.key.doc, p.key.e1, p.key.e2
            )));
        }
        predicted.insert(&p.key, p.label.as_str());
    }
    let mut per_label: BTreeMap<String, LabelScores> = BTreeMap::new();
    for c in gold {
        if k.is_some_and(|k| c.sentence_distance > k) {
            continue;
        }
        let key = c.key();
        let pred = predicted.get(&key).copied().unwrap_or(NONE_LABEL);
        let truth = c.label.as_str();
        if pred == truth {
            if truth != NONE_LABEL {
                per_label.entry(truth.to_string()).or_default().tp += 1;
            }
            continue;
        }
        if pred != NONE_LABEL {
            per_label.entry(pred.to_string()).or_default().fp += 1;
        }
        if truth != NONE_LABEL {
            per_label.entry(truth.to_string()).or_default().fn_ += 1;
        }
    }
    let mut macro_scores = MacroScores::default();
    let mut pr = 0;
    for s in per_label.values_mut() {
        s.finish();
        pr += s.tp + s.fp;
        macro_scores.p += s.p;
        macro_scores.r += s.r;
        macro_scores.f1 += s.f1;
    }
    if !per_label.is_empty() {
        let n = per_label.len() as f64;
        macro_scores.p /= n;
        macro_scores.r /= n;
        macro_scores.f1 /= n;
    }
    Ok(EvalReport {
        train_k: None,
        eval_k: k,
        pr,
        macro_scores,
        per_label,
    })
}

/// Union of positive predictions over models sharing one candidate universe.
///
/// Conflicting positive labels go to the most probable one, ties to the
/// earlier model. Candidates nobody labels positive keep the first model's
/// prediction.
pub fn ensemble(sets: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    let Some(first) = sets.first() else {
        return Ok(Vec::new());
    };
    let mut reference: Vec<&CandidateKey> = first.iter().map(|p| &p.key).collect();
    reference.sort();
    for (i, s) in sets.iter().enumerate().skip(1) {
        let mut keys: Vec<&CandidateKey> = s.iter().map(|p| &p.key).collect();
        keys.sort();
        if keys != reference {
            return Err(Error::Eval(format!(
                "model {} predicts over a different candidate set than model 0",
                i
            )));
        }
    }
    let lookups: Vec<HashMap<&CandidateKey, &Prediction>> =
        sets.iter().map(|s| s.iter().map(|p| (&p.key, p)).collect()).collect();
    let mut out = Vec::with_capacity(first.len());
    for base in first {
        let mut best: Option<Prediction> = None;
        for l in &lookups {
            let p = l[&base.key];
            if !p.is_positive() {
                continue;
            }
            match &mut best {
                None => best = Some(p.clone()),
                Some(b) if b.label == p.label => b.probability = b.probability.max(p.probability),
                Some(b) if p.probability > b.probability => *b = p.clone(),
                Some(_) => {}
            }
        }
        out.push(best.unwrap_or_else(|| base.clone()));
    }
    Ok(out)
}

/// Keeps predictions with probability at least `p_min`.
pub fn threshold_filter(predictions: &[Prediction], p_min: f64) -> Vec<Prediction> {
    predictions.iter().filter(|p| p.probability >= p_min).cloned().collect()
}

/// TP and FP counts of positive predictions per sentence distance.
pub fn tp_fp_by_distance(predictions: &[Prediction], gold: &[CandidatePair]) -> Result<BTreeMap<usize, (usize, usize)>> {
    let truth: HashMap<CandidateKey, &str> = gold.iter().map(|c| (c.key(), c.label.as_str())).collect();
    let mut out: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in predictions.iter().filter(|p| p.is_positive()) {
        let t = truth.get(&p.key).ok_or_else(|| {
            Error::Eval(format!("prediction for unknown candidate {}:{}->{}", p.key.doc, p.key.e1, p.key.e2))
        })?;
        let e = out.entry(p.sentence_distance).or_default();
        if *t == p.label {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    Ok(out)
}

pub fn tp_fp_tsv(counts: &BTreeMap<usize, (usize, usize)>) -> String {
    let mut s = String::from("k\ttp\tfp\n");
    for (k, (tp, fp)) in counts {
        s.push_str(&format!("{k}\t{tp}\t{fp}\n"));
    }
    s
}

fn fmt_k(k: Option<usize>) -> String {
    k.map_or_else(|| "inf".to_string(), |k| k.to_string())
}

/// Aligned text table and JSON array of a train-k × eval-k grid.
pub fn report(cells: &[EvalReport]) -> (String, String) {
    let mut text = String::new();
    if !cells.is_empty() {
        text.push_str(&format!(
            "{:>7} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
            "train_k", "eval_k", "pr", "P", "R", "F1"
        ));
        for c in cells {
            text.push_str(&format!(
                "{:>7} {:>6} {:>6} {:>6.3} {:>6.3} {:>6.3}\n",
                fmt_k(c.train_k),
                fmt_k(c.eval_k),
                c.pr,
                c.macro_scores.p,
                c.macro_scores.r,
                c.macro_scores.f1
            ));
        }
    }
    let json = serde_json::to_string_pretty(cells).expect("reports serialize");
    (text, json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(i: usize, label: &str, k: usize) -> CandidatePair {
        CandidatePair {
            doc: "d".into(),
            e1: format!("A{i}"),
            e2: format!("B{i}"),
            label: label.into(),
            sentence_distance: k,
        }
    }

    fn pred(c: &CandidatePair, label: &str, p: f64) -> Prediction {
        Prediction {
            key: c.key(),
            sentence_distance: c.sentence_distance,
            label: label.into(),
            probability: p,
            distribution: vec![],
        }
    }

    #[test]
    fn filter_counts() {
        let cs: Vec<_> = (0..4).map(|i| cand(i, "NONE", i)).collect();
        assert_eq!(filter_by_k(&cs, Some(2)).len(), 3);
        assert_eq!(filter_by_k(&cs, Some(0)).len(), 1);
        assert_eq!(filter_by_k(&cs, None).len(), 4);
    }

    #[test]
    fn perfect_predictions() {
        let gold = vec![cand(0, "L", 0), cand(1, "L", 1), cand(2, "NONE", 0)];
        let preds: Vec<_> = gold.iter().map(|c| pred(c, &c.label, 0.9)).collect();
        let r = evaluate(&preds, &gold, None).unwrap();
        assert_eq!(r.macro_scores, MacroScores { p: 1.0, r: 1.0, f1: 1.0 });
        assert_eq!(r.pr, 2);
    }

    #[test]
    fn two_thirds_case() {
        let gold = vec![
            cand(0, "L", 0),
            cand(1, "L", 0),
            cand(2, "L", 0),
            cand(3, "NONE", 0),
        ];
        let preds = vec![
            pred(&gold[0], "L", 0.9),
            pred(&gold[1], "L", 0.9),
            pred(&gold[2], "NONE", 0.9),
            pred(&gold[3], "L", 0.9),
        ];
        let r = evaluate(&preds, &gold, None).unwrap();
        let s = r.per_label["L"];
        assert_eq!((s.tp, s.fp, s.fn_), (2, 1, 1));
        assert!((r.macro_scores.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.macro_scores.f1, s.f1);
    }

    #[test]
    fn no_positive_predictions_scores_zero() {
        let gold = vec![cand(0, "L", 0)];
        let r = evaluate(&[], &gold, None).unwrap();
        assert_eq!((r.pr, r.macro_scores.p, r.macro_scores.f1), (0, 0.0, 0.0));
    }

    #[test]
    fn unknown_prediction_is_error() {
        let gold = vec![cand(0, "L", 0)];
        assert!(evaluate(&[pred(&cand(9, "L", 0), "L", 1.0)], &gold, None).is_err());
    }

    #[test]
    fn wrong_positive_label_counts_both_ways() {
        let gold = vec![cand(0, "A", 0)];
        let r = evaluate(&[pred(&gold[0], "B", 0.6)], &gold, None).unwrap();
        assert_eq!(r.per_label["A"].fn_, 1);
        assert_eq!(r.per_label["B"].fp, 1);
        assert_eq!(r.pr, 1);
    }

    #[test]
    fn ensemble_union_and_conflicts() {
        let cs: Vec<_> = (0..6).map(|i| cand(i, "NONE", 0)).collect();
        let a: Vec<_> = cs
            .iter()
            .enumerate()
            .map(|(i, c)| pred(c, if i < 3 { "L" } else { "NONE" }, 0.7))
            .collect();
        let b: Vec<_> = cs
            .iter()
            .enumerate()
            .map(|(i, c)| pred(c, if (2..4).contains(&i) { "L" } else { "NONE" }, 0.8))
            .collect();
        let e = ensemble(&[a.clone(), b]).unwrap();
        assert_eq!(positive_count(&e), 4);
        assert_eq!(e[2].probability, 0.8);
        assert_eq!(ensemble(&[a.clone()]).unwrap(), a);

        let c: Vec<_> = cs.iter().map(|c| pred(c, "M", 0.7)).collect();
        let e = ensemble(&[a.clone(), c]).unwrap();
        assert_eq!(e[0].label, "L");
        assert!(ensemble(&[a.clone(), a[..5].to_vec()]).is_err());
    }

    #[test]
    fn threshold_and_report() {
        let cs: Vec<_> = (0..2).map(|i| cand(i, "L", 0)).collect();
        let preds = vec![pred(&cs[0], "L", 0.9), pred(&cs[1], "L", 0.8)];
        assert_eq!(threshold_filter(&preds, 0.85).len(), 1);
        assert_eq!(threshold_filter(&preds, 0.0), preds);
        let (text, json) = report(&[]);
        assert!(text.is_empty());
        assert_eq!(json, "[]");
        let r = evaluate(&preds, &cs, Some(0)).unwrap();
        let (text, json) = report(&[r]);
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v[0]["eval_k"], 0);
        assert_eq!(v[0]["per_label"]["L"]["fn"], 0);
        assert!(v[0]["macro"]["f1"].is_number());
    }

    #[test]
    fn tp_fp_counts() {
        let cs = vec![cand(0, "L", 0), cand(1, "NONE", 2)];
        let preds = vec![pred(&cs[0], "L", 0.9), pred(&cs[1], "L", 0.8)];
        let m = tp_fp_by_distance(&preds, &cs).unwrap();
        assert_eq!(m[&0], (1, 0));
        assert_eq!(m[&2], (0, 1));
        assert_eq!(tp_fp_tsv(&m), "k\ttp\tfp\n0\t1\t0\n2\t0\t1\n");
    }
}
