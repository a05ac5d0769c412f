//! Bottom-up subtree embeddings.
//!
//! A word with dependents gets `c = tanh(Σ_q W[rel(q)] · [x_q, c_q] + b)`,
//! summed over children in token order; a word without dependents gets the
//! learned leaf vector. Relation labels unseen when the parameters were
//! created share one fallback matrix.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeRef, Subtree};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveParams {
    pub word_dim: usize,
    pub subtree_dim: usize,
    /// Sorted relation labels; `w_rel[i]` belongs to `relations[i]` and the
    /// last matrix is the fallback for unseen labels.
    pub relations: Vec<String>,
    pub w_rel: Vec<Matrix>,
    pub bias: Vec<f64>,
    pub leaf: Vec<f64>,
}

impl RecursiveParams {
    pub fn zeros<I, S>(word_dim: usize, subtree_dim: usize, relations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut relations: Vec<String> = relations.into_iter().map(Into::into).collect();
        relations.sort();
        relations.dedup();
        let w_rel = (0..=relations.len())
            .map(|_| Matrix::zeros(subtree_dim, word_dim + subtree_dim))
            .collect();
        RecursiveParams {
            word_dim,
            subtree_dim,
            relations,
            w_rel,
            bias: vec![0.0; subtree_dim],
            leaf: vec![0.0; subtree_dim],
        }
    }

    /// Fan-based uniform `W_r`; zero bias and leaf vector.
    pub fn new<I, S, R>(word_dim: usize, subtree_dim: usize, relations: I, rng: &mut R) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
        R: Rng + ?Sized,
    {
        let mut p = Self::zeros(word_dim, subtree_dim, relations);
        for w in &mut p.w_rel {
            *w = Matrix::fan_uniform(subtree_dim, word_dim + subtree_dim, rng);
        }
        p
    }

    pub fn relation_index(&self, label: &str) -> usize {
        self.relations
            .binary_search_by(|r| r.as_str().cmp(label))
            .unwrap_or(self.relations.len())
    }

    pub fn fallback_index(&self) -> usize {
        self.relations.len()
    }
}

/// Forward values of one subtree node, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtreeEncoding {
    pub node: NodeRef,
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    /// `(relation matrix index, child encoding)`.
    pub children: Vec<(usize, SubtreeEncoding)>,
}

impl SubtreeEncoding {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// `[x, c]`.
    pub fn p(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.x.len() + self.c.len());
        p.extend_from_slice(&self.x);
        p.extend_from_slice(&self.c);
        p
    }
}

pub fn encode_subtree<F>(subtree: &Subtree, word_vector: &F, params: &RecursiveParams) -> Result<SubtreeEncoding>
where
    F: Fn(NodeRef) -> Vec<f64>,
{
    let x = word_vector(subtree.root);
    if x.len() != params.word_dim {
        return Err(Error::Dimension {
            context: "subtree word vector",
            expected: params.word_dim,
            found: x.len(),
        });
    }
    if subtree.is_leaf() {
        return Ok(SubtreeEncoding {
            node: subtree.root,
            x,
            c: params.leaf.clone(),
            children: Vec::new(),
        });
    }
    let mut z = params.bias.clone();
    let mut children = Vec::with_capacity(subtree.children.len());
    for (label, child) in &subtree.children {
        let enc = encode_subtree(child, word_vector, params)?;
        let r = params.relation_index(label);
        params.w_rel[r].matvec_acc(&enc.p(), &mut z);
        children.push((r, enc));
    }
    linalg::tanh_in_place(&mut z);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("subtree encoding at {}", subtree.root)));
    }
    Ok(SubtreeEncoding {
        node: subtree.root,
        x,
        c: z,
        children,
    })
}

/// Gradients of the recursive parameters and of the word vectors below the
/// subtree root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecursiveGrads {
    pub w_rel: BTreeMap<usize, Matrix>,
    pub bias: Vec<f64>,
    pub leaf: Vec<f64>,
    pub words: Vec<(NodeRef, Vec<f64>)>,
}

impl RecursiveGrads {
    pub fn zeros(params: &RecursiveParams) -> Self {
        RecursiveGrads {
            w_rel: BTreeMap::new(),
            bias: vec![0.0; params.subtree_dim],
            leaf: vec![0.0; params.subtree_dim],
            words: Vec::new(),
        }
    }
}

/// Backpropagates `upstream = ∂L/∂c` of the root into fresh gradients.
pub fn backprop_subtree(
    encoding: &SubtreeEncoding,
    upstream: &[f64],
    params: &RecursiveParams,
) -> Result<RecursiveGrads> {
    let mut grads = RecursiveGrads::zeros(params);
    backprop_into(encoding, upstream, params, &mut grads)?;
    Ok(grads)
}

/// Accumulating form of [`backprop_subtree`].
pub fn backprop_into(
    encoding: &SubtreeEncoding,
    upstream: &[f64],
    params: &RecursiveParams,
    grads: &mut RecursiveGrads,
) -> Result<()> {
    if upstream.len() != params.subtree_dim || encoding.c.len() != params.subtree_dim {
        return Err(Error::Dimension {
            context: "subtree gradient",
            expected: params.subtree_dim,
            found: upstream.len(),
        });
    }
    if encoding.is_leaf() {
        linalg::add_assign(&mut grads.leaf, upstream);
        return Ok(());
    }
    let dz = linalg::tanh_backward(&encoding.c, upstream);
    linalg::add_assign(&mut grads.bias, &dz);
    let d = params.word_dim;
    for (r, child) in &encoding.children {
        let w = &params.w_rel[*r];
        grads
            .w_rel
            .entry(*r)
            .or_insert_with(|| Matrix::zeros(w.rows(), w.cols()))
            .add_outer(&dz, &child.p());
        let mut dp = vec![0.0; w.cols()];
        w.matvec_t_acc(&dz, &mut dp);
        grads.words.push((child.node, dp[..d].to_vec()));
        backprop_into(child, &dp[d..], params, grads)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(i: usize) -> NodeRef {
        NodeRef::new(0, i)
    }

    fn one_child() -> Subtree {
        Subtree {
            root: node(1),
            children: vec![("amod".into(), Subtree::leaf(node(2)))],
        }
    }

    #[test]
    fn leaf_returns_leaf_vector_exactly() {
        let mut p = RecursiveParams::new(3, 2, ["nsubj"], &mut ChaCha8Rng::seed_from_u64(0));
        p.leaf = vec![0.123456789, -0.987654321];
        let enc = encode_subtree(&Subtree::leaf(node(1)), &|_| vec![1.0; 3], &p).unwrap();
        assert_eq!(enc.c, p.leaf);
        assert_eq!(enc.p().len(), 5);
    }

    #[test]
    fn zero_parameters_give_zero_encoding() {
        let p = RecursiveParams::zeros(3, 2, ["amod"]);
        let enc = encode_subtree(&one_child(), &|_| vec![0.7; 3], &p).unwrap();
        assert_eq!(enc.c, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_case() {
        let mut p = RecursiveParams::zeros(1, 1, ["amod"]);
        p.w_rel[0] = Matrix::from_vec(1, 2, vec![1.0, 1.0]);
        p.leaf = vec![0.1];
        let enc = encode_subtree(&one_child(), &|_| vec![0.5], &p).unwrap();
        assert!((enc.c[0] - 0.6f64.tanh()).abs() < 1e-15);
        assert!((enc.c[0] - 0.53705).abs() < 1e-5);
    }

    #[test]
    fn unseen_relation_uses_fallback() {
        let p = RecursiveParams::new(2, 2, ["amod", "nsubj"], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.relation_index("nsubj"), 1);
        assert_eq!(p.relation_index("xcomp"), p.fallback_index());
        let t = Subtree {
            root: node(1),
            children: vec![("xcomp".into(), Subtree::leaf(node(2)))],
        };
        let enc = encode_subtree(&t, &|_| vec![0.3, 0.1], &p).unwrap();
        assert_eq!(enc.children[0].0, 2);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = RecursiveParams::new(2, 2, ["amod"], &mut ChaCha8Rng::seed_from_u64(2));
        let enc = encode_subtree(&one_child(), &|_| vec![0.3, 0.1], &p).unwrap();
        let g = backprop_subtree(&enc, &[0.0, 0.0], &p).unwrap();
        assert!(g.bias.iter().chain(&g.leaf).all(|&v| v == 0.0));
        assert!(g.w_rel.values().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn leaf_gradient_lands_on_leaf_vector() {
        let p = RecursiveParams::new(2, 2, ["amod"], &mut ChaCha8Rng::seed_from_u64(3));
        let enc = encode_subtree(&Subtree::leaf(node(1)), &|_| vec![0.3, 0.1], &p).unwrap();
        let g = backprop_subtree(&enc, &[0.5, -2.0], &p).unwrap();
        assert_eq!(g.leaf, vec![0.5, -2.0]);
        assert!(g.w_rel.is_empty() && g.words.is_empty());
        assert_eq!(g.bias, vec![0.0, 0.0]);
        assert!(backprop_subtree(&enc, &[0.5], &p).is_err());
    }

    #[test]
    fn outputs_are_bounded() {
        let mut p = RecursiveParams::new(2, 3, ["a"], &mut ChaCha8Rng::seed_from_u64(4));
        for w in &mut p.w_rel {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= 5.0);
        }
        let t = Subtree {
            root: node(1),
            children: vec![("a".into(), one_child()), ("a".into(), Subtree::leaf(node(3)))],
        };
        let enc = encode_subtree(&t, &|n| vec![n.token as f64, -1.0], &p).unwrap();
        assert!(enc.c.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let p = RecursiveParams::new(1, 1, ["amod"], &mut ChaCha8Rng::seed_from_u64(5));
        let err = encode_subtree(&one_child(), &|_| vec![f64::NAN], &p).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = RecursiveParams::new(2, 3, ["a", "b"], &mut rng);
        p.bias = vec![0.1, -0.2, 0.3];
        p.leaf = vec![0.2, 0.4, -0.1];
        let t = Subtree {
            root: node(1),
            children: vec![
                ("a".into(), Subtree {
                    root: node(2),
                    children: vec![("zz".into(), Subtree::leaf(node(4)))],
                }),
                ("b".into(), Subtree::leaf(node(3))),
            ],
        };
        let mut words: Vec<Vec<f64>> = (0..5).map(|i| vec![0.3 * i as f64 - 0.5, 0.2]).collect();
        let r = [0.7, -1.3, 0.4];
        let loss = |p: &RecursiveParams, words: &[Vec<f64>]| {
            let enc = encode_subtree(&t, &|n: NodeRef| words[n.token].clone(), p).unwrap();
            linalg::dot(&enc.c, &r)
        };
        let enc = encode_subtree(&t, &|n: NodeRef| words[n.token].clone(), &p).unwrap();
        let g = backprop_subtree(&enc, &r, &p).unwrap();
        let eps = 1e-5;
        let check = |a: f64, num: f64| {
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-6, "analytic {a} numeric {num}");
        };
        for m in 0..p.w_rel.len() {
            for k in 0..p.w_rel[m].as_slice().len() {
                let orig = p.w_rel[m].as_slice()[k];
                p.w_rel[m].as_mut_slice()[k] = orig + eps;
                let lp = loss(&p, &words);
                p.w_rel[m].as_mut_slice()[k] = orig - eps;
                let lm = loss(&p, &words);
                p.w_rel[m].as_mut_slice()[k] = orig;
                let a = g.w_rel.get(&m).map_or(0.0, |w| w.as_slice()[k]);
                check(a, (lp - lm) / (2.0 * eps));
            }
        }
        for k in 0..3 {
            for which in 0..2 {
                let v = if which == 0 { &mut p.bias } else { &mut p.leaf };
                let orig = v[k];
                v[k] = orig + eps;
                let lp = loss(&p, &words);
                let v = if which == 0 { &mut p.bias } else { &mut p.leaf };
                v[k] = orig - eps;
                let lm = loss(&p, &words);
                let v = if which == 0 { &mut p.bias } else { &mut p.leaf };
                v[k] = orig;
                let a = if which == 0 { g.bias[k] } else { g.leaf[k] };
                check(a, (lp - lm) / (2.0 * eps));
            }
        }
        for w in 1..5 {
            for k in 0..2 {
                let orig = words[w][k];
                words[w][k] = orig + eps;
                let lp = loss(&p, &words);
                words[w][k] = orig - eps;
                let lm = loss(&p, &words);
                words[w][k] = orig;
                let a: f64 = g.words.iter().filter(|(n, _)| n.token == w).map(|(_, v)| v[k]).sum();
                check(a, (lp - lm) / (2.0 * eps));
            }
        }
    }
}
