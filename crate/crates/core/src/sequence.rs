//! Connectionist bidirectional RNN with a softmax head.
//!
//! ```text
//! hf_t = tanh(V i_t + W hf_{t-1})
//! hb_t = tanh(V i_t + W hb_{t+1})
//! h_t  = tanh(hf_t + hb_t + W h_{t-1})
//! y    = softmax(U h_N + b_y)
//! ```
//!
//! All boundary states are zero and `W` is shared by the three recurrences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// Output labels; index `i` is softmax row `i`.
    pub labels: Vec<String>,
    pub v: Matrix,
    pub w: Matrix,
    pub u: Matrix,
    pub b_y: Vec<f64>,
}

impl SequenceParams {
    pub fn zeros(input_dim: usize, hidden: usize, labels: Vec<String>) -> Self {
        let r = labels.len();
        SequenceParams {
            input_dim,
            hidden,
            labels,
            v: Matrix::zeros(hidden, input_dim),
            w: Matrix::zeros(hidden, hidden),
            u: Matrix::zeros(r, hidden),
            b_y: vec![0.0; r],
        }
    }

    /// Fan-based uniform `V` and `U`, identity `W`, zero `b_y`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, labels: Vec<String>, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden, labels);
        p.v = Matrix::fan_uniform(hidden, input_dim, rng);
        p.w = Matrix::identity(hidden);
        p.u = Matrix::fan_uniform(p.labels.len(), hidden, rng);
        p
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Forward activations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub inputs: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    pub combined: Vec<Vec<f64>>,
    pub distribution: Vec<f64>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `h_N`.
    pub fn last_hidden(&self) -> &[f64] {
        self.combined.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn forward(inputs: Vec<Vec<f64>>, params: &SequenceParams) -> Result<EncoderStates> {
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Dimension {
            context: "sequence length",
            expected: 1,
            found: 0,
        });
    }
    for i in &inputs {
        if i.len() != params.input_dim {
            return Err(Error::Dimension {
                context: "sequence input",
                expected: params.input_dim,
                found: i.len(),
            });
        }
    }
    let h = params.hidden;
    let projected: Vec<Vec<f64>> = inputs.iter().map(|i| params.v.matvec(i)).collect();

    let mut forward = Vec::with_capacity(n);
    let mut prev = vec![0.0; h];
    for p in &projected {
        let mut z = p.clone();
        params.w.matvec_acc(&prev, &mut z);
        linalg::tanh_in_place(&mut z);
        prev = z.clone();
        forward.push(z);
    }

    let mut backward = vec![Vec::new(); n];
    let mut next = vec![0.0; h];
    for t in (0..n).rev() {
        let mut z = projected[t].clone();
        params.w.matvec_acc(&next, &mut z);
        linalg::tanh_in_place(&mut z);
        next = z.clone();
        backward[t] = z;
    }

    let mut combined = Vec::with_capacity(n);
    let mut prev = vec![0.0; h];
    for t in 0..n {
        let mut z = forward[t].clone();
        linalg::add_assign(&mut z, &backward[t]);
        params.w.matvec_acc(&prev, &mut z);
        linalg::tanh_in_place(&mut z);
        prev = z.clone();
        combined.push(z);
    }

    let mut logits = params.b_y.clone();
    params.u.matvec_acc(&combined[n - 1], &mut logits);
    let distribution = linalg::softmax(&logits);
    if distribution.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax output".into()));
    }
    Ok(EncoderStates {
        inputs,
        forward,
        backward,
        combined,
        distribution,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceGrads {
    pub v: Matrix,
    pub w: Matrix,
    pub u: Matrix,
    pub b_y: Vec<f64>,
    /// `∂L/∂i_t` for every position.
    pub inputs: Vec<Vec<f64>>,
}

/// Gradients of the cross-entropy loss against label index `gold`.
pub fn backward(states: &EncoderStates, gold: usize, params: &SequenceParams) -> Result<SequenceGrads> {
    let r = params.num_labels();
    if gold >= r {
        return Err(Error::Label(format!("gold label index {gold} outside {r} labels")));
    }
    let n = states.len();
    let h = params.hidden;
    let mut g = SequenceGrads {
        v: Matrix::zeros(h, params.input_dim),
        w: Matrix::zeros(h, h),
        u: Matrix::zeros(r, h),
        b_y: states.distribution.clone(),
        inputs: vec![vec![0.0; params.input_dim]; n],
    };
    g.b_y[gold] -= 1.0;
    g.u.add_outer(&g.b_y, &states.combined[n - 1]);

    let zero = vec![0.0; h];
    let mut dh = vec![0.0; h];
    params.u.matvec_t_acc(&g.b_y, &mut dh);
    let mut dhf = vec![vec![0.0; h]; n];
    let mut dhb = vec![vec![0.0; h]; n];
    for t in (0..n).rev() {
        let dz = linalg::tanh_backward(&states.combined[t], &dh);
        let prev = if t > 0 { &states.combined[t - 1] } else { &zero };
        g.w.add_outer(&dz, prev);
        linalg::add_assign(&mut dhf[t], &dz);
        linalg::add_assign(&mut dhb[t], &dz);
        dh = vec![0.0; h];
        params.w.matvec_t_acc(&dz, &mut dh);
    }

    let mut carry = vec![0.0; h];
    for t in (0..n).rev() {
        linalg::add_assign(&mut dhf[t], &carry);
        let dz = linalg::tanh_backward(&states.forward[t], &dhf[t]);
        g.v.add_outer(&dz, &states.inputs[t]);
        params.v.matvec_t_acc(&dz, &mut g.inputs[t]);
        let prev = if t > 0 { &states.forward[t - 1] } else { &zero };
        g.w.add_outer(&dz, prev);
        carry = vec![0.0; h];
        params.w.matvec_t_acc(&dz, &mut carry);
    }

    let mut carry = vec![0.0; h];
    for t in 0..n {
        linalg::add_assign(&mut dhb[t], &carry);
        let dz = linalg::tanh_backward(&states.backward[t], &dhb[t]);
        g.v.add_outer(&dz, &states.inputs[t]);
        params.v.matvec_t_acc(&dz, &mut g.inputs[t]);
        let next = if t + 1 < n { &states.backward[t + 1] } else { &zero };
        g.w.add_outer(&dz, next);
        carry = vec![0.0; h];
        params.w.matvec_t_acc(&dz, &mut carry);
    }
    Ok(g)
}

/// Arg-max label of one distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label_index: usize,
    pub label: String,
    pub probability: f64,
    pub distribution: Vec<f64>,
}

/// Ties go to the lowest label index.
pub fn argmax(distribution: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in distribution.iter().enumerate() {
        if p > distribution[best] {
            best = i;
        }
    }
    best
}

pub fn classify(distribution: Vec<f64>, params: &SequenceParams) -> Classification {
    let i = argmax(&distribution);
    Classification {
        label_index: i,
        label: params.labels[i].clone(),
        probability: distribution[i],
        distribution,
    }
}

pub fn predict(inputs: Vec<Vec<f64>>, params: &SequenceParams) -> Result<Classification> {
    let states = forward(inputs, params)?;
    Ok(classify(states.distribution, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut p = SequenceParams::new(3, 4, labels(5), &mut ChaCha8Rng::seed_from_u64(0));
        p.u = Matrix::zeros(5, 4);
        let s = forward(vec![vec![0.3, -0.2, 0.9]; 4], &p).unwrap();
        for y in &s.distribution {
            assert!((y - 0.2).abs() < 1e-15);
        }
        assert_eq!(argmax(&s.distribution), 0);
    }

    #[test]
    fn scalar_single_step() {
        let mut p = SequenceParams::zeros(1, 1, labels(2));
        p.v = Matrix::from_vec(1, 1, vec![1.0]);
        p.w = Matrix::identity(1);
        let s = forward(vec![vec![0.5]], &p).unwrap();
        let expected = (2.0 * 0.5f64.tanh()).tanh();
        assert!((s.combined[0][0] - expected).abs() < 1e-15);
        assert!((expected - 0.727894).abs() < 1e-6);
    }

    #[test]
    fn hidden_states_are_bounded() {
        let mut p = SequenceParams::new(2, 3, labels(2), &mut ChaCha8Rng::seed_from_u64(1));
        p.v.as_mut_slice().iter_mut().for_each(|v| *v *= 100.0);
        let s = forward(vec![vec![5.0, -3.0]; 6], &p).unwrap();
        for h in s.forward.iter().chain(&s.backward).chain(&s.combined) {
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
        assert!((s.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_input_swaps_directions() {
        let p = SequenceParams::new(3, 4, labels(3), &mut ChaCha8Rng::seed_from_u64(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a = forward(inputs.clone(), &p).unwrap();
        let mut rev = inputs;
        rev.reverse();
        let b = forward(rev, &p).unwrap();
        let n = a.len();
        for t in 0..n {
            for k in 0..4 {
                assert!((a.forward[t][k] - b.backward[n - 1 - t][k]).abs() < 1e-12);
                assert!((a.backward[t][k] - b.forward[n - 1 - t][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_shapes_are_errors() {
        let p = SequenceParams::new(2, 2, labels(2), &mut ChaCha8Rng::seed_from_u64(4));
        assert!(forward(Vec::new(), &p).is_err());
        assert!(forward(vec![vec![1.0; 3]], &p).is_err());
        let s = forward(vec![vec![1.0; 2]], &p).unwrap();
        assert!(matches!(backward(&s, 2, &p), Err(Error::Label(_))));
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.375, 0.375]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn output_gradient_is_y_minus_onehot() {
        let p = SequenceParams::new(2, 3, labels(3), &mut ChaCha8Rng::seed_from_u64(5));
        let s = forward(vec![vec![0.1, 0.2], vec![0.3, -0.4]], &p).unwrap();
        let g = backward(&s, 1, &p).unwrap();
        for (i, (&gy, &y)) in g.b_y.iter().zip(&s.distribution).enumerate() {
            let onehot = if i == 1 { 1.0 } else { 0.0 };
            assert_eq!(gy, y - onehot);
        }
    }

    fn loss(inputs: &[Vec<f64>], p: &SequenceParams, gold: usize) -> f64 {
        -forward(inputs.to_vec(), p).unwrap().distribution[gold].ln()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in 1..=4 {
            let mut p = SequenceParams::new(3, 2, labels(3), &mut rng);
            p.w = Matrix::uniform(2, 2, 0.8, &mut rng);
            p.b_y = vec![0.1, -0.2, 0.05];
            let mut inputs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let gold = n % 3;
            let g = backward(&forward(inputs.clone(), &p).unwrap(), gold, &p).unwrap();
            let eps = 1e-5;
            let check = |a: f64, num: f64| {
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-5, "analytic {a} numeric {num}");
            };
            macro_rules! fd_matrix {
                ($field:ident) => {
                    for k in 0..p.$field.as_slice().len() {
                        let orig = p.$field.as_slice()[k];
                        p.$field.as_mut_slice()[k] = orig + eps;
                        let lp = loss(&inputs, &p, gold);
                        p.$field.as_mut_slice()[k] = orig - eps;
                        let lm = loss(&inputs, &p, gold);
                        p.$field.as_mut_slice()[k] = orig;
                        check(g.$field.as_slice()[k], (lp - lm) / (2.0 * eps));
                    }
                };
            }
            fd_matrix!(v);
            fd_matrix!(w);
            fd_matrix!(u);
            for k in 0..3 {
                let orig = p.b_y[k];
                p.b_y[k] = orig + eps;
                let lp = loss(&inputs, &p, gold);
                p.b_y[k] = orig - eps;
                let lm = loss(&inputs, &p, gold);
                p.b_y[k] = orig;
                check(g.b_y[k], (lp - lm) / (2.0 * eps));
            }
            for t in 0..n {
                for k in 0..3 {
                    let orig = inputs[t][k];
                    inputs[t][k] = orig + eps;
                    let lp = loss(&inputs, &p, gold);
                    inputs[t][k] = orig - eps;
                    let lm = loss(&inputs, &p, gold);
                    inputs[t][k] = orig;
                    check(g.inputs[t][k], (lp - lm) / (2.0 * eps));
                }
            }
        }
    }
}
