//! Embedding table, dense heads with activations, and inverted dropout.

use super::{Matrix, Parameter, Scalar};
use crate::error::{Error, Result};
use rand::Rng;

/// Token embedding table (vocab x embed_dim).
#[derive(Debug, Clone)]
pub struct Embedding<F: Scalar> {
    pub table: Parameter<F>,
}

impl<F: Scalar> Embedding<F> {
    pub fn new(name: &str, vocab_size: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        Embedding { table: Parameter::new(name, Matrix::uniform(vocab_size, embed_dim, 0.1, rng)) }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.value.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.table.value.cols
    }

    /// Row lookup. Errors on an out-of-range id.
    pub fn forward(&self, token_id: usize) -> Result<Vec<F>> {
        if token_id >= self.vocab_size() {
            return Err(Error::Validation(format!(
                "token id {token_id} out of range for vocabulary of size {}",
                self.vocab_size()
            )));
        }
        Ok(self.table.value.row(token_id).to_vec())
    }

    /// Upstream gradient accumulates into the looked-up row only.
    pub fn backward(&mut self, token_id: usize, upstream: &[F]) {
        let row = self.table.grad.row_mut(token_id);
        for (g, u) in row.iter_mut().zip(upstream.iter()) {
            *g = *g + *u;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Sigmoid,
    Softmax,
}

/// Cache of a dense forward pass; holds what backward needs.
#[derive(Debug, Clone)]
pub struct DenseCache<F: Scalar> {
    pub input: Vec<F>,
    pub output: Vec<F>,
}

/// Fully connected layer `activation(W h + b)`.
#[derive(Debug, Clone)]
pub struct Dense<F: Scalar> {
    pub w: Parameter<F>,
    pub b: Parameter<F>,
    pub activation: Activation,
}

impl<F: Scalar> Dense<F> {
    pub fn new(prefix: &str, input_dim: usize, output_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Dense {
            w: Parameter::new(format!("{prefix}.w"), Matrix::uniform(output_dim, input_dim, 0.1, rng)),
            b: Parameter::new(format!("{prefix}.b"), Matrix::uniform(output_dim, 1, 0.1, rng)),
            activation,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.rows
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn forward(&self, input: &[F]) -> DenseCache<F> {
        let mut z: Vec<F> = self.b.value.as_slice().to_vec();
        self.w.value.matvec_add(input, &mut z);
        let output = match self.activation {
            Activation::None => z,
            Activation::Sigmoid => z.into_iter().map(|v| F::one() / (F::one() + (-v).exp())).collect(),
            Activation::Softmax => softmax(&z),
        };
        DenseCache { input: input.to_vec(), output }
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, cache: &DenseCache<F>, d_out: &[F]) -> Vec<F> {
        let dz: Vec<F> = match self.activation {
            Activation::None => d_out.to_vec(),
            Activation::Sigmoid => cache
                .output
                .iter()
                .zip(d_out.iter())
                .map(|(&y, &d)| d * y * (F::one() - y))
                .collect(),
            Activation::Softmax => {
                // dz_j = y_j * (d_j - sum_k d_k y_k)
                let dot = cache
                    .output
                    .iter()
                    .zip(d_out.iter())
                    .fold(F::zero(), |acc, (&y, &d)| acc + y * d);
                cache.output.iter().zip(d_out.iter()).map(|(&y, &d)| y * (d - dot)).collect()
            }
        };
        self.w.grad.add_outer(&dz, &cache.input);
        for (b, d) in self.b.grad.as_mut_slice().iter_mut().zip(dz.iter()) {
            *b = *b + *d;
        }
        let mut dx = vec![F::zero(); cache.input.len()];
        self.w.value.matvec_transpose_add(&dz, &mut dx);
        dx
    }
}

/// Numerically stable softmax (max subtraction). Output sums to 1.
pub fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let max = z.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<F> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout mask: each entry 0 with probability `rate`, otherwise
/// 1/(1-rate), so the expectation is the identity.
pub fn dropout_mask<F: Scalar>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<F> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return vec![F::one(); len];
    }
    let keep = F::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Spec-level dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); eval mode is the identity.
pub fn dropout<F: Scalar>(h: &[F], rate: f64, mode: DropoutMode, rng: &mut impl Rng) -> Vec<F> {
    match mode {
        DropoutMode::Eval => h.to_vec(),
        DropoutMode::Train => {
            let mask = dropout_mask::<F>(h.len(), rate, rng);
            h.iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_selects_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut emb = Embedding::<f64>::new("e", 3, 3, &mut rng);
        emb.table.value = Matrix::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(emb.forward(1).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(emb.forward(3).is_err());
    }

    #[test]
    fn zero_embedding_gives_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut emb = Embedding::<f64>::new("e", 4, 2, &mut rng);
        emb.table.value.fill(0.0);
        assert_eq!(emb.forward(2).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn embedding_backward_touches_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut emb = Embedding::<f64>::new("e", 4, 3, &mut rng);
        emb.backward(2, &[1.0, 2.0, 3.0]);
        for r in 0..4 {
            let expected = if r == 2 { vec![1.0, 2.0, 3.0] } else { vec![0.0; 3] };
            assert_eq!(emb.table.grad.row(r), &expected[..]);
        }
    }

    #[test]
    fn zero_dense_sigmoid_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::<f64>::new("d", 3, 2, Activation::Sigmoid, &mut rng);
        d.w.value.fill(0.0);
        d.b.value.fill(0.0);
        let out = d.forward(&[0.5, -0.2, 0.1]).output;
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let out = softmax(&[0.0f64, 0.0, 0.0]);
        for v in &out {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_a_simplex_point_under_extreme_logits() {
        let out = softmax(&[1000.0f64, -1000.0, 0.0]);
        assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = vec![1.0f64, -2.0, 3.0];
        assert_eq!(dropout(&h, 0.0, DropoutMode::Train, &mut rng), h);
        assert_eq!(dropout(&h, 0.9, DropoutMode::Eval, &mut rng), h);
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        // Law of large numbers: 1e5 unit entries at rate 0.25 keep mean ~1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = vec![1.0f64; 100_000];
        let out = dropout(&h, 0.25, DropoutMode::Train, &mut rng);
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }
}
