//! Standard LSTM cell (four gates, additive cell path), stacked layers, and
//! backpropagation through time with exact analytic gradients.
//!
//! The cell: i,f,o = sigmoid(affine), g = tanh(affine),
//! c' = f.c + i.g, h' = o.tanh(c').

use super::{Matrix, Parameter, Scalar};
use rand::Rng;

const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;
const GATE_OUTPUT: usize = 3;

/// One gate's parameters: input weights, recurrent weights, bias.
#[derive(Debug, Clone)]
pub struct Gate<F: Scalar> {
    pub w: Parameter<F>,
    pub u: Parameter<F>,
    pub b: Parameter<F>,
}

/// Per-layer recurrent state: hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F: Scalar> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Scalar> LayerState<F> {
    pub fn zeros(hidden_dim: usize) -> Self {
        LayerState { h: vec![F::zero(); hidden_dim], c: vec![F::zero(); hidden_dim] }
    }
}

/// Stack state: one [`LayerState`] per layer, bottom to top.
pub type RecurrentState<F> = Vec<LayerState<F>>;

/// Everything one step needs to replay for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<F: Scalar> {
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    pub c_prev: Vec<F>,
    pub i: Vec<F>,
    pub f: Vec<F>,
    pub g: Vec<F>,
    pub o: Vec<F>,
    pub c: Vec<F>,
    pub tanh_c: Vec<F>,
    pub h: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct LstmLayer<F: Scalar> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub gates: [Gate<F>; 4],
}

fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

impl<F: Scalar> LstmLayer<F> {
    /// Uniform [-0.1, 0.1] init; forget-gate bias set to 1.0.
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let gates = std::array::from_fn(|gi| {
            let name = GATE_NAMES[gi];
            let mut b = Matrix::uniform(hidden_dim, 1, 0.1, rng);
            if gi == GATE_FORGET {
                b.fill(F::one());
            }
            Gate {
                w: Parameter::new(format!("{prefix}.{name}.w"), Matrix::uniform(hidden_dim, input_dim, 0.1, rng)),
                u: Parameter::new(format!("{prefix}.{name}.u"), Matrix::uniform(hidden_dim, hidden_dim, 0.1, rng)),
                b: Parameter::new(format!("{prefix}.{name}.b"), b),
            }
        });
        LstmLayer { input_dim, hidden_dim, gates }
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        self.gates.iter().flat_map(|g| [&g.w, &g.u, &g.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.gates.iter_mut().flat_map(|g| [&mut g.w, &mut g.u, &mut g.b]).collect()
    }

    fn gate_preact(&self, gi: usize, x: &[F], h_prev: &[F]) -> Vec<F> {
        let gate = &self.gates[gi];
        let mut z: Vec<F> = gate.b.value.as_slice().to_vec();
        gate.w.value.matvec_add(x, &mut z);
        gate.u.value.matvec_add(h_prev, &mut z);
        z
    }

    /// One cell step. `state` is the previous (h, c); the returned cache
    /// holds the new ones along with every intermediate needed by backward.
    pub fn step(&self, x: &[F], state: &LayerState<F>) -> StepCache<F> {
        debug_assert_eq!(x.len(), self.input_dim);
        debug_assert_eq!(state.h.len(), self.hidden_dim);
        let i: Vec<F> = self.gate_preact(GATE_INPUT, x, &state.h).into_iter().map(sigmoid).collect();
        let f: Vec<F> = self.gate_preact(GATE_FORGET, x, &state.h).into_iter().map(sigmoid).collect();
        let g: Vec<F> = self.gate_preact(GATE_CELL, x, &state.h).into_iter().map(|z| z.tanh()).collect();
        let o: Vec<F> = self.gate_preact(GATE_OUTPUT, x, &state.h).into_iter().map(sigmoid).collect();
        let c: Vec<F> = (0..self.hidden_dim).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<F> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<F> = (0..self.hidden_dim).map(|k| o[k] * tanh_c[k]).collect();
        StepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Backward through one step. `dh` and `dc` are the gradients flowing
    /// into this step's outputs (h, c). Accumulates parameter gradients and
    /// returns (dx, dh_prev, dc_prev).
    pub fn step_backward(&mut self, cache: &StepCache<F>, dh: &[F], dc_in: &[F]) -> (Vec<F>, Vec<F>, Vec<F>) {
        let n = self.hidden_dim;
        let one = F::one();
        let mut dz = [
            vec![F::zero(); n], // input gate preact
            vec![F::zero(); n], // forget
            vec![F::zero(); n], // cell
            vec![F::zero(); n], // output
        ];
        let mut dc_prev = vec![F::zero(); n];
        for k in 0..n {
            let d_o = dh[k] * cache.tanh_c[k];
            let dc = dc_in[k] + dh[k] * cache.o[k] * (one - cache.tanh_c[k] * cache.tanh_c[k]);
            let d_i = dc * cache.g[k];
            let d_g = dc * cache.i[k];
            let d_f = dc * cache.c_prev[k];
            dc_prev[k] = dc * cache.f[k];
            dz[GATE_INPUT][k] = d_i * cache.i[k] * (one - cache.i[k]);
            dz[GATE_FORGET][k] = d_f * cache.f[k] * (one - cache.f[k]);
            dz[GATE_CELL][k] = d_g * (one - cache.g[k] * cache.g[k]);
            dz[GATE_OUTPUT][k] = d_o * cache.o[k] * (one - cache.o[k]);
        }
        let mut dx = vec![F::zero(); self.input_dim];
        let mut dh_prev = vec![F::zero(); n];
        for gi in 0..4 {
            let gate = &mut self.gates[gi];
            gate.w.grad.add_outer(&dz[gi], &cache.x);
            gate.u.grad.add_outer(&dz[gi], &cache.h_prev);
            for (b, d) in gate.b.grad.as_mut_slice().iter_mut().zip(dz[gi].iter()) {
                *b = *b + *d;
            }
            gate.w.value.matvec_transpose_add(&dz[gi], &mut dx);
            gate.u.value.matvec_transpose_add(&dz[gi], &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }
}

/// Forward caches for a whole stack over a sequence.
#[derive(Debug, Clone)]
pub struct StackRun<F: Scalar> {
    /// `[layer][t]` step caches.
    pub layer_caches: Vec<Vec<StepCache<F>>>,
    /// Dropout masks applied between layers: `[layer < top][t]`, absent in eval mode.
    pub inter_masks: Option<Vec<Vec<Vec<F>>>>,
    /// Top-layer hidden vector per timestep (no dropout applied).
    pub outputs: Vec<Vec<F>>,
}

#[derive(Debug, Clone)]
pub struct LstmStack<F: Scalar> {
    pub layers: Vec<LstmLayer<F>>,
}

impl<F: Scalar> LstmStack<F> {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden_dim };
                LstmLayer::new(&format!("{prefix}.{l}"), in_dim, hidden_dim, rng)
            })
            .collect();
        LstmStack { layers }
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim
    }

    pub fn zero_state(&self) -> RecurrentState<F> {
        self.layers.iter().map(|l| LayerState::zeros(l.hidden_dim)).collect()
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Advance all layers one step (no dropout; used for streaming inference).
    /// Arithmetic is identical to [`LstmStack::forward`] without dropout, so
    /// word-by-word streaming reproduces the full-sequence pass bitwise.
    pub fn step_eval(&self, x: &[F], state: &RecurrentState<F>) -> (Vec<F>, RecurrentState<F>) {
        debug_assert_eq!(state.len(), self.layers.len());
        let mut new_state = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (layer, st) in self.layers.iter().zip(state.iter()) {
            let cache = layer.step(&input, st);
            input = cache.h.clone();
            new_state.push(LayerState { h: cache.h, c: cache.c });
        }
        (input, new_state)
    }

    /// Full-sequence forward. `dropout` (rate, rng) applies inverted-dropout
    /// masks between stacked layers, resampled per timestep; `None` is eval
    /// mode. `init` defaults to the all-zero state.
    pub fn forward(
        &self,
        xs: &[Vec<F>],
        init: Option<&RecurrentState<F>>,
        mut dropout: Option<(f64, &mut rand_chacha::ChaCha8Rng)>,
    ) -> StackRun<F> {
        let num_layers = self.layers.len();
        let t_len = xs.len();
        let mut layer_caches: Vec<Vec<StepCache<F>>> = vec![Vec::with_capacity(t_len); num_layers];
        let mut inter_masks: Option<Vec<Vec<Vec<F>>>> =
            dropout.as_ref().map(|_| vec![Vec::with_capacity(t_len); num_layers.saturating_sub(1)]);
        let mut states: RecurrentState<F> = match init {
            Some(s) => {
                assert_eq!(s.len(), num_layers, "initial state layer count mismatch");
                s.clone()
            }
            None => self.zero_state(),
        };
        let mut outputs = Vec::with_capacity(t_len);
        for x in xs {
            let mut input = x.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let cache = layer.step(&input, &states[l]);
                states[l] = LayerState { h: cache.h.clone(), c: cache.c.clone() };
                input = cache.h.clone();
                layer_caches[l].push(cache);
                if l + 1 < num_layers {
                    if let Some((rate, rng)) = dropout.as_mut() {
                        let mask = super::dropout_mask::<F>(input.len(), *rate, rng);
                        for (v, m) in input.iter_mut().zip(mask.iter()) {
                            *v = *v * *m;
                        }
                        inter_masks.as_mut().unwrap()[l].push(mask);
                    }
                }
            }
            outputs.push(input);
        }
        StackRun { layer_caches, inter_masks, outputs }
    }

    /// BPTT over a recorded forward run. `d_top[t]` is the gradient into the
    /// top-layer output at step t; `d_final`, when present, injects gradient
    /// into each layer's final (h, c). Returns (d_inputs, d_initial_state).
    pub fn backward(
        &mut self,
        run: &StackRun<F>,
        d_top: &[Vec<F>],
        d_final: Option<&RecurrentState<F>>,
    ) -> (Vec<Vec<F>>, RecurrentState<F>) {
        let num_layers = self.layers.len();
        let t_len = run.outputs.len();
        assert_eq!(d_top.len(), t_len);
        let mut d_out: Vec<Vec<F>> = d_top.to_vec();
        let mut d_init: RecurrentState<F> = Vec::with_capacity(num_layers);
        let mut d_below: Vec<Vec<F>> = Vec::new();
        for l in (0..num_layers).rev() {
            let hidden = self.layers[l].hidden_dim;
            let mut dh_rec = d_final.map_or_else(|| vec![F::zero(); hidden], |f| f[l].h.clone());
            let mut dc_rec = d_final.map_or_else(|| vec![F::zero(); hidden], |f| f[l].c.clone());
            let mut dxs: Vec<Vec<F>> = vec![Vec::new(); t_len];
            for t in (0..t_len).rev() {
                let mut dh = d_out[t].clone();
                for (a, b) in dh.iter_mut().zip(dh_rec.iter()) {
                    *a = *a + *b;
                }
                let cache = &run.layer_caches[l][t];
                // Caches are read from the run while the layer mutates its
                // grads; split borrows via raw indexing into self.layers.
                let (dx, dh_prev, dc_prev) = self.layers[l].step_backward(cache, &dh, &dc_rec);
                dxs[t] = dx;
                dh_rec = dh_prev;
                dc_rec = dc_prev;
            }
            d_init.push(LayerState { h: dh_rec, c: dc_rec });
            if l > 0 {
                // Gradient into layer l-1's output passes back through the
                // inter-layer dropout mask.
                if let Some(masks) = &run.inter_masks {
                    for (t, dx) in dxs.iter_mut().enumerate() {
                        for (v, m) in dx.iter_mut().zip(masks[l - 1][t].iter()) {
                            *v = *v * *m;
                        }
                    }
                }
                d_out = dxs;
            } else {
                d_below = dxs;
            }
        }
        d_init.reverse();
        (d_below, d_init)
    }
}

/// Per-step outputs of a bidirectional pass: forward and backward stacks run
/// over the sequence (backward on the reversed sequence), concatenated per
/// original position. Offline mode only; streaming cannot see the future.
pub fn bidirectional_outputs<F: Scalar>(fwd: &StackRun<F>, bwd: &StackRun<F>) -> Vec<Vec<F>> {
    let t_len = fwd.outputs.len();
    assert_eq!(bwd.outputs.len(), t_len);
    (0..t_len)
        .map(|t| {
            let mut v = fwd.outputs[t].clone();
            v.extend_from_slice(&bwd.outputs[t_len - 1 - t]);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed_layer(input_dim: usize, hidden_dim: usize) -> LstmLayer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = LstmLayer::<f64>::new("t", input_dim, hidden_dim, &mut rng);
        for p in layer.params_mut() {
            p.value.fill(0.0);
        }
        layer
    }

    #[test]
    fn zero_everything_is_a_fixed_point() {
        // sigmoid(0)=0.5, tanh(0)=0 so c'=0 and h'=0.5*tanh(0)=0.
        let layer = zeroed_layer(3, 4);
        let cache = layer.step(&[0.0; 3], &LayerState::zeros(4));
        assert!(cache.h.iter().all(|&v| v == 0.0));
        assert!(cache.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_forget_bias_preserves_cell() {
        // 1-dim cell, all weights zero, forget bias large positive, c=1, x=0:
        // i=0.5, g=tanh(0)=0 so c' = sigmoid(50)*1 ~= 1 exactly to f64 precision.
        let mut layer = zeroed_layer(1, 1);
        layer.gates[1].b.value.fill(50.0);
        let state = LayerState { h: vec![0.0], c: vec![1.0] };
        let cache = layer.step(&[0.0], &state);
        let expected_c = 1.0 / (1.0 + (-50.0f64).exp());
        assert!((cache.c[0] - expected_c).abs() < 1e-15);
        assert!((cache.c[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        // 1x1 cell with fixed weights, checked against a by-hand evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = LstmLayer::<f64>::new("t", 1, 1, &mut rng);
        let vals = [
            0.3, 0.2, 0.1, // i: w u b
            -0.4, 0.5, 1.0, // f
            0.7, -0.2, 0.0, // g
            0.6, 0.1, -0.3, // o
        ];
        for (p, v) in layer.params_mut().into_iter().zip(vals.iter()) {
            p.value.fill(*v);
        }
        let x = 0.8;
        let h0 = -0.5;
        let c0 = 0.25;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = sig(0.3 * x + 0.2 * h0 + 0.1);
        let f = sig(-0.4 * x + 0.5 * h0 + 1.0);
        let g = (0.7 * x + -0.2 * h0 + 0.0f64).tanh();
        let o = sig(0.6 * x + 0.1 * h0 + -0.3);
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let cache = layer.step(&[x], &LayerState { h: vec![h0], c: vec![c0] });
        assert!((cache.h[0] - h).abs() < 1e-15);
        assert!((cache.c[0] - c).abs() < 1e-15);
    }

    #[test]
    fn sequence_forward_of_length_one_equals_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = LstmStack::<f64>::new("s", 3, 4, 2, &mut rng);
        let x = vec![0.1, -0.2, 0.3];
        let run = stack.forward(&[x.clone()], None, None);
        let (h, _) = stack.step_eval(&x, &stack.zero_state());
        assert_eq!(run.outputs[0], h);
    }

    #[test]
    fn state_carry_matches_split_sequence() {
        // Running the prefix, carrying the state, then the suffix must equal
        // one uninterrupted pass (bitwise).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = LstmStack::<f64>::new("s", 2, 3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..6).map(|t| vec![0.1 * t as f64, -0.05 * t as f64]).collect();
        let full = stack.forward(&xs, None, None);

        let mut state = stack.zero_state();
        let mut streamed = Vec::new();
        for x in &xs {
            let (h, next) = stack.step_eval(x, &state);
            streamed.push(h);
            state = next;
        }
        assert_eq!(full.outputs, streamed);

        // Explicit split: prefix produces S, then forward(suffix, S).
        let prefix = stack.forward(&xs[..3], None, None);
        let mut mid_state: RecurrentState<f64> = Vec::new();
        for l in 0..2 {
            let cache = &prefix.layer_caches[l][2];
            mid_state.push(LayerState { h: cache.h.clone(), c: cache.c.clone() });
        }
        let suffix = stack.forward(&xs[3..], Some(&mid_state), None);
        assert_eq!(&full.outputs[3..], &suffix.outputs[..]);
    }

    #[test]
    fn tied_weight_bidirectional_is_symmetric_on_palindromes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = LstmStack::<f64>::new("s", 2, 3, 1, &mut rng);
        let a = vec![0.3, -0.1];
        let b = vec![-0.2, 0.4];
        let xs = vec![a.clone(), b.clone(), a.clone()]; // palindrome
        let fwd = stack.forward(&xs, None, None);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let bwd = stack.forward(&rev, None, None);
        let outs = bidirectional_outputs(&fwd, &bwd);
        // With tied weights on a palindrome, position t mirrors position T-1-t
        // with the two halves swapped.
        for t in 0..xs.len() {
            let mirror = xs.len() - 1 - t;
            let (f_half, b_half) = outs[t].split_at(3);
            let (mf_half, mb_half) = outs[mirror].split_at(3);
            assert_eq!(f_half, mb_half);
            assert_eq!(b_half, mf_half);
        }
    }
}
