//! Model assembly: the dual multi-task streaming model (shared embedding,
//! task-specific LSTM stacks, sigmoid boundary head, softmax intent head,
//! optional context encoder) and the offline turn-level BiLSTM classifier.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use train::{
    boundary_positions, build_mt_examples, build_turn_examples, ob_pairs, pb_tuples,
    predict_sequences, token_pairs, train, write_log_csv, LogRow, MtExample, SeqPrediction,
    TrainOptions, TrainResult, TurnExample,
};

use crate::corpus::{IntentTag, Vocabulary};
use crate::error::{Error, Result};
use crate::numkernel::{
    dropout_mask, Activation, Dense, DenseCache, Embedding, LayerState, LstmStack, Parameter,
    Parameterized, RecurrentState, Scalar, StackRun,
};
use crate::objective::{
    combined_loss, focal_loss, masked_intent_loss, unmasked_intent_loss, FocalConfig,
    MultiTaskWeights,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Context encoder input cap, in tokens; oldest tokens are dropped first.
pub const CONTEXT_TOKEN_CAP: usize = 120;

/// Hyperparameters and shapes for every model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub beta: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lookahead_k: usize,
    pub context_turns: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub ib_threshold: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 300,
            hidden_dim: 128,
            num_layers: 2,
            dropout: 0.25,
            num_classes: 16,
            beta: 0.5,
            focal_alpha: 1.0,
            focal_gamma: 8.0,
            lookahead_k: 0,
            context_turns: 0,
            epochs: 30,
            lr: 0.001,
            batch_size: 32,
            ib_threshold: 0.5,
            seed: 202,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 || self.num_classes == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.lookahead_k > 3 {
            return Err(Error::Config(format!("lookahead_k {} outside 0..=3", self.lookahead_k)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn focal(&self) -> FocalConfig {
        FocalConfig { alpha: self.focal_alpha, gamma: self.focal_gamma }
    }

    pub fn weights(&self) -> MultiTaskWeights {
        MultiTaskWeights { beta: self.beta }
    }

    /// Intent head width: the C classes plus the no-intent output.
    pub fn head_outputs(&self) -> usize {
        self.num_classes + 1
    }

    /// Index of the no-intent output in the intent head.
    pub fn o_index(&self) -> usize {
        self.num_classes
    }
}

/// The trained model flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Offline,
    MultiTask,
    MultiTaskLookahead,
    MultiTaskContext,
    IntentOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Offline,
        Variant::MultiTask,
        Variant::MultiTaskLookahead,
        Variant::MultiTaskContext,
        Variant::IntentOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Offline => "offline",
            Variant::MultiTask => "multitask",
            Variant::MultiTaskLookahead => "multitask_lookahead",
            Variant::MultiTaskContext => "multitask_context",
            Variant::IntentOnly => "intent_only",
        }
    }

    pub fn uses_context(&self) -> bool {
        matches!(self, Variant::MultiTaskContext)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .find(|v| v.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant '{s}', expected one of: {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The canonical tiny setup for gradient verification: a 64-bit multi-task
/// model (vocab 20, embed 4, hidden 5, 2 layers, 3 classes) and a labeled
/// sequence exercising the combined objective. Loss hyperparameters (beta,
/// focal alpha/gamma) and the init seed come from `config`.
pub fn grad_check_target(
    config: &ModelConfig,
) -> (MultiTaskModel<f64>, Vec<usize>, Vec<bool>, Vec<IntentTag>) {
    let tiny = ModelConfig {
        vocab_size: 20,
        embed_dim: 4,
        hidden_dim: 5,
        num_layers: 2,
        dropout: 0.0,
        num_classes: 3,
        beta: config.beta,
        focal_alpha: config.focal_alpha,
        focal_gamma: config.focal_gamma,
        lookahead_k: 0,
        context_turns: 0,
        seed: config.seed,
        ..ModelConfig::default()
    };
    let model = MultiTaskModel::<f64>::seeded(&tiny, false);
    let ids = vec![2, 5, 7, 3, 19, 4, 11];
    let mut ib = vec![false; ids.len()];
    ib[4] = true;
    let mut tags = vec![IntentTag::O; ids.len()];
    tags[4] = IntentTag::Class(1);
    (model, ids, ib, tags)
}

/// First maximum wins, so ties break toward the lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax over the C intent classes, excluding the trailing no-intent output.
pub fn argmax_class<F: Scalar>(dist: &[F]) -> usize {
    argmax(&dist[..dist.len() - 1])
}

/// Recurrent state for both task stacks of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStates<F: Scalar> {
    pub ib: RecurrentState<F>,
    pub intent: RecurrentState<F>,
}

/// One labeled streaming output step.
pub struct StepOutput<F: Scalar> {
    pub ib_prob: F,
    pub intent_dist: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct MultiTaskModel<F: Scalar> {
    pub config: ModelConfig,
    pub embedding: Embedding<F>,
    pub ib_stack: LstmStack<F>,
    pub intent_stack: LstmStack<F>,
    pub ib_head: Dense<F>,
    pub intent_head: Dense<F>,
    /// Single-layer encoder over previous turns; present for the context variant.
    pub context_stack: Option<LstmStack<F>>,
}

impl<F: Scalar> MultiTaskModel<F> {
    pub fn new(config: &ModelConfig, with_context: bool, rng: &mut ChaCha8Rng) -> Self {
        let c = config.clone();
        MultiTaskModel {
            embedding: Embedding::new("embedding", c.vocab_size, c.embed_dim, rng),
            ib_stack: LstmStack::new("ib_lstm", c.embed_dim, c.hidden_dim, c.num_layers, rng),
            intent_stack: LstmStack::new("intent_lstm", c.embed_dim, c.hidden_dim, c.num_layers, rng),
            ib_head: Dense::new("ib_head", c.hidden_dim, 1, Activation::Sigmoid, rng),
            intent_head: Dense::new("intent_head", c.hidden_dim, c.head_outputs(), Activation::Softmax, rng),
            context_stack: with_context
                .then(|| LstmStack::new("context_lstm", c.embed_dim, c.hidden_dim, 1, rng)),
            config: c,
        }
    }

    pub fn seeded(config: &ModelConfig, with_context: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::new(config, with_context, &mut rng)
    }

    fn guard_id(&self, token_id: usize) -> usize {
        if token_id < self.config.vocab_size {
            token_id
        } else {
            Vocabulary::UNK_ID
        }
    }

    pub fn zero_states(&self) -> TaskStates<F> {
        TaskStates { ib: self.ib_stack.zero_state(), intent: self.intent_stack.zero_state() }
    }

    /// Encodes the previous turns' concatenated token ids through the context
    /// LSTM; its final state initializes every layer of both task stacks.
    /// Without a context encoder (or with no context) this is the zero state.
    pub fn encode_context(&self, context_ids: &[usize]) -> Result<TaskStates<F>> {
        let Some(ctx) = &self.context_stack else {
            return Ok(self.zero_states());
        };
        if context_ids.is_empty() {
            return Ok(self.zero_states());
        }
        let xs = context_ids
            .iter()
            .map(|&id| self.embedding.forward(self.guard_id(id)))
            .collect::<Result<Vec<_>>>()?;
        let run = ctx.forward(&xs, None, None);
        let last = run.layer_caches[0].last().expect("non-empty context run");
        let state = LayerState { h: last.h.clone(), c: last.c.clone() };
        let per_stack: RecurrentState<F> = (0..self.config.num_layers).map(|_| state.clone()).collect();
        Ok(TaskStates { ib: per_stack.clone(), intent: per_stack })
    }

    /// Advance only the boundary-task LSTM (strict replay mode).
    pub fn ib_step(&self, token_id: usize, state: &RecurrentState<F>) -> Result<(F, RecurrentState<F>)> {
        let x = self.embedding.forward(self.guard_id(token_id))?;
        let (h, next) = self.ib_stack.step_eval(&x, state);
        let p = self.ib_head.forward(&h).output[0];
        Ok((p, next))
    }

    /// Advance only the intent-task LSTM (strict replay mode).
    pub fn intent_step(
        &self,
        token_id: usize,
        state: &RecurrentState<F>,
    ) -> Result<(Vec<F>, RecurrentState<F>)> {
        let x = self.embedding.forward(self.guard_id(token_id))?;
        let (h, next) = self.intent_stack.step_eval(&x, state);
        let dist = self.intent_head.forward(&h).output;
        Ok((dist, next))
    }

    /// One streaming step: both task LSTMs advance, both heads evaluate.
    /// Unknown token ids map to UNK rather than erroring.
    pub fn stream_step(
        &self,
        token_id: usize,
        states: &TaskStates<F>,
    ) -> Result<(StepOutput<F>, TaskStates<F>)> {
        let (ib_prob, ib_next) = self.ib_step(token_id, &states.ib)?;
        let (intent_dist, intent_next) = self.intent_step(token_id, &states.intent)?;
        Ok((StepOutput { ib_prob, intent_dist }, TaskStates { ib: ib_next, intent: intent_next }))
    }

    /// Full-sequence eval pass, implemented as the streaming step loop so the
    /// two are bitwise identical by construction.
    pub fn forward_eval(
        &self,
        ids: &[usize],
        init: &TaskStates<F>,
    ) -> Result<(Vec<F>, Vec<Vec<F>>)> {
        let mut states = init.clone();
        let mut ib_probs = Vec::with_capacity(ids.len());
        let mut dists = Vec::with_capacity(ids.len());
        for &id in ids {
            let (out, next) = self.stream_step(id, &states)?;
            ib_probs.push(out.ib_prob);
            dists.push(out.intent_dist);
            states = next;
        }
        Ok((ib_probs, dists))
    }

    /// Forward + backward for one training sequence. Gradients accumulate
    /// into the parameters scaled by `grad_scale` (1/batch for averaging).
    /// `rng` enables dropout; pass `None` for deterministic passes
    /// (gradient checking). Returns (ib loss, intent loss, training loss).
    pub fn train_example(
        &mut self,
        ids: &[usize],
        context_ids: &[usize],
        ib_tags: &[bool],
        intent_tags: &[IntentTag],
        variant: Variant,
        mut rng: Option<&mut ChaCha8Rng>,
        grad_scale: f64,
    ) -> Result<(f64, f64, f64)> {
        if ids.is_empty() {
            return Err(Error::Validation("cannot train on an empty sequence".into()));
        }
        let t_len = ids.len();
        let cfg = self.config.clone();
        let rate = cfg.dropout;
        let train_ib = !matches!(variant, Variant::IntentOnly);

        let xs = ids
            .iter()
            .map(|&id| self.embedding.forward(self.guard_id(id)))
            .collect::<Result<Vec<_>>>()?;

        // Context encoder: final state of the single context layer becomes
        // the initial state of every task-stack layer.
        let mut ctx_run: Option<(StackRun<F>, Vec<usize>)> = None;
        let mut init: Option<RecurrentState<F>> = None;
        if let Some(ctx) = &self.context_stack {
            if !context_ids.is_empty() {
                let guarded: Vec<usize> = context_ids.iter().map(|&id| self.guard_id(id)).collect();
                let ctx_xs = guarded
                    .iter()
                    .map(|&id| self.embedding.forward(id))
                    .collect::<Result<Vec<_>>>()?;
                let run = ctx.forward(&ctx_xs, None, None);
                let last = run.layer_caches[0].last().expect("non-empty context");
                let state = LayerState { h: last.h.clone(), c: last.c.clone() };
                init = Some((0..cfg.num_layers).map(|_| state.clone()).collect());
                ctx_run = Some((run, guarded));
            }
        }

        let dropout_on = rng.is_some() && rate > 0.0;

        // Forward through both task stacks, with per-head pre-dense dropout.
        let ib_fwd = train_ib.then(|| {
            let run = self.ib_stack.forward(
                &xs,
                init.as_ref(),
                if dropout_on { rng.as_deref_mut().map(|r| (rate, r)) } else { None },
            );
            let mut masks: Vec<Vec<F>> = Vec::with_capacity(t_len);
            let mut caches: Vec<DenseCache<F>> = Vec::with_capacity(t_len);
            let mut probs: Vec<F> = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mut h = run.outputs[t].clone();
                if dropout_on {
                    let mask = dropout_mask::<F>(h.len(), rate, rng.as_deref_mut().unwrap());
                    for (v, m) in h.iter_mut().zip(mask.iter()) {
                        *v = *v * *m;
                    }
                    masks.push(mask);
                }
                let cache = self.ib_head.forward(&h);
                probs.push(cache.output[0]);
                caches.push(cache);
            }
            (run, masks, caches, probs)
        });

        let int_run = self.intent_stack.forward(
            &xs,
            init.as_ref(),
            if dropout_on { rng.as_deref_mut().map(|r| (rate, r)) } else { None },
        );
        let mut int_masks: Vec<Vec<F>> = Vec::with_capacity(t_len);
        let mut int_caches: Vec<DenseCache<F>> = Vec::with_capacity(t_len);
        let mut dists: Vec<Vec<F>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut h = int_run.outputs[t].clone();
            if dropout_on {
                let mask = dropout_mask::<F>(h.len(), rate, rng.as_deref_mut().unwrap());
                for (v, m) in h.iter_mut().zip(mask.iter()) {
                    *v = *v * *m;
                }
                int_masks.push(mask);
            }
            let cache = self.intent_head.forward(&h);
            dists.push(cache.output.clone());
            int_caches.push(cache);
        }

        // Losses and gradient seeds.
        let (loss_ib, loss_int, loss, ib_grad, int_grad) = match variant {
            Variant::IntentOnly => {
                let (l, g) = unmasked_intent_loss(&dists, intent_tags)?;
                (0.0, l, l, Vec::new(), g)
            }
            _ => {
                let probs = &ib_fwd.as_ref().expect("ib path runs for multitask variants").3;
                let valid = vec![true; t_len];
                let (l_ib, g_ib) = focal_loss(probs, ib_tags, &valid, &cfg.focal())?;
                let (l_int, g_int) = masked_intent_loss(&dists, intent_tags, ib_tags)?;
                let loss = combined_loss(l_ib, l_int, &cfg.weights());
                (l_ib, l_int, loss, g_ib, g_int)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss}")));
        }

        // Backward. Gradients into the embedding inputs accumulate across
        // both task paths (shared embedding).
        let mut d_embed: Vec<Vec<F>> = vec![vec![F::zero(); cfg.embed_dim]; t_len];
        let mut d_init_sum: Option<LayerState<F>> = init.as_ref().map(|_| LayerState {
            h: vec![F::zero(); cfg.hidden_dim],
            c: vec![F::zero(); cfg.hidden_dim],
        });

        let ib_weight = F::from_f64(cfg.beta * grad_scale);
        let int_weight = F::from_f64(
            if matches!(variant, Variant::IntentOnly) { grad_scale } else { (1.0 - cfg.beta) * grad_scale },
        );

        if let Some((run, masks, caches, _)) = &ib_fwd {
            let mut d_top: Vec<Vec<F>> = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let d_out = vec![ib_grad[t] * ib_weight];
                let mut dh = self.ib_head.backward(&caches[t], &d_out);
                if dropout_on {
                    for (v, m) in dh.iter_mut().zip(masks[t].iter()) {
                        *v = *v * *m;
                    }
                }
                d_top.push(dh);
            }
            let (d_xs, d_init) = self.ib_stack.backward(run, &d_top, None);
            for t in 0..t_len {
                for (a, b) in d_embed[t].iter_mut().zip(d_xs[t].iter()) {
                    *a = *a + *b;
                }
            }
            if let Some(sum) = &mut d_init_sum {
                for layer in &d_init {
                    for k in 0..cfg.hidden_dim {
                        sum.h[k] = sum.h[k] + layer.h[k];
                        sum.c[k] = sum.c[k] + layer.c[k];
                    }
                }
            }
        }

        {
            let mut d_top: Vec<Vec<F>> = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let d_out: Vec<F> = int_grad[t].iter().map(|&g| g * int_weight).collect();
                let mut dh = self.intent_head.backward(&int_caches[t], &d_out);
                if dropout_on {
                    for (v, m) in dh.iter_mut().zip(int_masks[t].iter()) {
                        *v = *v * *m;
                    }
                }
                d_top.push(dh);
            }
            let (d_xs, d_init) = self.intent_stack.backward(&int_run, &d_top, None);
            for t in 0..t_len {
                for (a, b) in d_embed[t].iter_mut().zip(d_xs[t].iter()) {
                    *a = *a + *b;
                }
            }
            if let Some(sum) = &mut d_init_sum {
                for layer in &d_init {
                    for k in 0..cfg.hidden_dim {
                        sum.h[k] = sum.h[k] + layer.h[k];
                        sum.c[k] = sum.c[k] + layer.c[k];
                    }
                }
            }
        }

        for (t, &id) in ids.iter().enumerate() {
            self.embedding.backward(self.guard_id(id), &d_embed[t]);
        }

        if let (Some((run, guarded)), Some(d_final)) = (&ctx_run, d_init_sum) {
            let ctx = self.context_stack.as_mut().expect("context stack present");
            let zeros = vec![vec![F::zero(); cfg.hidden_dim]; run.outputs.len()];
            let (d_ctx_xs, _) = ctx.backward(run, &zeros, Some(&vec![d_final]));
            for (i, &id) in guarded.iter().enumerate() {
                self.embedding.backward(id, &d_ctx_xs[i]);
            }
        }

        Ok((loss_ib, loss_int, loss))
    }

    /// Parameters the optimizer may update for a variant. The intent-only
    /// variant leaves the boundary stack and head at initialization.
    pub fn trainable_params_mut(&mut self, variant: Variant) -> Vec<&mut Parameter<F>> {
        match variant {
            Variant::IntentOnly => {
                let mut v = vec![&mut self.embedding.table];
                v.extend(self.intent_stack.params_mut());
                v.extend(self.intent_head.params_mut());
                if let Some(ctx) = &mut self.context_stack {
                    v.extend(ctx.params_mut());
                }
                v
            }
            _ => self.params_mut(),
        }
    }
}

impl<F: Scalar> Parameterized<F> for MultiTaskModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = vec![&self.embedding.table];
        v.extend(self.ib_stack.params());
        v.extend(self.intent_stack.params());
        v.extend(self.ib_head.params());
        v.extend(self.intent_head.params());
        if let Some(ctx) = &self.context_stack {
            v.extend(ctx.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = vec![&mut self.embedding.table];
        v.extend(self.ib_stack.params_mut());
        v.extend(self.intent_stack.params_mut());
        v.extend(self.ib_head.params_mut());
        v.extend(self.intent_head.params_mut());
        if let Some(ctx) = &mut self.context_stack {
            v.extend(ctx.params_mut());
        }
        v
    }
}

/// Turn-level classifier: bidirectional LSTM over the whole turn, softmax
/// over C+1 classes (the extra output is "no intent") read from the
/// final-position bidirectional representation.
#[derive(Debug, Clone)]
pub struct OfflineModel<F: Scalar> {
    pub config: ModelConfig,
    pub embedding: Embedding<F>,
    pub fwd_stack: LstmStack<F>,
    pub bwd_stack: LstmStack<F>,
    pub head: Dense<F>,
}

impl<F: Scalar> OfflineModel<F> {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = config.clone();
        OfflineModel {
            embedding: Embedding::new("embedding", c.vocab_size, c.embed_dim, rng),
            fwd_stack: LstmStack::new("fwd_lstm", c.embed_dim, c.hidden_dim, c.num_layers, rng),
            bwd_stack: LstmStack::new("bwd_lstm", c.embed_dim, c.hidden_dim, c.num_layers, rng),
            head: Dense::new("offline_head", 2 * c.hidden_dim, c.head_outputs(), Activation::Softmax, rng),
            config: c,
        }
    }

    pub fn seeded(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::new(config, &mut rng)
    }

    fn guard_id(&self, token_id: usize) -> usize {
        if token_id < self.config.vocab_size {
            token_id
        } else {
            Vocabulary::UNK_ID
        }
    }

    fn embed(&self, ids: &[usize]) -> Result<Vec<Vec<F>>> {
        ids.iter().map(|&id| self.embedding.forward(self.guard_id(id))).collect()
    }

    /// Class distribution for a complete turn. Prediction is the argmax with
    /// lowest-index tie-breaking.
    pub fn forward_eval(&self, ids: &[usize]) -> Result<Vec<F>> {
        if ids.is_empty() {
            return Err(Error::Validation("offline model needs a non-empty turn".into()));
        }
        let xs = self.embed(ids)?;
        let rev: Vec<Vec<F>> = xs.iter().rev().cloned().collect();
        let fwd = self.fwd_stack.forward(&xs, None, None);
        let bwd = self.bwd_stack.forward(&rev, None, None);
        let mut rep = fwd.outputs.last().unwrap().clone();
        rep.extend_from_slice(bwd.outputs.last().unwrap());
        Ok(self.head.forward(&rep).output)
    }

    /// Cross-entropy training step on one turn; `class_idx` may be the
    /// no-intent index. Returns the loss.
    pub fn train_example(
        &mut self,
        ids: &[usize],
        class_idx: usize,
        mut rng: Option<&mut ChaCha8Rng>,
        grad_scale: f64,
    ) -> Result<f64> {
        if ids.is_empty() {
            return Err(Error::Validation("offline model needs a non-empty turn".into()));
        }
        let rate = self.config.dropout;
        let dropout_on = rng.is_some() && rate > 0.0;
        let t_len = ids.len();
        let xs = self.embed(ids)?;
        let rev: Vec<Vec<F>> = xs.iter().rev().cloned().collect();
        let fwd = self.fwd_stack.forward(
            &xs,
            None,
            if dropout_on { rng.as_deref_mut().map(|r| (rate, r)) } else { None },
        );
        let bwd = self.bwd_stack.forward(
            &rev,
            None,
            if dropout_on { rng.as_deref_mut().map(|r| (rate, r)) } else { None },
        );
        let mut rep = fwd.outputs.last().unwrap().clone();
        rep.extend_from_slice(bwd.outputs.last().unwrap());
        let mask = if dropout_on {
            Some(dropout_mask::<F>(rep.len(), rate, rng.as_deref_mut().unwrap()))
        } else {
            None
        };
        if let Some(m) = &mask {
            for (v, mv) in rep.iter_mut().zip(m.iter()) {
                *v = *v * *mv;
            }
        }
        let cache = self.head.forward(&rep);
        let (loss, grads) =
            masked_intent_loss(&[cache.output.clone()], &[IntentTag::Class(class_idx)], &[true])?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss}")));
        }
        let scale = F::from_f64(grad_scale);
        let d_out: Vec<F> = grads[0].iter().map(|&g| g * scale).collect();
        let mut d_rep = self.head.backward(&cache, &d_out);
        if let Some(m) = &mask {
            for (v, mv) in d_rep.iter_mut().zip(m.iter()) {
                *v = *v * *mv;
            }
        }
        let hidden = self.config.hidden_dim;
        let mut d_fwd_top = vec![vec![F::zero(); hidden]; t_len];
        let mut d_bwd_top = vec![vec![F::zero(); hidden]; t_len];
        d_fwd_top[t_len - 1] = d_rep[..hidden].to_vec();
        d_bwd_top[t_len - 1] = d_rep[hidden..].to_vec();
        let (d_xs_fwd, _) = self.fwd_stack.backward(&fwd, &d_fwd_top, None);
        let (d_xs_bwd, _) = self.bwd_stack.backward(&bwd, &d_bwd_top, None);
        for (t, &id) in ids.iter().enumerate() {
            let mut d = d_xs_fwd[t].clone();
            // Backward stack consumed the reversed sequence.
            for (a, b) in d.iter_mut().zip(d_xs_bwd[t_len - 1 - t].iter()) {
                *a = *a + *b;
            }
            self.embedding.backward(self.guard_id(id), &d);
        }
        Ok(loss)
    }
}

impl<F: Scalar> Parameterized<F> for OfflineModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        let mut v = vec![&self.embedding.table];
        v.extend(self.fwd_stack.params());
        v.extend(self.bwd_stack.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut v = vec![&mut self.embedding.table];
        v.extend(self.fwd_stack.params_mut());
        v.extend(self.bwd_stack.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

/// A loaded or trained model of either architecture.
#[derive(Debug, Clone)]
pub enum TrainedModel<F: Scalar> {
    MultiTask(MultiTaskModel<F>),
    Offline(OfflineModel<F>),
}

impl<F: Scalar> TrainedModel<F> {
    pub fn config(&self) -> &ModelConfig {
        match self {
            TrainedModel::MultiTask(m) => &m.config,
            TrainedModel::Offline(m) => &m.config,
        }
    }

    pub fn as_multitask(&self) -> Option<&MultiTaskModel<F>> {
        match self {
            TrainedModel::MultiTask(m) => Some(m),
            TrainedModel::Offline(_) => None,
        }
    }
}

impl<F: Scalar> Parameterized<F> for TrainedModel<F> {
    fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            TrainedModel::MultiTask(m) => m.params(),
            TrainedModel::Offline(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            TrainedModel::MultiTask(m) => m.params_mut(),
            TrainedModel::Offline(m) => m.params_mut(),
        }
    }
}
