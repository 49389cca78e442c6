//! Training loop for every model variant, plus the shared sequence
//! prediction helpers used by validation, offline evaluation, and threshold
//! tuning.

use super::{
    argmax, argmax_class, ModelConfig, MultiTaskModel, OfflineModel, TrainedModel, Variant,
    CONTEXT_TOKEN_CAP,
};
use crate::corpus::{
    apply_lookahead, build_vocabulary, label_sequence, DatasetSplits, IntentTag, PadPolicy,
    Transcript, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{intent_at_predicted_boundary, intent_prf_unmasked, Average};
use crate::numkernel::Parameterized;
use crate::objective::{AdamConfig, AdamState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One training sequence for the streaming variants: the annotated turn's
/// (possibly lookahead-shifted) labels plus the context window token ids.
#[derive(Debug, Clone)]
pub struct MtExample {
    pub ids: Vec<usize>,
    pub ib: Vec<bool>,
    pub intents: Vec<IntentTag>,
    pub ctx: Vec<usize>,
    pub boundary: Option<(usize, usize)>,
}

/// One training turn for the offline classifier; `class_idx` may be the
/// no-intent index for unannotated customer turns.
#[derive(Debug, Clone)]
pub struct TurnExample {
    pub ids: Vec<usize>,
    pub class_idx: usize,
}

/// Builds streaming training sequences from the annotated turns. Lookahead
/// pad tokens draw from `rng` (the data seed's stream).
pub fn build_mt_examples(
    transcripts: &[Transcript],
    vocab: &Vocabulary,
    lookahead_k: usize,
    context_turns: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MtExample>> {
    if lookahead_k > 0 && vocab.size() <= 2 {
        return Err(Error::Validation("vocabulary has no regular words to draw lookahead pads from".into()));
    }
    let mut out = Vec::new();
    for tr in transcripts {
        let Some(ann) = &tr.annotation else { continue };
        let turn = &tr.turns[ann.turn_index];
        let seq = label_sequence(turn, Some(ann), vocab, (tr.id.clone(), ann.turn_index))?;
        let seq = apply_lookahead(&seq, lookahead_k, PadPolicy::RandomVocabToken, vocab, rng);
        let ctx = if context_turns > 0 {
            let first = ann.turn_index.saturating_sub(context_turns);
            let mut ids: Vec<usize> = tr.turns[first..ann.turn_index]
                .iter()
                .flat_map(|t| t.words().map(|w| vocab.id(w)))
                .collect();
            if ids.len() > CONTEXT_TOKEN_CAP {
                ids.drain(..ids.len() - CONTEXT_TOKEN_CAP);
            }
            ids
        } else {
            Vec::new()
        };
        let boundary = seq.boundary();
        out.push(MtExample { ids: seq.token_ids, ib: seq.ib_tags, intents: seq.intent_tags, ctx, boundary });
    }
    Ok(out)
}

/// Builds offline training turns: every customer turn, labeled with its
/// intent class or with no-intent.
pub fn build_turn_examples(
    transcripts: &[Transcript],
    vocab: &Vocabulary,
    o_index: usize,
) -> Vec<TurnExample> {
    let mut out = Vec::new();
    for tr in transcripts {
        for (ti, turn) in tr.turns.iter().enumerate() {
            if turn.speaker != crate::corpus::Speaker::Customer {
                continue;
            }
            let class_idx = match &tr.annotation {
                Some(ann) if ann.turn_index == ti => ann.class_id,
                _ => o_index,
            };
            out.push(TurnExample { ids: turn.words().map(|w| vocab.id(w)).collect(), class_idx });
        }
    }
    out
}

/// Eval-mode outputs for one sequence.
#[derive(Debug, Clone)]
pub struct SeqPrediction {
    pub ib_probs: Vec<f64>,
    /// Per-step intent argmax over the C classes (no-intent excluded).
    pub class_argmax: Vec<usize>,
    /// Per-step argmax over all C+1 outputs (no-intent included).
    pub full_argmax: Vec<usize>,
    pub boundary: Option<(usize, usize)>,
}

pub fn predict_sequences(
    model: &MultiTaskModel<f32>,
    examples: &[MtExample],
) -> Result<Vec<SeqPrediction>> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let init = model.encode_context(&ex.ctx)?;
        let (probs, dists) = model.forward_eval(&ex.ids, &init)?;
        out.push(SeqPrediction {
            ib_probs: probs.iter().map(|p| (*p).into()).collect(),
            class_argmax: dists.iter().map(|d| argmax_class(d)).collect(),
            full_argmax: dists.iter().map(|d| argmax(d)).collect(),
            boundary: ex.boundary,
        });
    }
    Ok(out)
}

/// Thresholded boundary predictions and truths as (sequence, token) pairs.
pub fn boundary_positions(
    preds: &[SeqPrediction],
    threshold: f64,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (s, p) in preds.iter().enumerate() {
        for (t, &prob) in p.ib_probs.iter().enumerate() {
            if prob > threshold {
                predicted.push((s, t));
            }
        }
        if let Some((pos, _)) = p.boundary {
            truth.push((s, pos));
        }
    }
    (predicted, truth)
}

/// (sequence, position, class) tuples for intent-at-predicted-boundary.
pub fn pb_tuples(
    preds: &[SeqPrediction],
    threshold: f64,
) -> (Vec<(usize, usize, usize)>, Vec<(usize, usize, usize)>) {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (s, p) in preds.iter().enumerate() {
        for (t, &prob) in p.ib_probs.iter().enumerate() {
            if prob > threshold {
                predicted.push((s, t, p.class_argmax[t]));
            }
        }
        if let Some((pos, class)) = p.boundary {
            truth.push((s, pos, class));
        }
    }
    (predicted, truth)
}

/// Per-sequence (prediction, truth) class pairs at the oracle boundary.
pub fn ob_pairs(preds: &[SeqPrediction]) -> (Vec<usize>, Vec<usize>) {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for p in preds {
        if let Some((pos, class)) = p.boundary {
            predicted.push(p.class_argmax[pos]);
            truth.push(class);
        }
    }
    (predicted, truth)
}

/// Per-token (prediction, truth) pairs for the no-boundary variant, with the
/// no-intent tag mapped to `o_index`.
pub fn token_pairs(
    preds: &[SeqPrediction],
    examples: &[MtExample],
    o_index: usize,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (p, ex) in preds.iter().zip(examples.iter()) {
        for (t, tag) in ex.intents.iter().enumerate() {
            let truth = match tag {
                IntentTag::Class(c) => *c,
                IntentTag::O => o_index,
            };
            out.push((p.full_argmax[t], truth));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub variant: Variant,
    pub min_count: usize,
    pub data_seed: u64,
}

/// One `epoch,split,metric,value` log row.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub struct TrainResult {
    /// Best-validation checkpoint.
    pub model: TrainedModel<f32>,
    /// State after the final epoch (overfit checks, resumption).
    pub final_model: TrainedModel<f32>,
    pub vocab: Vocabulary,
    pub classes: Vec<String>,
    pub config: ModelConfig,
    pub variant: Variant,
    pub log: Vec<LogRow>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

fn effective_config(
    config: &ModelConfig,
    variant: Variant,
    vocab_size: usize,
    num_classes: usize,
) -> ModelConfig {
    let mut c = config.clone();
    c.vocab_size = vocab_size;
    c.num_classes = num_classes;
    c.lookahead_k = match variant {
        Variant::MultiTaskLookahead => c.lookahead_k.max(1),
        Variant::Offline => 0,
        _ => c.lookahead_k,
    };
    c.context_turns = if variant.uses_context() {
        if c.context_turns == 0 {
            3
        } else {
            c.context_turns
        }
    } else {
        0
    };
    c
}

/// Trains the selected variant: vocabulary from the training split only,
/// epoch-shuffled minibatches with gradient averaging, Adam updates, one
/// validation metric per epoch, best-validation checkpoint retained.
pub fn train(
    splits: &DatasetSplits,
    config: &ModelConfig,
    opts: &TrainOptions,
    classes: &[String],
) -> Result<TrainResult> {
    config.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::Validation("train and validation splits must be non-empty".into()));
    }
    let vocab = build_vocabulary(&splits.train, opts.min_count)?;
    let cfg = effective_config(config, opts.variant, vocab.size(), classes.len());
    let mut data_rng = ChaCha8Rng::seed_from_u64(opts.data_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log: Vec<LogRow> = Vec::new();

    match opts.variant {
        Variant::Offline => {
            let train_ex = build_turn_examples(&splits.train, &vocab, cfg.o_index());
            let val_ex = build_turn_examples(&splits.validation, &vocab, cfg.o_index());
            let mut model = OfflineModel::<f32>::new(&cfg, &mut rng);
            let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
            let mut best: Option<(f64, usize, OfflineModel<f32>)> = None;
            let mut order: Vec<usize> = (0..train_ex.len()).collect();
            for epoch in 1..=cfg.epochs {
                order.shuffle(&mut rng);
                let mut loss_sum = 0.0;
                for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                    let scale = 1.0 / batch.len() as f64;
                    for &i in batch {
                        let ex = &train_ex[i];
                        let loss = model
                            .train_example(&ex.ids, ex.class_idx, Some(&mut rng), scale)
                            .map_err(|e| training_error(e, epoch, bi))?;
                        loss_sum += loss;
                    }
                    adam.step(&mut model.params_mut()).map_err(|e| training_error(e, epoch, bi))?;
                }
                let train_loss = loss_sum / train_ex.len() as f64;
                let mut correct = 0usize;
                for ex in &val_ex {
                    let dist = model.forward_eval(&ex.ids)?;
                    if argmax(&dist) == ex.class_idx {
                        correct += 1;
                    }
                }
                let acc = correct as f64 / val_ex.len().max(1) as f64;
                log.push(LogRow { epoch, split: "train".into(), metric: "loss".into(), value: train_loss });
                log.push(LogRow { epoch, split: "val".into(), metric: "turn_accuracy".into(), value: acc });
                if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                    best = Some((acc, epoch, model.clone()));
                }
            }
            let (best_metric, best_epoch, best_model) = best.expect("at least one epoch ran");
            Ok(TrainResult {
                model: TrainedModel::Offline(best_model),
                final_model: TrainedModel::Offline(model),
                vocab,
                classes: classes.to_vec(),
                config: cfg,
                variant: opts.variant,
                log,
                best_epoch,
                best_metric,
            })
        }
        variant => {
            let train_ex =
                build_mt_examples(&splits.train, &vocab, cfg.lookahead_k, cfg.context_turns, &mut data_rng)?;
            let val_ex = build_mt_examples(
                &splits.validation,
                &vocab,
                cfg.lookahead_k,
                cfg.context_turns,
                &mut data_rng,
            )?;
            if train_ex.is_empty() || val_ex.is_empty() {
                return Err(Error::Validation("no annotated turns to train on".into()));
            }
            let mut model = MultiTaskModel::<f32>::new(&cfg, variant.uses_context(), &mut rng);
            let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
            let mut best: Option<(f64, usize, MultiTaskModel<f32>)> = None;
            let mut order: Vec<usize> = (0..train_ex.len()).collect();
            let metric_name = match variant {
                Variant::IntentOnly => "intent_token_f1",
                _ => "intent_pb_f1",
            };
            for epoch in 1..=cfg.epochs {
                order.shuffle(&mut rng);
                let mut loss_sum = 0.0;
                for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                    let scale = 1.0 / batch.len() as f64;
                    for &i in batch {
                        let ex = &train_ex[i];
                        let (_, _, loss) = model
                            .train_example(&ex.ids, &ex.ctx, &ex.ib, &ex.intents, variant, Some(&mut rng), scale)
                            .map_err(|e| training_error(e, epoch, bi))?;
                        loss_sum += loss;
                    }
                    adam.step(&mut model.trainable_params_mut(variant))
                        .map_err(|e| training_error(e, epoch, bi))?;
                }
                let train_loss = loss_sum / train_ex.len() as f64;
                let preds = predict_sequences(&model, &val_ex)?;
                let metric = match variant {
                    Variant::IntentOnly => {
                        let pairs = token_pairs(&preds, &val_ex, cfg.o_index());
                        intent_prf_unmasked(&pairs, cfg.num_classes, Average::Macro).f1
                    }
                    _ => {
                        let (p, t) = pb_tuples(&preds, cfg.ib_threshold);
                        intent_at_predicted_boundary(&p, &t, cfg.num_classes, Average::Macro, 0).f1
                    }
                };
                log.push(LogRow { epoch, split: "train".into(), metric: "loss".into(), value: train_loss });
                log.push(LogRow { epoch, split: "val".into(), metric: metric_name.into(), value: metric });
                if best.as_ref().map_or(true, |(b, _, _)| metric > *b) {
                    best = Some((metric, epoch, model.clone()));
                }
            }
            let (best_metric, best_epoch, best_model) = best.expect("at least one epoch ran");
            Ok(TrainResult {
                model: TrainedModel::MultiTask(best_model),
                final_model: TrainedModel::MultiTask(model),
                vocab,
                classes: classes.to_vec(),
                config: cfg,
                variant,
                log,
                best_epoch,
                best_metric,
            })
        }
    }
}

fn training_error(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// Writes the training log as `epoch,split,metric,value` CSV.
pub fn write_log_csv(log: &[LogRow], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "epoch,split,metric,value").map_err(|e| Error::io(path, e))?;
    for row in log {
        writeln!(f, "{},{},{},{}", row.epoch, row.split, row.metric, row.value)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
