//! Real-time inference engine and conversation replay harness: per-turn
//! state reset, word-at-a-time stepping, thresholded boundary firing,
//! end-of-turn lookahead padding, and first-intent stopping.

use crate::corpus::{Speaker, Transcript, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{argmax, argmax_class, ModelConfig, TaskStates, TrainedModel, Variant, CONTEXT_TOKEN_CAP};
use crate::numkernel::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// What makes a session emit a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiringRule {
    /// Boundary-head probability above the threshold (multi-task variants).
    IbThreshold,
    /// Intent head argmax is a class (not no-intent) whose probability
    /// clears the decision threshold (the no-boundary variant).
    IntentArgmax,
    /// Classify each completed turn; fire on the first non-no-intent argmax.
    TurnEnd,
}

impl FiringRule {
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Offline => FiringRule::TurnEnd,
            Variant::IntentOnly => FiringRule::IntentArgmax,
            _ => FiringRule::IbThreshold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub ib_threshold: f64,
    pub lookahead_k: usize,
    pub context_turns: usize,
    pub firing: FiringRule,
    /// Literal pseudo-code semantics: the intent LSTM advances only when the
    /// boundary fires, instead of on every token.
    pub strict_algorithm1: bool,
    pub eval_seed: u64,
}

impl SessionOptions {
    pub fn for_variant(variant: Variant, config: &ModelConfig, eval_seed: u64, strict: bool) -> Self {
        SessionOptions {
            ib_threshold: config.ib_threshold,
            lookahead_k: if variant == Variant::Offline { 0 } else { config.lookahead_k },
            context_turns: if variant.uses_context() { config.context_turns } else { 0 },
            firing: FiringRule::for_variant(variant),
            strict_algorithm1: strict,
            eval_seed,
        }
    }
}

/// A fired intent prediction. `token_index` is the reported boundary
/// position: the raw fire position minus the lookahead, floored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub class_id: usize,
    pub score: f64,
    pub turn_index: usize,
    pub token_index: usize,
    pub raw_token_index: usize,
    /// Customer words from conversation start up to the reported position.
    pub global_word_pos: usize,
}

/// One conversation's streaming state. States reset at every turn start;
/// after the first fired decision the conversation is over and further
/// pushes are counted but ignored.
pub struct StreamSession<'m> {
    model: &'m TrainedModel<f32>,
    vocab: &'m Vocabulary,
    opts: SessionOptions,
    states: TaskStates<f32>,
    turn_index: usize,
    started: bool,
    in_customer: bool,
    turn_ids: Vec<usize>,
    pos_in_turn: usize,
    customer_words_total: usize,
    words_before_turn: usize,
    context: VecDeque<Vec<usize>>,
    fired: Option<Decision>,
    ignored_pushes: usize,
    pad_rng: ChaCha8Rng,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m TrainedModel<f32>, vocab: &'m Vocabulary, opts: SessionOptions) -> Self {
        let states = match model {
            TrainedModel::MultiTask(m) => m.zero_states(),
            TrainedModel::Offline(_) => TaskStates { ib: Vec::new(), intent: Vec::new() },
        };
        let pad_rng = ChaCha8Rng::seed_from_u64(opts.eval_seed);
        StreamSession {
            model,
            vocab,
            opts,
            states,
            turn_index: 0,
            started: false,
            in_customer: false,
            turn_ids: Vec::new(),
            pos_in_turn: 0,
            customer_words_total: 0,
            words_before_turn: 0,
            context: VecDeque::new(),
            fired: None,
            ignored_pushes: 0,
            pad_rng,
        }
    }

    pub fn decision(&self) -> Option<&Decision> {
        self.fired.as_ref()
    }

    pub fn ignored_pushes(&self) -> usize {
        self.ignored_pushes
    }

    pub fn current_states(&self) -> &TaskStates<f32> {
        &self.states
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    /// Flattened context ids (previous turns, both speakers, chronological),
    /// capped at [`CONTEXT_TOKEN_CAP`] keeping the most recent tokens.
    pub fn context_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.context.iter().flatten().copied().collect();
        if ids.len() > CONTEXT_TOKEN_CAP {
            ids.drain(..ids.len() - CONTEXT_TOKEN_CAP);
        }
        ids
    }

    /// Starts a turn: task states reset to zero (or to the context encoding
    /// for the context variant); agent turns are buffered but never stepped.
    pub fn begin_turn(&mut self, speaker: Speaker) -> Result<()> {
        if self.started {
            self.turn_index += 1;
        }
        self.started = true;
        self.turn_ids.clear();
        self.pos_in_turn = 0;
        self.in_customer = speaker == Speaker::Customer;
        self.words_before_turn = self.customer_words_total;
        if let TrainedModel::MultiTask(m) = self.model {
            self.states = if self.opts.context_turns > 0 {
                m.encode_context(&self.context_ids())?
            } else {
                m.zero_states()
            };
        }
        Ok(())
    }

    /// Feeds one word. Inside a customer turn this advances the model and
    /// may fire; agent words are only buffered for context. Words arriving
    /// after the conversation fired are ignored and counted.
    pub fn push_word(&mut self, word: &str) -> Result<Option<Decision>> {
        if self.fired.is_some() {
            self.ignored_pushes += 1;
            return Ok(None);
        }
        let id = self.vocab.id(word);
        self.turn_ids.push(id);
        if !self.in_customer {
            return Ok(None);
        }
        self.customer_words_total += 1;
        self.step_customer_token(id)
    }

    fn step_customer_token(&mut self, id: usize) -> Result<Option<Decision>> {
        let raw = self.pos_in_turn;
        self.pos_in_turn += 1;
        let TrainedModel::MultiTask(m) = self.model else {
            return Ok(None); // offline decides at turn end
        };
        let fired = match self.opts.firing {
            FiringRule::IbThreshold => {
                if self.opts.strict_algorithm1 {
                    let (p, ib_next) = m.ib_step(id, &self.states.ib)?;
                    self.states.ib = ib_next;
                    if p.to_f64() > self.opts.ib_threshold {
                        // Literal pseudo-code: the intent LSTM only ever
                        // advances here, on the firing token.
                        let (dist, int_next) = m.intent_step(id, &self.states.intent)?;
                        self.states.intent = int_next;
                        Some((argmax_class(&dist), p.to_f64()))
                    } else {
                        None
                    }
                } else {
                    let (out, next) = m.stream_step(id, &self.states)?;
                    self.states = next;
                    if out.ib_prob.to_f64() > self.opts.ib_threshold {
                        Some((argmax_class(&out.intent_dist), out.ib_prob.to_f64()))
                    } else {
                        None
                    }
                }
            }
            FiringRule::IntentArgmax => {
                let (out, next) = m.stream_step(id, &self.states)?;
                self.states = next;
                let top = argmax(&out.intent_dist);
                let score = out.intent_dist[top].to_f64();
                if top != m.config.o_index() && score > self.opts.ib_threshold {
                    Some((top, score))
                } else {
                    None
                }
            }
            FiringRule::TurnEnd => None,
        };
        Ok(fired.map(|(class_id, score)| {
            let token_index = raw.saturating_sub(self.opts.lookahead_k);
            let d = Decision {
                class_id,
                score,
                turn_index: self.turn_index,
                token_index,
                raw_token_index: raw,
                global_word_pos: self.words_before_turn + token_index,
            };
            self.fired = Some(d.clone());
            d
        }))
    }

    /// Closes the turn. Lookahead models push k random vocabulary tokens so
    /// a turn-final boundary can still fire; the offline model classifies
    /// the completed turn here. The turn then joins the context buffer.
    pub fn end_turn(&mut self) -> Result<Option<Decision>> {
        let mut decision = None;
        if self.in_customer && self.fired.is_none() && !self.turn_ids.is_empty() {
            match self.model {
                TrainedModel::MultiTask(_) => {
                    for _ in 0..self.opts.lookahead_k {
                        let id = self.vocab.random_regular_id(&mut self.pad_rng);
                        if let Some(d) = self.step_customer_token(id)? {
                            decision = Some(d);
                            break;
                        }
                    }
                }
                TrainedModel::Offline(m) => {
                    let dist = m.forward_eval(&self.turn_ids)?;
                    let top = argmax(&dist);
                    if top != m.config.o_index() {
                        let token_index = self.turn_ids.len() - 1;
                        let d = Decision {
                            class_id: top,
                            score: dist[top].to_f64(),
                            turn_index: self.turn_index,
                            token_index,
                            raw_token_index: token_index,
                            global_word_pos: self.words_before_turn + token_index,
                        };
                        self.fired = Some(d.clone());
                        decision = Some(d);
                    }
                }
            }
        }
        if self.opts.context_turns > 0 {
            self.context.push_back(std::mem::take(&mut self.turn_ids));
            while self.context.len() > self.opts.context_turns {
                self.context.pop_front();
            }
        } else {
            self.turn_ids.clear();
        }
        self.in_customer = false;
        Ok(decision)
    }
}

/// One line of the replay decisions JSONL. `pos` / `true_pos` are global
/// customer-word positions from conversation start; unfired records carry
/// nulls in the prediction fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub id: String,
    pub fired: bool,
    pub class: Option<String>,
    pub turn: Option<usize>,
    pub token: Option<usize>,
    pub score: Option<f64>,
    pub pos: Option<usize>,
    pub true_class: String,
    pub true_turn: usize,
    pub true_token: usize,
    pub true_pos: usize,
}

/// Replays annotated conversations in order, word by word, stopping each at
/// its first fired decision. Returns one record per transcript.
pub fn replay(
    transcripts: &[Transcript],
    model: &TrainedModel<f32>,
    vocab: &Vocabulary,
    classes: &[String],
    opts: &SessionOptions,
) -> Result<Vec<DecisionRecord>> {
    let mut records = Vec::with_capacity(transcripts.len());
    for tr in transcripts {
        let ann = tr.annotation.as_ref().ok_or_else(|| {
            Error::Validation(format!("transcript {} has no annotation to score against", tr.id))
        })?;
        let mut session = StreamSession::new(model, vocab, opts.clone());
        let mut decision: Option<Decision> = None;
        'turns: for turn in &tr.turns {
            session.begin_turn(turn.speaker)?;
            for tok in &turn.tokens {
                if let Some(d) = session.push_word(&tok.text)? {
                    decision = Some(d);
                    break 'turns;
                }
            }
            if let Some(d) = session.end_turn()? {
                decision = Some(d);
                break 'turns;
            }
        }
        let true_pos = tr.customer_words_before(ann.turn_index) + ann.boundary_token_index;
        records.push(DecisionRecord {
            id: tr.id.clone(),
            fired: decision.is_some(),
            class: decision.as_ref().map(|d| classes[d.class_id].clone()),
            turn: decision.as_ref().map(|d| d.turn_index),
            token: decision.as_ref().map(|d| d.token_index),
            score: decision.as_ref().map(|d| d.score),
            pos: decision.as_ref().map(|d| d.global_word_pos),
            true_class: classes[ann.class_id].clone(),
            true_turn: ann.turn_index,
            true_token: ann.boundary_token_index,
            true_pos,
        });
    }
    Ok(records)
}

pub fn write_decisions(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("decision record serialization cannot fail");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?,
        );
    }
    Ok(out)
}
