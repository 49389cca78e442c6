//! Transcript data model, JSONL ingestion, vocabulary construction, turn
//! labeling, the lookahead label transform, and dataset splitting.
//!
//! A transcript is a diarized sequence of turns; at most one turn carries an
//! intent annotation marking the last word of the first span from which the
//! caller's intent is identifiable, plus the intent class.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Agent,
    Customer,
}

/// One transcribed word with millisecond time offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

/// A contiguous single-speaker segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<Token>,
}

impl Turn {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

/// The first (and almost always only) intent in a conversation: its class,
/// the turn it occurs in, and the index of the last word of the intent span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntentAnnotation {
    pub class_id: usize,
    pub turn_index: usize,
    pub boundary_token_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub id: String,
    pub turns: Vec<Turn>,
    pub annotation: Option<IntentAnnotation>,
}

impl Transcript {
    /// Checks annotation references and token invariants.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (ti, turn) in self.turns.iter().enumerate() {
            if turn.tokens.is_empty() {
                return Err(Error::Validation(format!("transcript {}: turn {ti} has no tokens", self.id)));
            }
            let mut prev_start = 0u64;
            for tok in &turn.tokens {
                if tok.text.is_empty() {
                    return Err(Error::Validation(format!("transcript {}: empty token text", self.id)));
                }
                if tok.end_ms < tok.start_ms {
                    return Err(Error::Validation(format!(
                        "transcript {}: token '{}' ends before it starts",
                        self.id, tok.text
                    )));
                }
                if tok.start_ms < prev_start {
                    return Err(Error::Validation(format!(
                        "transcript {}: token times not non-decreasing",
                        self.id
                    )));
                }
                prev_start = tok.start_ms;
            }
        }
        if let Some(ann) = &self.annotation {
            if ann.class_id >= num_classes {
                return Err(Error::Validation(format!(
                    "transcript {}: class id {} out of range (C={})",
                    self.id, ann.class_id, num_classes
                )));
            }
            let turn = self.turns.get(ann.turn_index).ok_or_else(|| {
                Error::Validation(format!(
                    "transcript {}: annotation turn {} out of range ({} turns)",
                    self.id,
                    ann.turn_index,
                    self.turns.len()
                ))
            })?;
            if turn.speaker != Speaker::Customer {
                return Err(Error::Validation(format!(
                    "transcript {}: annotation points at an agent turn",
                    self.id
                )));
            }
            if ann.boundary_token_index >= turn.tokens.len() {
                return Err(Error::Validation(format!(
                    "transcript {}: boundary token {} out of range ({} tokens)",
                    self.id,
                    ann.boundary_token_index,
                    turn.tokens.len()
                )));
            }
        }
        Ok(())
    }

    /// Number of customer words strictly before `turn_index`.
    pub fn customer_words_before(&self, turn_index: usize) -> usize {
        self.turns[..turn_index]
            .iter()
            .filter(|t| t.speaker == Speaker::Customer)
            .map(|t| t.tokens.len())
            .sum()
    }
}

// Wire format: one JSON object per line.
// {"id":.., "turns":[{"speaker":"agent","tokens":[{"t":..,"s":..,"e":..}]}], "annotation":{..}|null}

#[derive(Serialize, Deserialize)]
struct TokenWire {
    t: String,
    s: u64,
    e: u64,
}

#[derive(Serialize, Deserialize)]
struct TurnWire {
    speaker: Speaker,
    tokens: Vec<TokenWire>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationWire {
    class: String,
    turn: usize,
    token: usize,
}

#[derive(Serialize, Deserialize)]
struct TranscriptWire {
    id: String,
    turns: Vec<TurnWire>,
    annotation: Option<AnnotationWire>,
}

/// Loads a JSONL transcript file, resolving class names against `classes`.
/// Malformed lines report their line number; invalid annotations report the
/// transcript id.
pub fn load_transcripts(path: &Path, classes: &[String]) -> Result<Vec<Transcript>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let class_index: HashMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: TranscriptWire = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno + 1, msg: e.to_string() })?;
        let annotation = match wire.annotation {
            None => None,
            Some(a) => {
                let class_id = *class_index.get(a.class.as_str()).ok_or_else(|| {
                    Error::Validation(format!("transcript {}: unknown intent class '{}'", wire.id, a.class))
                })?;
                Some(IntentAnnotation { class_id, turn_index: a.turn, boundary_token_index: a.token })
            }
        };
        let transcript = Transcript {
            id: wire.id,
            turns: wire
                .turns
                .into_iter()
                .map(|t| Turn {
                    speaker: t.speaker,
                    tokens: t
                        .tokens
                        .into_iter()
                        .map(|tok| Token { text: tok.t.to_lowercase(), start_ms: tok.s, end_ms: tok.e })
                        .collect(),
                })
                .collect(),
            annotation,
        };
        transcript.validate(classes.len())?;
        out.push(transcript);
    }
    Ok(out)
}

/// Writes transcripts in the JSONL wire format; inverse of [`load_transcripts`].
pub fn write_transcripts(path: &Path, transcripts: &[Transcript], classes: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for tr in transcripts {
        let wire = TranscriptWire {
            id: tr.id.clone(),
            turns: tr
                .turns
                .iter()
                .map(|t| TurnWire {
                    speaker: t.speaker,
                    tokens: t
                        .tokens
                        .iter()
                        .map(|tok| TokenWire { t: tok.text.clone(), s: tok.start_ms, e: tok.end_ms })
                        .collect(),
                })
                .collect(),
            annotation: tr.annotation.as_ref().map(|a| AnnotationWire {
                class: classes[a.class_id].clone(),
                turn: a.turn_index,
                token: a.boundary_token_index,
            }),
        };
        let line = serde_json::to_string(&wire).expect("transcript serialization cannot fail");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Word-to-id map with two reserved ids: PAD (0) and UNK (1). Ids are dense
/// in [0, size) and assigned by descending frequency, ties broken
/// lexicographically, so identical corpora always yield identical tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Rebuilds a vocabulary from an id-ordered word list (checkpoint load).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 || words[0] != PAD_TOKEN || words[1] != UNK_TOKEN {
            return Err(Error::Validation("vocabulary word list missing reserved entries".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary word '{w}'")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    /// Id for a word; unknown words map to UNK.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Uniform draw from the non-reserved ids (lookahead padding).
    pub fn random_regular_id(&self, rng: &mut impl Rng) -> usize {
        debug_assert!(self.size() > 2, "vocabulary has no regular words");
        rng.random_range(2..self.size())
    }
}

/// Builds the vocabulary from the training split. Words seen at least
/// `min_count` times get ids; everything else resolves to UNK.
pub fn build_vocabulary(transcripts: &[Transcript], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Validation("min_count must be at least 1".into()));
    }
    if transcripts.is_empty() {
        return Err(Error::Validation("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tr in transcripts {
        for turn in &tr.turns {
            for w in turn.words() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, n)| n >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut words = Vec::with_capacity(kept.len() + 2);
    words.push(PAD_TOKEN.to_string());
    words.push(UNK_TOKEN.to_string());
    words.extend(kept.into_iter().map(|(w, _)| w.to_string()));
    Vocabulary::from_words(words)
}

/// Per-token intent tag: no intent, or one of the C classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntentTag {
    O,
    Class(usize),
}

/// A labeled training sequence: token ids plus parallel boundary and intent
/// tags. An annotated turn has exactly one boundary tag set, carrying the
/// class at the same position; everything else is O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub token_ids: Vec<usize>,
    pub ib_tags: Vec<bool>,
    pub intent_tags: Vec<IntentTag>,
    /// (transcript id, turn index) provenance.
    pub source: (String, usize),
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Position and class of the boundary, if the sequence is annotated.
    pub fn boundary(&self) -> Option<(usize, usize)> {
        self.ib_tags.iter().position(|&b| b).map(|pos| match self.intent_tags[pos] {
            IntentTag::Class(c) => (pos, c),
            IntentTag::O => unreachable!("boundary without class"),
        })
    }
}

/// Tags one turn. The annotation, when present, must reference this turn;
/// it contributes the single boundary position and its class.
pub fn label_sequence(
    turn: &Turn,
    annotation: Option<&IntentAnnotation>,
    vocab: &Vocabulary,
    source: (String, usize),
) -> Result<LabeledSequence> {
    let len = turn.tokens.len();
    let token_ids = turn.words().map(|w| vocab.id(w)).collect();
    let mut ib_tags = vec![false; len];
    let mut intent_tags = vec![IntentTag::O; len];
    if let Some(ann) = annotation {
        if ann.boundary_token_index >= len {
            return Err(Error::Validation(format!(
                "boundary index {} out of range for a {len}-token turn",
                ann.boundary_token_index
            )));
        }
        ib_tags[ann.boundary_token_index] = true;
        intent_tags[ann.boundary_token_index] = IntentTag::Class(ann.class_id);
    }
    Ok(LabeledSequence { token_ids, ib_tags, intent_tags, source })
}

/// How lookahead padding picks tokens appended past the end of a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadPolicy {
    /// Uniform draw over non-reserved vocabulary ids.
    RandomVocabToken,
}

/// Shifts the boundary (and its intent tag) right by `k` words. When the
/// shifted position runs past the end of the turn, enough randomly drawn
/// vocabulary tokens are appended for the boundary to land exactly `k`
/// positions right of where it was. Unannotated sequences pass through.
pub fn apply_lookahead(
    seq: &LabeledSequence,
    k: usize,
    policy: PadPolicy,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> LabeledSequence {
    let Some((pos, class)) = seq.boundary() else {
        return seq.clone();
    };
    if k == 0 {
        return seq.clone();
    }
    let mut out = seq.clone();
    let target = pos + k;
    if target >= out.len() {
        let deficit = target - (out.len() - 1);
        for _ in 0..deficit {
            let id = match policy {
                PadPolicy::RandomVocabToken => vocab.random_regular_id(rng),
            };
            out.token_ids.push(id);
            out.ib_tags.push(false);
            out.intent_tags.push(IntentTag::O);
        }
    }
    out.ib_tags[pos] = false;
    out.intent_tags[pos] = IntentTag::O;
    out.ib_tags[target] = true;
    out.intent_tags[target] = IntentTag::Class(class);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        // Mirrors the reference corpus proportions 1526/194/197 of 1917.
        SplitFractions { train: 0.796, validation: 0.101, test: 0.103 }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<Transcript>,
    pub validation: Vec<Transcript>,
    pub test: Vec<Transcript>,
}

/// Seeded shuffle, then a disjoint cover: validation and test sizes are
/// rounded from their fractions and train takes the remainder.
pub fn split_dataset(
    transcripts: Vec<Transcript>,
    seed: u64,
    fractions: SplitFractions,
) -> Result<DatasetSplits> {
    let sum = fractions.train + fractions.validation + fractions.test;
    if fractions.train <= 0.0 || fractions.validation <= 0.0 || fractions.test <= 0.0 {
        return Err(Error::Validation("split fractions must be positive".into()));
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split fractions sum to {sum}, expected 1")));
    }
    let n = transcripts.len();
    if n < 3 {
        return Err(Error::Validation(format!("cannot split {n} transcripts three ways")));
    }
    let mut shuffled = transcripts;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_val = (n as f64 * fractions.validation).round() as usize;
    let n_test = (n as f64 * fractions.test).round() as usize;
    if n_val + n_test >= n {
        return Err(Error::Validation("split leaves no training data".into()));
    }
    let test = shuffled.split_off(n - n_test);
    let validation = shuffled.split_off(n - n_test - n_val);
    Ok(DatasetSplits { train: shuffled, validation, test })
}
