//! Seeded synthetic call-transcript generator and corpus statistics.
//!
//! Produces conversations shaped like telecom support calls: an agent
//! greeting, optionally a filler-only customer lead-in, a customer turn
//! embedding exactly one intent keyword phrase (annotated on its last word),
//! and optional follow-up exchanges that may restate keywords of the same
//! intent. Word timing is a constant 400 ms per word, so second-valued
//! statistics are exact functions of word counts.

use crate::corpus::{IntentAnnotation, Speaker, Token, Transcript, Turn};
use crate::error::{Error, Result};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const MS_PER_WORD: u64 = 400;

/// One intent class: a name plus the keyword phrases that express it.
#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub name: String,
    pub phrases: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub num_transcripts: usize,
    pub classes: Vec<ClassSpec>,
    pub fillers: Vec<String>,
    pub greetings: Vec<Vec<String>>,
    pub agent_responses: Vec<Vec<String>>,
    /// Extra non-keyword words distractor suffixes may draw from.
    pub suffix_words: Vec<String>,
    /// Fraction of conversations whose intent boundary is the last word of
    /// its turn (no distractor suffix).
    pub end_of_turn_boundary_rate: f64,
    /// Categorical distribution over distractor suffix lengths, in words.
    pub trailing_length_distribution: Vec<(usize, f64)>,
    /// Probability of a filler-only customer turn before the intent turn.
    pub lead_in_rate: f64,
    /// Probability that a lead-in turn also carries a weak early mention of
    /// the intent (the tail of the keyword phrase buried in fillers).
    pub pre_mention_rate: f64,
    /// Probability of post-intent follow-up exchanges.
    pub follow_up_rate: f64,
    pub max_follow_up_exchanges: usize,
    /// Probability that a follow-up customer turn restates intent keywords.
    pub restate_rate: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Validation("generator needs at least one class".into()));
        }
        for c in &self.classes {
            if c.phrases.is_empty() || c.phrases.iter().any(|p| p.is_empty()) {
                return Err(Error::Validation(format!("class '{}' has an empty phrase lexicon", c.name)));
            }
        }
        for (name, rate) in [
            ("end_of_turn_boundary_rate", self.end_of_turn_boundary_rate),
            ("lead_in_rate", self.lead_in_rate),
            ("pre_mention_rate", self.pre_mention_rate),
            ("follow_up_rate", self.follow_up_rate),
            ("restate_rate", self.restate_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Validation(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.trailing_length_distribution.is_empty()
            || self.trailing_length_distribution.iter().any(|&(_, w)| w < 0.0)
            || self.trailing_length_distribution.iter().map(|&(_, w)| w).sum::<f64>() <= 0.0
        {
            return Err(Error::Validation("trailing length distribution must have positive mass".into()));
        }
        if self.fillers.is_empty() || self.greetings.is_empty() || self.agent_responses.is_empty() {
            return Err(Error::Validation("filler, greeting, and response lexicons must be non-empty".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// True when no keyword appears in more than one class lexicon.
    pub fn lexicons_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            let mut class_words = std::collections::HashSet::new();
            for p in &c.phrases {
                class_words.extend(p.iter());
            }
            for w in class_it_words(&class_words) {
                if !seen.insert(w.clone()) {
                    return false;
                }
            }
        }
        true
    }

    /// Sixteen telecom intent classes with pairwise disjoint keyword
    /// lexicons, plus shared fillers and greetings.
    pub fn default_telecom(num_transcripts: usize, seed: u64) -> Self {
        let classes = default_classes();
        GeneratorSpec {
            num_transcripts,
            classes,
            fillers: to_strings(&[
                "um", "uh", "yeah", "hi", "so", "like", "well", "just", "i", "im", "was", "wondering",
                "need", "to", "about", "the", "my", "a", "please", "you", "know", "actually", "wanted",
                "calling", "because", "get", "some",
            ]),
            greetings: vec![
                to_strings(&["hello", "thank", "you", "for", "calling", "how", "can", "i", "help", "you", "today"]),
                to_strings(&["hi", "this", "is", "customer", "support", "what", "can", "i", "do", "for", "you"]),
                to_strings(&["good", "morning", "you", "have", "reached", "customer", "care", "how", "may", "i", "assist"]),
            ],
            agent_responses: vec![
                to_strings(&["okay", "let", "me", "pull", "that", "up"]),
                to_strings(&["sure", "one", "moment", "while", "i", "check"]),
                to_strings(&["alright", "i", "can", "help", "with", "that"]),
                to_strings(&["i", "see", "let", "me", "take", "a", "look"]),
            ],
            suffix_words: to_strings(&[
                "right", "away", "today", "thing", "whole", "situation", "happened", "week", "again",
                "really", "frustrating", "soon", "possible", "whenever", "someone", "available", "thanks",
                "appreciate", "it", "okay", "this", "that", "been", "going", "on", "still", "not", "fixed",
            ]),
            end_of_turn_boundary_rate: 0.62,
            trailing_length_distribution: vec![
                (1, 0.08),
                (2, 0.12),
                (3, 0.14),
                (4, 0.14),
                (6, 0.13),
                (8, 0.12),
                (12, 0.10),
                (16, 0.07),
                (20, 0.05),
                (25, 0.03),
                (30, 0.02),
            ],
            lead_in_rate: 0.35,
            pre_mention_rate: 0.3,
            follow_up_rate: 0.75,
            max_follow_up_exchanges: 2,
            restate_rate: 0.8,
            seed,
        }
    }
}

fn class_it_words(words: &std::collections::HashSet<&String>) -> Vec<String> {
    let mut v: Vec<String> = words.iter().map(|w| (*w).clone()).collect();
    v.sort();
    v
}

fn to_strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

fn phrases(raw: &[&[&str]]) -> Vec<Vec<String>> {
    raw.iter().map(|p| to_strings(p)).collect()
}

fn default_classes() -> Vec<ClassSpec> {
    let defs: Vec<(&str, Vec<&[&str]>)> = vec![
        ("account_management", vec![
            &["update", "account", "holder", "information"],
            &["change", "account", "owner", "name"],
            &["fix", "account", "profile", "details"],
        ]),
        ("billing_dispute", vec![
            &["charged", "twice", "billing", "mistake"],
            &["dispute", "overcharge", "invoice"],
            &["wrong", "charges", "bill"],
        ]),
        ("plan_upgrade", vec![
            &["upgrade", "unlimited", "plan"],
            &["switch", "bigger", "package"],
            &["move", "premium", "tier"],
        ]),
        ("plan_downgrade", vec![
            &["downgrade", "cheaper", "option"],
            &["reduce", "monthly", "cost"],
            &["smaller", "bundle", "instead"],
        ]),
        ("cancel_service", vec![
            &["cancel", "service", "completely"],
            &["terminate", "contract", "entirely"],
            &["close", "subscription", "permanently"],
        ]),
        ("new_line", vec![
            &["add", "another", "line"],
            &["activate", "additional", "handset"],
            &["extra", "connection", "family"],
        ]),
        ("sim_replacement", vec![
            &["replacement", "sim", "card"],
            &["new", "chip", "ordered"],
            &["sim", "swap", "request"],
        ]),
        ("device_trouble", vec![
            &["phone", "screen", "broken"],
            &["device", "keeps", "crashing"],
            &["restarting", "itself", "randomly"],
        ]),
        ("network_outage", vec![
            &["signal", "down", "area"],
            &["network", "outage", "neighborhood"],
            &["coverage", "dropped", "everywhere"],
        ]),
        ("roaming_setup", vec![
            &["enable", "international", "roaming"],
            &["traveling", "abroad", "trip"],
            &["overseas", "access", "setup"],
        ]),
        ("payment_arrangement", vec![
            &["payment", "extension", "arrange"],
            &["pay", "later", "deadline"],
            &["installment", "agreement", "balance"],
        ]),
        ("autopay_setup", vec![
            &["autopay", "enrollment", "start"],
            &["automatic", "withdrawal", "bank"],
            &["recurring", "debit", "checking"],
        ]),
        ("port_number", vec![
            &["port", "number", "carrier"],
            &["transfer", "existing", "digits"],
            &["keep", "old", "number"],
        ]),
        ("voicemail_reset", vec![
            &["voicemail", "password", "reset"],
            &["mailbox", "pin", "locked"],
            &["greeting", "message", "stuck"],
        ]),
        ("data_usage", vec![
            &["data", "usage", "alert"],
            &["gigabytes", "used", "allowance"],
            &["hotspot", "limit", "reached"],
        ]),
        ("insurance_claim", vec![
            &["insurance", "claim", "file"],
            &["lost", "stolen", "replace"],
            &["warranty", "damage", "report"],
        ]),
    ];
    defs.into_iter()
        .map(|(name, ps)| ClassSpec { name: name.to_string(), phrases: phrases(&ps) })
        .collect()
}

/// Word-count clock: assigns each word a 400 ms slot, consecutive across the
/// whole conversation.
struct WordClock {
    next_ms: u64,
}

impl WordClock {
    fn new() -> Self {
        WordClock { next_ms: 0 }
    }

    fn turn(&mut self, speaker: Speaker, words: &[String]) -> Turn {
        let tokens = words
            .iter()
            .map(|w| {
                let start = self.next_ms;
                self.next_ms += MS_PER_WORD;
                Token { text: w.clone(), start_ms: start, end_ms: start + MS_PER_WORD }
            })
            .collect();
        Turn { speaker, tokens }
    }
}

fn sample_categorical(dist: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = dist.iter().map(|&(_, w)| w).sum();
    let mut target = rng.random::<f64>() * total;
    for &(value, weight) in dist {
        target -= weight;
        if target <= 0.0 {
            return value;
        }
    }
    dist.last().unwrap().0
}

fn sample_words(pool: &[String], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

/// Generates the corpus. Deterministic given `spec.seed`: the same spec
/// yields a byte-identical transcript list.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Vec<Transcript>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_transcripts);
    for i in 0..spec.num_transcripts {
        out.push(generate_one(spec, i, &mut rng));
    }
    Ok(out)
}

fn generate_one(spec: &GeneratorSpec, ordinal: usize, rng: &mut ChaCha8Rng) -> Transcript {
    let class_id = rng.random_range(0..spec.classes.len());
    let class = &spec.classes[class_id];
    let phrase = class.phrases.choose(rng).unwrap().clone();

    let mut clock = WordClock::new();
    let mut turns = Vec::new();

    turns.push(clock.turn(Speaker::Agent, spec.greetings.choose(rng).unwrap()));

    if rng.random::<f64>() < spec.lead_in_rate {
        let mut lead = sample_words(&spec.fillers, rng.random_range(2..=5), rng);
        if rng.random::<f64>() < spec.pre_mention_rate {
            // A vague early mention: one lone mid-phrase keyword in fillers.
            let word = phrase[phrase.len() - 2].clone();
            let at = rng.random_range(1..=lead.len());
            lead.insert(at, word);
        }
        turns.push(clock.turn(Speaker::Customer, &lead));
        turns.push(clock.turn(Speaker::Agent, spec.agent_responses.choose(rng).unwrap()));
    }

    // The intent turn: fillers, the keyword phrase, and (for conversations
    // whose boundary is not turn-final) a distractor suffix of non-keyword
    // words so no second intent can appear.
    let mut words = sample_words(&spec.fillers, rng.random_range(0..=4), rng);
    let boundary_index = words.len() + phrase.len() - 1;
    words.extend(phrase.iter().cloned());
    if rng.random::<f64>() >= spec.end_of_turn_boundary_rate {
        let suffix_len = sample_categorical(&spec.trailing_length_distribution, rng);
        let pool: Vec<String> =
            spec.fillers.iter().chain(spec.suffix_words.iter()).cloned().collect();
        words.extend(sample_words(&pool, suffix_len, rng));
    }
    let intent_turn_index = turns.len();
    turns.push(clock.turn(Speaker::Customer, &words));

    if rng.random::<f64>() < spec.follow_up_rate {
        for _ in 0..rng.random_range(1..=spec.max_follow_up_exchanges) {
            turns.push(clock.turn(Speaker::Agent, spec.agent_responses.choose(rng).unwrap()));
            let mut follow = sample_words(&spec.fillers, rng.random_range(2..=5), rng);
            if rng.random::<f64>() < spec.restate_rate {
                // Restate the tail of the same intent phrase: realistic
                // elaboration, never a new intent.
                follow.extend(phrase[phrase.len() - 2..].iter().cloned());
                follow.extend(sample_words(&spec.suffix_words, rng.random_range(1..=3), rng));
            }
            turns.push(clock.turn(Speaker::Customer, &follow));
        }
    }

    Transcript {
        id: format!("synth-{ordinal:06}"),
        turns,
        annotation: Some(IntentAnnotation {
            class_id,
            turn_index: intent_turn_index,
            boundary_token_index: boundary_index,
        }),
    }
}

/// Aggregate corpus statistics: per-class counts, the fraction of
/// conversations whose boundary ends its turn, and the distribution of
/// (end-of-turn time - boundary time), keyed in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_transcripts: usize,
    pub n_annotated: usize,
    pub class_counts: BTreeMap<usize, usize>,
    pub end_of_turn_fraction: f64,
    pub offset_ms_histogram: BTreeMap<u64, usize>,
}

pub fn summarize_corpus(transcripts: &[Transcript]) -> CorpusStats {
    let mut class_counts = BTreeMap::new();
    let mut offset_ms_histogram = BTreeMap::new();
    let mut n_annotated = 0usize;
    let mut n_end_of_turn = 0usize;
    for tr in transcripts {
        let Some(ann) = &tr.annotation else { continue };
        n_annotated += 1;
        *class_counts.entry(ann.class_id).or_insert(0) += 1;
        let turn = &tr.turns[ann.turn_index];
        let boundary_end = turn.tokens[ann.boundary_token_index].end_ms;
        let turn_end = turn.tokens.last().unwrap().end_ms;
        let offset = turn_end - boundary_end;
        *offset_ms_histogram.entry(offset).or_insert(0) += 1;
        if offset == 0 {
            n_end_of_turn += 1;
        }
    }
    let end_of_turn_fraction =
        if n_annotated == 0 { 0.0 } else { n_end_of_turn as f64 / n_annotated as f64 };
    CorpusStats {
        n_transcripts: transcripts.len(),
        n_annotated,
        class_counts,
        end_of_turn_fraction,
        offset_ms_histogram,
    }
}

/// Writes the offset histogram as `bucket,count` CSV, bucket in seconds.
pub fn write_stats_csv(stats: &CorpusStats, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "bucket,count").map_err(|e| Error::io(path, e))?;
    for (&ms, &count) in &stats.offset_ms_histogram {
        writeln!(f, "{},{}", ms as f64 / 1000.0, count).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker;

    #[test]
    fn default_lexicons_are_disjoint() {
        let spec = GeneratorSpec::default_telecom(1, 0);
        assert!(spec.lexicons_disjoint());
        assert_eq!(spec.classes.len(), 16);
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = GeneratorSpec::default_telecom(50, 9);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_transcripts_is_empty() {
        let spec = GeneratorSpec::default_telecom(0, 1);
        assert!(generate_corpus(&spec).unwrap().is_empty());
    }

    #[test]
    fn every_transcript_is_well_formed() {
        // Structural scan: exactly one annotation, customer turn, boundary on
        // the final keyword-phrase word, boundary word drawn from the class
        // lexicon.
        let spec = GeneratorSpec::default_telecom(300, 3);
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.len(), 300);
        for tr in &corpus {
            tr.validate(spec.classes.len()).unwrap();
            let ann = tr.annotation.as_ref().expect("every synthetic transcript is annotated");
            let turn = &tr.turns[ann.turn_index];
            assert_eq!(turn.speaker, Speaker::Customer);
            let boundary_word = &turn.tokens[ann.boundary_token_index].text;
            let class = &spec.classes[ann.class_id];
            assert!(
                class.phrases.iter().any(|p| p.last().unwrap() == boundary_word),
                "boundary word '{boundary_word}' not a phrase-final keyword of {}",
                class.name
            );
        }
    }

    #[test]
    fn end_of_turn_rate_is_calibrated() {
        let spec = GeneratorSpec::default_telecom(1000, 17);
        let corpus = generate_corpus(&spec).unwrap();
        let stats = summarize_corpus(&corpus);
        assert!(
            (stats.end_of_turn_fraction - 0.62).abs() <= 0.04,
            "measured {}",
            stats.end_of_turn_fraction
        );
    }

    #[test]
    fn class_frequencies_are_near_uniform() {
        let n = 4000usize;
        let spec = GeneratorSpec::default_telecom(n, 23);
        let corpus = generate_corpus(&spec).unwrap();
        let stats = summarize_corpus(&corpus);
        let expected = n as f64 / 16.0;
        let sigma = (n as f64 * (1.0 / 16.0) * (15.0 / 16.0)).sqrt();
        for c in 0..16 {
            let count = *stats.class_counts.get(&c).unwrap_or(&0) as f64;
            assert!(
                (count - expected).abs() <= 3.0 * sigma,
                "class {c}: {count} vs {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn offset_distribution_matches_spec_parameters() {
        // ~62% point mass at 0; the rest lands on 0.4s-per-word multiples of
        // the configured suffix lengths.
        let spec = GeneratorSpec::default_telecom(2000, 31);
        let corpus = generate_corpus(&spec).unwrap();
        let stats = summarize_corpus(&corpus);
        let at_zero = *stats.offset_ms_histogram.get(&0).unwrap_or(&0);
        assert!((at_zero as f64 / 2000.0 - 0.62).abs() <= 0.04);
        let allowed: std::collections::HashSet<u64> = spec
            .trailing_length_distribution
            .iter()
            .map(|&(len, _)| len as u64 * MS_PER_WORD)
            .collect();
        for &ms in stats.offset_ms_histogram.keys() {
            if ms != 0 {
                assert!(allowed.contains(&ms), "unexpected offset bucket {ms} ms");
            }
        }
        // Bucket shares follow the trailing distribution (loose tolerance).
        let non_zero_total: usize =
            stats.offset_ms_histogram.iter().filter(|&(&ms, _)| ms != 0).map(|(_, &c)| c).sum();
        let weight_total: f64 = spec.trailing_length_distribution.iter().map(|&(_, w)| w).sum();
        for &(len, w) in &spec.trailing_length_distribution {
            let ms = len as u64 * MS_PER_WORD;
            let share = *stats.offset_ms_histogram.get(&ms).unwrap_or(&0) as f64 / non_zero_total as f64;
            assert!((share - w / weight_total).abs() < 0.06, "len {len}: share {share} vs {w}");
        }
    }

    #[test]
    fn point_mass_when_every_boundary_is_turn_final() {
        let mut spec = GeneratorSpec::default_telecom(100, 5);
        spec.end_of_turn_boundary_rate = 1.0;
        let corpus = generate_corpus(&spec).unwrap();
        let stats = summarize_corpus(&corpus);
        assert_eq!(stats.end_of_turn_fraction, 1.0);
        assert_eq!(stats.offset_ms_histogram.len(), 1);
        assert_eq!(stats.offset_ms_histogram[&0], 100);
    }

    #[test]
    fn empty_corpus_stats_are_clean() {
        let stats = summarize_corpus(&[]);
        assert_eq!(stats.n_transcripts, 0);
        assert_eq!(stats.end_of_turn_fraction, 0.0);
        assert!(stats.offset_ms_histogram.is_empty());
    }

    #[test]
    fn timestamps_advance_at_constant_rate() {
        let spec = GeneratorSpec::default_telecom(5, 2);
        let corpus = generate_corpus(&spec).unwrap();
        for tr in &corpus {
            let mut expected = 0u64;
            for turn in &tr.turns {
                for tok in &turn.tokens {
                    assert_eq!(tok.start_ms, expected);
                    assert_eq!(tok.end_ms, expected + MS_PER_WORD);
                    expected += MS_PER_WORD;
                }
            }
        }
    }
}
