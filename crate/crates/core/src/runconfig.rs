//! Line-oriented run configuration: `section.key = value` per line, `#`
//! comments, unknown keys rejected. Defaults are the reference experimental
//! setup; command-line flags override file values.

use crate::corpus::SplitFractions;
use crate::error::{Error, Result};
use crate::metrics::Average;
use crate::models::{ModelConfig, Variant};
use crate::syngen::GeneratorSpec;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct GenSection {
    pub num_transcripts: usize,
    pub end_of_turn_boundary_rate: f64,
    pub lead_in_rate: f64,
    pub pre_mention_rate: f64,
    pub follow_up_rate: f64,
    pub restate_rate: f64,
    pub max_follow_up_exchanges: usize,
    pub trailing_lengths: Option<Vec<(usize, f64)>>,
}

impl Default for GenSection {
    fn default() -> Self {
        let d = GeneratorSpec::default_telecom(0, 0);
        GenSection {
            num_transcripts: 1000,
            end_of_turn_boundary_rate: d.end_of_turn_boundary_rate,
            lead_in_rate: d.lead_in_rate,
            pre_mention_rate: d.pre_mention_rate,
            follow_up_rate: d.follow_up_rate,
            restate_rate: d.restate_rate,
            max_follow_up_exchanges: d.max_follow_up_exchanges,
            trailing_lengths: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub decisions: PathBuf,
    pub histogram: PathBuf,
    pub log: PathBuf,
    pub stats: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            checkpoint: "model.ckpt".into(),
            report: "report.json".into(),
            decisions: "decisions.jsonl".into(),
            histogram: "histogram.csv".into(),
            log: "train_log.csv".into(),
            stats: "stats.csv".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    /// Seeds corpus generation, dataset splitting, and lookahead pad draws.
    pub data_seed: u64,
    /// Seeds replay padding and threshold tuning.
    pub eval_seed: u64,
    pub min_count: usize,
    pub classes: Vec<String>,
    pub fractions: SplitFractions,
    pub strict_algorithm1: bool,
    pub average: Average,
    /// Position tolerance for intent-at-predicted-boundary matching.
    pub pb_window: usize,
    pub gen: GenSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen_spec = GeneratorSpec::default_telecom(0, 0);
        RunConfig {
            model: ModelConfig::default(),
            variant: Variant::MultiTask,
            data_seed: 101,
            eval_seed: 303,
            min_count: 2,
            classes: gen_spec.class_names(),
            fractions: SplitFractions::default(),
            strict_algorithm1: false,
            average: Average::Macro,
            pb_window: 0,
            gen: GenSection::default(),
            paths: Paths::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value '{value}' for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("bad value '{value}' for {key}: expected true or false"))),
    }
}

fn parse_trailing(value: &str) -> Result<Vec<(usize, f64)>> {
    value
        .split(',')
        .map(|pair| {
            let (len, w) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad trailing length entry '{pair}', expected len:weight")))?;
            Ok((
                parse_num::<usize>("gen.trailing_lengths", len.trim())?,
                parse_num::<f64>("gen.trailing_lengths", w.trim())?,
            ))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.seed" => self.data_seed = parse_num(key, value)?,
            "data.min_count" => self.min_count = parse_num(key, value)?,
            "data.classes" => {
                self.classes = value.split(',').map(|c| c.trim().to_string()).collect();
                if self.classes.iter().any(|c| c.is_empty()) {
                    return Err(Error::Config("data.classes contains an empty name".into()));
                }
                self.model.num_classes = self.classes.len();
            }
            "data.split_train" => self.fractions.train = parse_num(key, value)?,
            "data.split_validation" => self.fractions.validation = parse_num(key, value)?,
            "data.split_test" => self.fractions.test = parse_num(key, value)?,
            "model.embed_dim" => self.model.embed_dim = parse_num(key, value)?,
            "model.hidden_dim" => self.model.hidden_dim = parse_num(key, value)?,
            "model.num_layers" => self.model.num_layers = parse_num(key, value)?,
            "model.dropout" => self.model.dropout = parse_num(key, value)?,
            "model.lookahead_k" => self.model.lookahead_k = parse_num(key, value)?,
            "model.context_turns" => self.model.context_turns = parse_num(key, value)?,
            "train.epochs" => self.model.epochs = parse_num(key, value)?,
            "train.lr" => self.model.lr = parse_num(key, value)?,
            "train.batch_size" => self.model.batch_size = parse_num(key, value)?,
            "train.beta" => self.model.beta = parse_num(key, value)?,
            "train.focal_alpha" => self.model.focal_alpha = parse_num(key, value)?,
            "train.focal_gamma" => self.model.focal_gamma = parse_num(key, value)?,
            "train.seed" => self.model.seed = parse_num(key, value)?,
            "run.variant" => self.variant = value.parse()?,
            "eval.ib_threshold" => self.model.ib_threshold = parse_num(key, value)?,
            "eval.seed" => self.eval_seed = parse_num(key, value)?,
            "eval.strict_algorithm1" => self.strict_algorithm1 = parse_bool(key, value)?,
            "eval.pb_window" => self.pb_window = parse_num(key, value)?,
            "eval.average" => {
                self.average = match value {
                    "macro" => Average::Macro,
                    "micro" => Average::Micro,
                    _ => return Err(Error::Config(format!("bad value '{value}' for {key}: expected macro or micro"))),
                }
            }
            "gen.num_transcripts" => self.gen.num_transcripts = parse_num(key, value)?,
            "gen.end_of_turn_boundary_rate" => self.gen.end_of_turn_boundary_rate = parse_num(key, value)?,
            "gen.lead_in_rate" => self.gen.lead_in_rate = parse_num(key, value)?,
            "gen.pre_mention_rate" => self.gen.pre_mention_rate = parse_num(key, value)?,
            "gen.follow_up_rate" => self.gen.follow_up_rate = parse_num(key, value)?,
            "gen.restate_rate" => self.gen.restate_rate = parse_num(key, value)?,
            "gen.max_follow_up_exchanges" => self.gen.max_follow_up_exchanges = parse_num(key, value)?,
            "gen.trailing_lengths" => self.gen.trailing_lengths = Some(parse_trailing(value)?),
            "paths.corpus" => self.paths.corpus = value.into(),
            "paths.checkpoint" => self.paths.checkpoint = value.into(),
            "paths.report" => self.paths.report = value.into(),
            "paths.decisions" => self.paths.decisions = value.into(),
            "paths.histogram" => self.paths.histogram = value.into(),
            "paths.log" => self.paths.log = value.into(),
            "paths.stats" => self.paths.stats = value.into(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(content: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected 'section.key = value', got '{line}'"),
            })?;
            cfg.apply(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&content)
    }

    /// The generator spec implied by the config: built-in telecom lexicons
    /// with the config's scalar knobs; seeded from the data seed.
    pub fn generator_spec(&self) -> GeneratorSpec {
        let mut spec = GeneratorSpec::default_telecom(self.gen.num_transcripts, self.data_seed);
        spec.end_of_turn_boundary_rate = self.gen.end_of_turn_boundary_rate;
        spec.lead_in_rate = self.gen.lead_in_rate;
        spec.pre_mention_rate = self.gen.pre_mention_rate;
        spec.follow_up_rate = self.gen.follow_up_rate;
        spec.restate_rate = self.gen.restate_rate;
        spec.max_follow_up_exchanges = self.gen.max_follow_up_exchanges;
        if let Some(t) = &self.gen.trailing_lengths {
            spec.trailing_length_distribution = t.clone();
        }
        spec
    }
}
