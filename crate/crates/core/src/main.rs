//! Command-line front end: corpus generation, training, offline evaluation,
//! real-time replay, threshold tuning, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data or validation error,
//! 3 numeric failure.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtintent::corpus::{load_transcripts, split_dataset, write_transcripts, Transcript};
use rtintent::error::{Error, Result};
use rtintent::metrics::{
    export_histogram, ib_prf, intent_at_oracle_boundary, intent_at_predicted_boundary,
    intent_prf_unmasked, realtime_metrics,
};
use rtintent::models::{
    argmax, boundary_positions, build_mt_examples, build_turn_examples, grad_check_target,
    load_checkpoint, ob_pairs, pb_tuples, predict_sequences, save_checkpoint, token_pairs, train,
    write_log_csv, CheckpointMeta, MtExample, TrainOptions, TrainedModel, Variant,
};
use rtintent::numkernel::{corrupt_gradients, grad_check};
use rtintent::runconfig::RunConfig;
use rtintent::stream::{replay, write_decisions, SessionOptions};
use rtintent::syngen::{generate_corpus, summarize_corpus, write_stats_csv};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rtintent", version, about = "Streaming intent detection for support-call transcripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (section.key = value lines).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Inline config override, repeatable: --set train.epochs=5
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (JSONL) and its statistics CSV.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Data seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Corpus output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Statistics CSV output path.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train a model variant and write a checkpoint plus a training log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model variant: offline, multitask, multitask_lookahead,
        /// multitask_context, intent_only.
        #[arg(long)]
        variant: Option<String>,
        /// Corpus path override.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Training seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log CSV path.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Offline metric suite on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Decision threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Report JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay the test split in real time; write decisions, report, histogram.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Evaluation seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Decision threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Advance the intent LSTM only at boundary fires (literal replay
        /// pseudo-code semantics).
        #[arg(long)]
        strict_algorithm1: bool,
        /// Decisions JSONL output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report JSON output path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Histogram CSV output path.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Sweep the decision threshold on the validation split, maximizing
    /// intent-at-predicted-boundary F1.
    TuneThreshold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Result JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify analytic gradients of a tiny model against finite differences
    /// (always 64-bit).
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt the gradients first; the check must then fail.
        #[arg(long)]
        fault_inject: bool,
    },
}

/// Prints a line, ignoring EPIPE so `rtintent ... | head` exits cleanly.
fn emit(text: impl std::fmt::Display) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's default exit code differs; usage errors here are 1.
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, seed, out, stats } => cmd_gen(&common, seed, out, stats),
        Command::Train { common, variant, corpus, seed, out, log } => {
            cmd_train(&common, variant, corpus, seed, out, log)
        }
        Command::Eval { common, checkpoint, corpus, threshold, out } => {
            cmd_eval(&common, checkpoint, corpus, threshold, out)
        }
        Command::Replay {
            common,
            checkpoint,
            corpus,
            seed,
            threshold,
            strict_algorithm1,
            out,
            report,
            histogram,
        } => cmd_replay(&common, checkpoint, corpus, seed, threshold, strict_algorithm1, out, report, histogram),
        Command::TuneThreshold { common, checkpoint, corpus, out } => {
            cmd_tune(&common, checkpoint, corpus, out)
        }
        Command::Gradcheck { common, fault_inject } => cmd_gradcheck(&common, fault_inject),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &common.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set needs KEY=VALUE, got '{pair}'")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn cmd_gen(common: &Common, seed: Option<u64>, out: Option<PathBuf>, stats: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = seed {
        cfg.data_seed = s;
    }
    let spec = cfg.generator_spec();
    let corpus = generate_corpus(&spec)?;
    let corpus_path = out.unwrap_or(cfg.paths.corpus);
    write_transcripts(&corpus_path, &corpus, &spec.class_names())?;
    let stats_path = stats.unwrap_or(cfg.paths.stats);
    let summary = summarize_corpus(&corpus);
    write_stats_csv(&summary, &stats_path)?;
    emit(format!(
        "wrote {} transcripts to {} (end-of-turn boundary fraction {:.4}); stats in {}",
        corpus.len(),
        corpus_path.display(),
        summary.end_of_turn_fraction,
        stats_path.display()
    ));
    Ok(())
}

fn load_split_corpus(
    cfg: &RunConfig,
    corpus: Option<PathBuf>,
    classes: &[String],
) -> Result<(Vec<Transcript>, Vec<Transcript>, Vec<Transcript>)> {
    let path = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
    let transcripts = load_transcripts(&path, classes)?;
    let splits = split_dataset(transcripts, cfg.data_seed, cfg.fractions)?;
    Ok((splits.train, splits.validation, splits.test))
}

fn cmd_train(
    common: &Common,
    variant: Option<String>,
    corpus: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.variant = v.parse()?;
    }
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    let path = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
    let transcripts = load_transcripts(&path, &cfg.classes)?;
    let splits = split_dataset(transcripts, cfg.data_seed, cfg.fractions)?;
    let n_train = splits.train.len();
    let opts = TrainOptions { variant: cfg.variant, min_count: cfg.min_count, data_seed: cfg.data_seed };
    let result = train(&splits, &cfg.model, &opts, &cfg.classes)?;
    let meta = CheckpointMeta {
        variant: result.variant,
        config: result.config.clone(),
        classes: result.classes.clone(),
        vocab: result.vocab.words().to_vec(),
    };
    let ckpt_path = out.unwrap_or(cfg.paths.checkpoint);
    save_checkpoint(&ckpt_path, &result.model, &meta)?;
    let log_path = log.unwrap_or(cfg.paths.log);
    write_log_csv(&result.log, &log_path)?;
    emit(format!(
        "trained {} on {} transcripts; best validation {:.4} at epoch {}; checkpoint {}",
        result.variant,
        n_train,
        result.best_metric,
        result.best_epoch,
        ckpt_path.display()
    ));
    Ok(())
}

fn check_classes(meta: &CheckpointMeta, cfg: &RunConfig) -> Result<()> {
    if meta.classes != cfg.classes {
        return Err(Error::Validation(format!(
            "checkpoint classes ({}) do not match config classes ({})",
            meta.classes.join(","),
            cfg.classes.join(",")
        )));
    }
    Ok(())
}

fn build_eval_examples(
    transcripts: &[Transcript],
    meta: &CheckpointMeta,
    data_seed: u64,
) -> Result<Vec<MtExample>> {
    let vocab = meta.vocabulary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    build_mt_examples(transcripts, &vocab, meta.config.lookahead_k, meta.config.context_turns, &mut rng)
}

fn cmd_eval(
    common: &Common,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    threshold: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, meta) = load_checkpoint(&ckpt_path)?;
    check_classes(&meta, &cfg)?;
    let (_, _, test) = load_split_corpus(&cfg, corpus, &meta.classes)?;
    let threshold = threshold.unwrap_or(cfg.model.ib_threshold);
    let num_classes = meta.classes.len();

    let report = match &model {
        TrainedModel::MultiTask(m) if meta.variant != Variant::IntentOnly => {
            let examples = build_eval_examples(&test, &meta, cfg.data_seed)?;
            let preds = predict_sequences(m, &examples)?;
            let (bp, bt) = boundary_positions(&preds, threshold);
            let (pp, pt) = pb_tuples(&preds, threshold);
            let (op, ot) = ob_pairs(&preds);
            serde_json::json!({
                "variant": meta.variant.as_str(),
                "threshold": threshold,
                "n_sequences": examples.len(),
                "ib_prf": ib_prf(&bp, &bt),
                "intent_at_ob": intent_at_oracle_boundary(&op, &ot, num_classes, cfg.average),
                "intent_at_pb": intent_at_predicted_boundary(&pp, &pt, num_classes, cfg.average, cfg.pb_window),
            })
        }
        TrainedModel::MultiTask(m) => {
            let examples = build_eval_examples(&test, &meta, cfg.data_seed)?;
            let preds = predict_sequences(m, &examples)?;
            let pairs = token_pairs(&preds, &examples, meta.config.o_index());
            serde_json::json!({
                "variant": meta.variant.as_str(),
                "n_sequences": examples.len(),
                "intent_prf": intent_prf_unmasked(&pairs, num_classes, cfg.average),
            })
        }
        TrainedModel::Offline(m) => {
            let vocab = meta.vocabulary()?;
            let examples = build_turn_examples(&test, &vocab, meta.config.o_index());
            let mut correct = 0usize;
            let mut pred_classes = Vec::new();
            let mut true_classes = Vec::new();
            for ex in &examples {
                let dist = m.forward_eval(&ex.ids)?;
                let top = argmax(&dist);
                if top == ex.class_idx {
                    correct += 1;
                }
                if ex.class_idx != meta.config.o_index() {
                    pred_classes.push(top);
                    true_classes.push(ex.class_idx);
                }
            }
            serde_json::json!({
                "variant": meta.variant.as_str(),
                "n_turns": examples.len(),
                "turn_accuracy": correct as f64 / examples.len().max(1) as f64,
                "intent_prf": intent_at_oracle_boundary(&pred_classes, &true_classes, num_classes + 1, cfg.average),
            })
        }
    };
    let text = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    let out_path = out.unwrap_or(cfg.paths.report);
    std::fs::write(&out_path, &text).map_err(|e| Error::io(&out_path, e))?;
    emit(&text);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_replay(
    common: &Common,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    seed: Option<u64>,
    threshold: Option<f64>,
    strict: bool,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    histogram: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = seed {
        cfg.eval_seed = s;
    }
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, meta) = load_checkpoint(&ckpt_path)?;
    check_classes(&meta, &cfg)?;
    let (_, _, test) = load_split_corpus(&cfg, corpus, &meta.classes)?;
    let vocab = meta.vocabulary()?;
    let mut effective = meta.config.clone();
    effective.ib_threshold = threshold.unwrap_or(cfg.model.ib_threshold);
    let opts = SessionOptions::for_variant(
        meta.variant,
        &effective,
        cfg.eval_seed,
        strict || cfg.strict_algorithm1,
    );
    let records = replay(&test, &model, &vocab, &meta.classes, &opts)?;
    let decisions_path = out.unwrap_or(cfg.paths.decisions);
    write_decisions(&decisions_path, &records)?;
    let rt = realtime_metrics(&records)?;
    let hist_path = histogram.unwrap_or(cfg.paths.histogram);
    export_histogram(&rt, &hist_path)?;
    let body = serde_json::json!({
        "variant": meta.variant.as_str(),
        "threshold": effective.ib_threshold,
        "strict_algorithm1": opts.strict_algorithm1,
        "n_conversations": records.len(),
        "report": rt,
    });
    let text = serde_json::to_string_pretty(&body).expect("report serialization cannot fail");
    let report_path = report.unwrap_or(cfg.paths.report);
    std::fs::write(&report_path, &text).map_err(|e| Error::io(&report_path, e))?;
    emit(&text);
    emit(format!("decisions: {}; histogram: {}", decisions_path.display(), hist_path.display()));
    Ok(())
}

fn cmd_tune(
    common: &Common,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, meta) = load_checkpoint(&ckpt_path)?;
    check_classes(&meta, &cfg)?;
    let TrainedModel::MultiTask(m) = &model else {
        return Err(Error::Validation("threshold tuning needs a streaming (multi-task) checkpoint".into()));
    };
    let (_, validation, _) = load_split_corpus(&cfg, corpus, &meta.classes)?;
    let examples = build_eval_examples(&validation, &meta, cfg.data_seed)?;
    let preds = predict_sequences(m, &examples)?;
    let mut grid = Vec::new();
    let mut best = (cfg.model.ib_threshold, f64::NEG_INFINITY);
    for step in 1..=19 {
        let threshold = step as f64 * 0.05;
        let (pp, pt) = pb_tuples(&preds, threshold);
        let f1 =
            intent_at_predicted_boundary(&pp, &pt, meta.classes.len(), cfg.average, cfg.pb_window).f1;
        if f1 > best.1 {
            best = (threshold, f1);
        }
        grid.push(serde_json::json!({ "threshold": threshold, "intent_pb_f1": f1 }));
    }
    let body = serde_json::json!({
        "best_threshold": best.0,
        "best_intent_pb_f1": best.1,
        "n_sequences": examples.len(),
        "grid": grid,
    });
    let text = serde_json::to_string_pretty(&body).expect("report serialization cannot fail");
    let out_path = out.unwrap_or(cfg.paths.report);
    std::fs::write(&out_path, &text).map_err(|e| Error::io(&out_path, e))?;
    emit(&text);
    Ok(())
}

fn cmd_gradcheck(common: &Common, fault_inject: bool) -> Result<()> {
    let cfg = load_config(common)?;
    // Always 64-bit, always the tiny reference architecture; only the loss
    // hyperparameters and seed come from the config.
    let (mut model, ids, ib, tags) = grad_check_target(&cfg.model);
    let err = grad_check(
        &mut model,
        |m| {
            let out = m.train_example(&ids, &[], &ib, &tags, Variant::MultiTask, None, 1.0)?;
            if fault_inject {
                corrupt_gradients(m);
            }
            Ok(out.2)
        },
        1e-5,
    )?;
    emit(format!("max relative gradient error: {err:.3e}"));
    if fault_inject {
        if err > 1e-2 {
            return Err(Error::Numeric(format!(
                "injected fault detected: gradient error {err:.3e} exceeds 1e-2"
            )));
        }
        return Err(Error::Numeric(format!(
            "fault injection was NOT detected: gradient error {err:.3e}"
        )));
    }
    if err >= 1e-6 {
        return Err(Error::Numeric(format!("gradient error {err:.3e} exceeds 1e-6")));
    }
    emit("gradients verified (64-bit central differences)");
    Ok(())
}
