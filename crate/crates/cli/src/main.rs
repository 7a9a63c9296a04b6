//! Batch command line for the SLU toolkit: corpus generation, statistics,
//! training, evaluation, and energy reporting.
//!
//! Exit codes: 0 on success, 2 on usage or input errors, 3 when training
//! diverges.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use slu_core::corpus::{
    compute_stats, generate_synthetic, load_corpus_dir, save_corpus_dir, CorpusSplit, SyntheticSpec,
};
use slu_core::curriculum::{evaluate_user_cer, plan, run_strategy, Hyperparams};
use slu_core::energy::{
    append_ledger, build_report, load_ledger, render_records, render_table, EnergyMeter,
};
use slu_core::model::{load_checkpoint, save_checkpoint};
use slu_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "slu",
    version,
    about = "Desk-scale spoken language understanding trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus as train/dev/test files.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total utterances across the three splits.
        #[arg(long, default_value_t = 100)]
        utts: usize,
        /// Distinct concept labels (at least 2).
        #[arg(long, default_value_t = 5)]
        concepts: usize,
        /// Feature width per frame.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Standard deviation of frame noise around concept centroids.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Output directory for train.jsonl, dev.jsonl, test.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics per split.
    Stats {
        /// Corpus directory.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a strategy and append its run record to the ledger.
    Train {
        /// One of: 3steps, 2steps, 1step.
        #[arg(long)]
        strategy: String,
        /// Checkpoint whose parameters initialize the first stage.
        #[arg(long)]
        transfer_from: Option<PathBuf>,
        /// Corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Energy meter: simulated:WATTS or recorded:KWH.
        #[arg(long, default_value = "simulated:100")]
        meter: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where the final checkpoint is written.
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Run-record ledger to append to.
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Print the error rate of a checkpoint over one split's user turns.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// One of: dev, test.
        #[arg(long)]
        split: String,
    },
    /// Render the energy report from a run ledger.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        /// One of: table, records.
        #[arg(long, default_value = "table")]
        format: String,
    },
}

/// Everything needed to reproduce one training invocation.
#[derive(Serialize)]
struct RunManifest<'a> {
    run_id: &'a str,
    strategy: &'a str,
    seed: u64,
    corpus: String,
    meter: &'a str,
    transfer_from: Option<String>,
    hyperparams: &'a Hyperparams,
}

/// Writes to stdout, exiting quietly if the reading end of a pipe has gone
/// away (e.g. `slu report | head`).
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing to stdout: {e}");
        std::process::exit(2);
    }
}

fn parse_meter(s: &str) -> Result<EnergyMeter> {
    let (mode, value) = s.split_once(':').ok_or_else(|| {
        Error::InvalidArgument(format!(
            "meter {s:?} must look like simulated:WATTS or recorded:KWH"
        ))
    })?;
    let v: f64 = value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("meter value {value:?} is not a number")))?;
    match mode {
        "simulated" => EnergyMeter::simulated(v),
        "recorded" => EnergyMeter::recorded(v),
        other => Err(Error::InvalidArgument(format!(
            "unknown meter mode {other:?} (expected simulated or recorded)"
        ))),
    }
}

fn stats_block(name: &str, s: &slu_core::corpus::CorpusStats) -> String {
    let rows = [
        ("total audio (h)", format!("{:.3}", s.total_audio_h)),
        ("  user audio (h)", format!("{:.3}", s.user_audio_h)),
        ("sentences", s.n_sentences.to_string()),
        ("  user sentences", s.n_user_sentences.to_string()),
        ("word tokens", s.n_word_tokens.to_string()),
        ("  user word tokens", s.n_user_word_tokens.to_string()),
        ("word dictionary", s.word_dict_size.to_string()),
        ("word OOV %", format!("{:.2}", s.word_oov_pct)),
        ("label tokens", s.n_label_tokens.to_string()),
        ("  user label tokens", s.n_user_label_tokens.to_string()),
        ("label dictionary", s.label_dict_size.to_string()),
        ("label OOV %", format!("{:.2}", s.label_oov_pct)),
    ];
    let mut out = format!("[{name}]\n");
    for (label, value) in rows {
        out.push_str(&format!("{label:<20} {value}\n"));
    }
    out
}

fn eval_split<'a>(corpus: &'a slu_core::corpus::Corpus, split: &str) -> Result<&'a CorpusSplit> {
    match split {
        "dev" => Ok(&corpus.dev),
        "test" => Ok(&corpus.test),
        other => Err(Error::InvalidArgument(format!(
            "unknown split {other:?} (expected dev or test)"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            utts,
            concepts,
            dim,
            noise,
            out,
        } => {
            let corpus = generate_synthetic(&SyntheticSpec {
                seed,
                n_utts: utts,
                n_concepts: concepts,
                feature_dim: dim,
                noise,
                ..SyntheticSpec::default()
            })?;
            save_corpus_dir(&corpus, &out)?;
            emit(&format!(
                "wrote {} train, {} dev, {} test utterances to {}\n",
                corpus.train.utterances.len(),
                corpus.dev.utterances.len(),
                corpus.test.utterances.len(),
                out.display()
            ));
            Ok(())
        }
        Command::Stats { corpus } => {
            let c = load_corpus_dir(&corpus)?;
            for split in [&c.train, &c.dev, &c.test] {
                let s = compute_stats(split, &c.train.word_vocab, &c.train.label_vocab);
                emit(&stats_block(split.name.as_str(), &s));
            }
            Ok(())
        }
        Command::Train {
            strategy,
            transfer_from,
            corpus,
            meter,
            seed,
            out_ckpt,
            ledger,
        } => {
            let c = load_corpus_dir(&corpus)?;
            let input_dim = c.train.feature_dim()?;
            let mut hp = Hyperparams::new(input_dim);
            hp.seed = seed;
            let transfer = transfer_from.as_deref().map(load_checkpoint).transpose()?;
            let strategy_plan = plan(&strategy, &hp, transfer)?;
            let parsed_meter = parse_meter(&meter)?;
            let run_id = out_ckpt
                .file_stem()
                .and_then(|s| s.to_str())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "cannot derive a run id from {:?}",
                        out_ckpt.display().to_string()
                    ))
                })?
                .to_string();
            let corpus_tag = corpus.display().to_string();
            let run = run_strategy(&strategy_plan, &hp, &c, &corpus_tag, parsed_meter, &run_id)?;
            save_checkpoint(&run.final_checkpoint, &out_ckpt)?;
            append_ledger(&ledger, &run.record)?;
            let manifest = RunManifest {
                run_id: &run_id,
                strategy: &strategy,
                seed,
                corpus: corpus_tag.clone(),
                meter: &meter,
                transfer_from: transfer_from.map(|p| p.display().to_string()),
                hyperparams: &hp,
            };
            let manifest_path = manifest_path(&out_ckpt);
            let text = serde_json::to_string_pretty(&manifest)
                .map_err(|e| Error::InvalidArgument(format!("serialize manifest: {e}")))?;
            std::fs::write(&manifest_path, text)
                .map_err(|e| Error::InvalidArgument(format!("write manifest: {e}")))?;
            emit(&format!(
                "run {}: strategy {} on {} | kWh {:.3} | dev CER {:.2} | test CER {:.2}\n",
                run.record.run_id,
                run.record.strategy,
                run.record.feature_family,
                run.record.kwh,
                run.record.dev_cer,
                run.record.test_cer
            ));
            Ok(())
        }
        Command::Eval {
            ckpt,
            corpus,
            split,
        } => {
            let c = load_corpus_dir(&corpus)?;
            let checkpoint = load_checkpoint(&ckpt)?;
            let cer = evaluate_user_cer(&checkpoint, eval_split(&c, &split)?)?;
            emit(&format!("{:.2}\n", cer * 100.0));
            Ok(())
        }
        Command::Report { ledger, format } => {
            let records = load_ledger(&ledger)?;
            let report = build_report(&records)?;
            match format.as_str() {
                "table" => emit(&render_table(&report)),
                "records" => emit(&render_records(&report)?),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown format {other:?} (expected table or records)"
                    )))
                }
            }
            Ok(())
        }
    }
}

fn manifest_path(out_ckpt: &Path) -> PathBuf {
    let stem = out_ckpt
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    out_ckpt.with_file_name(format!("{stem}.run.json"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
