//! Command-line front end: `eval`, `calibrate`, and `audit`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coherence::judge::JudgeConfig;
use coherence::model::ModelId;
use coherence::pipeline::{
    emit_report, run_audit, run_calibration, run_eval, CalibrationConfig, PipelineError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "coherence",
    version,
    about = "Evaluate trace coherence of sampled math reasoning traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct JudgeArgs {
    /// OpenAI-compatible endpoint base URL
    #[arg(long, default_value = "https://api.openai.com/v1")]
    endpoint: String,
    /// Judge model name
    #[arg(long = "judge-model", default_value = "gpt-4o")]
    judge_model: String,
    /// Environment variable holding the bearer token
    #[arg(long = "api-key-env", default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Judge sampling temperature
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Retries per judgment on transport failure or malformed replies
    #[arg(long = "max-retries", default_value_t = 3)]
    max_retries: u32,
    /// Per-request timeout in seconds
    #[arg(long = "timeout-secs", default_value_t = 120)]
    timeout_secs: u64,
    /// Maximum concurrent in-flight judge requests
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
}

impl JudgeArgs {
    fn into_config(self) -> JudgeConfig {
        JudgeConfig {
            endpoint_url: self.endpoint,
            model_name: self.judge_model,
            api_key_env: self.api_key_env,
            temperature: self.temperature,
            max_retries: self.max_retries,
            timeout_secs: self.timeout_secs,
            max_in_flight: self.concurrency,
            ..JudgeConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate base and RL rollouts: accuracy, coherence, patterns, matrices
    Eval {
        /// Gold dataset (JSONL: question, answer with "#### <value>")
        #[arg(long)]
        gold: PathBuf,
        /// Base-model rollouts (JSONL: problem_id, sample_index, text)
        #[arg(long)]
        base: PathBuf,
        /// RL-model rollouts (same schema)
        #[arg(long)]
        rl: PathBuf,
        /// K values to evaluate at
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 16])]
        k: Vec<usize>,
        /// Output directory for report.json, matrices.csv, report.md
        #[arg(long)]
        out: PathBuf,
        /// Judgment cache file (JSONL, append-only)
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Never open a network connection; fail if the cache has gaps
        #[arg(long)]
        offline: bool,
        /// Judge incorrect responses too, for taxonomy research
        #[arg(long = "judge-all")]
        judge_all: bool,
        #[command(flatten)]
        judge: JudgeArgs,
    },
    /// Score the judge against human-annotated responses
    Calibrate {
        /// Annotations (JSONL: problem, response, human_label)
        #[arg(long = "gold-annotations")]
        gold_annotations: PathBuf,
        /// Judgment cache file
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Report lenient accuracy (human label within the judge's set) as
        /// the headline figure
        #[arg(long)]
        lenient: bool,
        /// Output directory for calibration.json
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Never open a network connection
        #[arg(long)]
        offline: bool,
        #[command(flatten)]
        judge: JudgeArgs,
    },
    /// Deterministic arithmetic audit of one rollouts file, no judge
    Audit {
        /// Rollouts file (JSONL: problem_id, sample_index, text)
        #[arg(long)]
        rollouts: PathBuf,
        /// Output directory for audit.jsonl and audit_summary.json
        #[arg(long)]
        out: PathBuf,
        /// Model label recorded in the audit output
        #[arg(long, value_enum, default_value = "base")]
        model: CliModel,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliModel {
    Base,
    Rl,
}

impl From<CliModel> for ModelId {
    fn from(value: CliModel) -> ModelId {
        match value {
            CliModel::Base => ModelId::Base,
            CliModel::Rl => ModelId::Rl,
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Eval {
            gold,
            base,
            rl,
            k,
            out,
            cache,
            offline,
            judge_all,
            judge,
        } => {
            let config = RunConfig {
                cache_path: cache,
                k_values: k,
                judge: judge.into_config(),
                offline,
                judge_all,
                ..RunConfig::new(gold, base, rl, out.clone())
            };
            let outcome = run_eval(&config)?;
            let written = emit_report(&outcome.report, &out)?;
            println!(
                "evaluated {} problems at K = {:?} ({} judged responses, {} cache hits, {} network calls)",
                outcome.report.problems.len(),
                outcome.report.k_values,
                outcome.stats.judged_responses,
                outcome.stats.cache_hits,
                outcome.stats.network_calls,
            );
            if outcome.stats.skipped_gold_lines > 0 {
                println!(
                    "note: skipped {} unparseable gold lines",
                    outcome.stats.skipped_gold_lines
                );
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Calibrate {
            gold_annotations,
            cache,
            lenient,
            out,
            offline,
            judge,
        } => {
            let config = CalibrationConfig {
                annotations_path: gold_annotations,
                cache_path: cache,
                out_dir: out.clone(),
                judge: judge.into_config(),
                offline,
            };
            let report = run_calibration(&config, None)?;
            let headline = if lenient {
                ("lenient", report.accuracy_lenient)
            } else {
                ("exact", report.accuracy_exact)
            };
            println!(
                "calibration over {} records: {} accuracy {:.4} (exact {:.4}, lenient {:.4}, excluding Format Error {:.4})",
                report.total,
                headline.0,
                headline.1,
                report.accuracy_exact,
                report.accuracy_lenient,
                report.accuracy_exact_excluding_format,
            );
            if !report.matches_reference_composition {
                println!(
                    "note: composition {:?} differs from the reference 25/25/25/25/100 gold set",
                    report.composition
                );
            }
            println!("wrote {}", out.join("calibration.json").display());
            Ok(())
        }
        Command::Audit {
            rollouts,
            out,
            model,
        } => {
            let summary = run_audit(&rollouts, model.into(), &out)?;
            println!(
                "audited {} responses: {} with calculator errors, {} wrong steps of {}, {} format errors",
                summary.responses,
                summary.responses_with_calculator_errors,
                summary.wrong_steps,
                summary.total_steps,
                summary.format_errors,
            );
            println!("wrote {}", out.join("audit.jsonl").display());
            println!("wrote {}", out.join("audit_summary.json").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
