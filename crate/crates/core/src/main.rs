use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hotline_risk::evaluation::EvalMode;
use hotline_risk::pipeline::io::{
    read_cases, read_jsonl, write_jsonl, CaseLine, PredictionLine, StreamLine, ASSESSMENTS_FILE, CASES_FILE,
    PREDICTIONS_FILE, STREAMS_FILE,
};
use hotline_risk::pipeline::run::{assess_all, eval_rows, predict_all, report_table, summarize_all, write_reports};
use hotline_risk::pipeline::{gen_corpus, run_all, PipelineConfig, PipelineError, Runtime, EXIT_VALIDATION};
use hotline_risk::predictor::PredictionMode;

#[derive(Parser)]
#[command(
    name = "hotline-risk",
    version,
    about = "Suicide-risk assessment for support-hotline transcripts"
)]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    #[arg(long)]
    input: PathBuf,
    /// Output directory; `io.output_dir` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Transcripts to summary streams.
    Summarize {
        #[command(flatten)]
        io: Io,
    },
    /// Summary streams to risk predictions.
    Predict {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        mode: Option<PredictionMode>,
    },
    /// Scale records to scale results, fused with predictions when given.
    Assess {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Predictions and outcomes to a metric report.
    Evaluate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long = "eval-mode")]
        eval_mode: Option<EvalMode>,
        /// Bootstrap seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize, predict, assess and evaluate in one go.
    Run {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        mode: Option<PredictionMode>,
        #[arg(long = "eval-mode")]
        eval_mode: Option<EvalMode>,
        /// Bootstrap seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic `cases.jsonl`.
    GenCorpus {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
}

fn out_dir(cfg: &PipelineConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.io.output_dir.clone())
}

fn report_written(path: &Path, n: usize) {
    println!("wrote {n} records to {}", path.display());
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };

    match cli.command {
        Command::GenCorpus { out, seed, n } => {
            cfg.corpus.seed = seed.unwrap_or(cfg.corpus.seed);
            cfg.corpus.n_cases = n.unwrap_or(cfg.corpus.n_cases);
            cfg.validate()?;
            let path = out_dir(&cfg, out).join(CASES_FILE);
            let lines: Vec<CaseLine> = gen_corpus(&cfg.corpus).iter().map(CaseLine::from).collect();
            write_jsonl(&path, &lines)?;
            report_written(&path, lines.len());
        }
        Command::Summarize { io } => {
            let rt = Runtime::from_config(&cfg)?;
            let cases = read_cases(&io.input)?;
            let path = out_dir(&cfg, io.out).join(STREAMS_FILE);
            let streams = summarize_all(&cases, &rt, Some(&path))?;
            report_written(&path, streams.len());
        }
        Command::Predict { io, mode } => {
            cfg.predict.mode = mode.unwrap_or(cfg.predict.mode);
            let rt = Runtime::from_config(&cfg)?;
            let streams: Vec<StreamLine> = read_jsonl(&io.input)?;
            let path = out_dir(&cfg, io.out).join(PREDICTIONS_FILE);
            let preds = predict_all(&streams, &rt, Some(&path))?;
            report_written(&path, preds.len());
        }
        Command::Assess { io, predictions } => {
            let rt = Runtime::from_config(&cfg)?;
            let cases = read_cases(&io.input)?;
            let preds: Option<Vec<PredictionLine>> = predictions.as_deref().map(read_jsonl).transpose()?;
            let path = out_dir(&cfg, io.out).join(ASSESSMENTS_FILE);
            let lines = assess_all(&cases, preds.as_deref(), &rt, Some(&path))?;
            report_written(&path, lines.len());
        }
        Command::Evaluate {
            io,
            predictions,
            eval_mode,
            seed,
        } => {
            cfg.evaluation.mode = eval_mode.unwrap_or(cfg.evaluation.mode);
            cfg.evaluation.seed = seed.unwrap_or(cfg.evaluation.seed);
            let rt = Runtime::from_config(&cfg)?;
            let cases = read_cases(&io.input)?;
            let preds: Vec<PredictionLine> = read_jsonl(&predictions)?;
            let rows = eval_rows(&cases, &preds)?;
            let dir = out_dir(&cfg, io.out);
            write_reports(&rows, rt.eval_mode, &rt, &dir)?;
            print!("{}", report_table(&rows, &rt));
        }
        Command::Run {
            io,
            mode,
            eval_mode,
            seed,
        } => {
            cfg.predict.mode = mode.unwrap_or(cfg.predict.mode);
            cfg.evaluation.mode = eval_mode.unwrap_or(cfg.evaluation.mode);
            cfg.evaluation.seed = seed.unwrap_or(cfg.evaluation.seed);
            let rt = Runtime::from_config(&cfg)?;
            let cases = read_cases(&io.input)?;
            let dir = out_dir(&cfg, io.out);
            let output = run_all(&cases, &rt, &dir)?;
            let rows = eval_rows(&cases, &output.predictions)?;
            print!("{}", report_table(&rows, &rt));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": "usage",
                "message": e.kind().to_string(),
                "exit_code": EXIT_VALIDATION,
            });
            let _ = e.print();
            eprintln!("{record}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
