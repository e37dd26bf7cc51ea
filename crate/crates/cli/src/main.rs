use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qseq_core::difficulty::DifficultyWeights;
use qseq_core::harness::{
    self, make_cases, read_report_csv, run_comparison, summary_text, write_bench_outputs, write_sweep_outputs,
    ComparisonOptions, DatasetSource, DatasetSpec, EduRankRanker, KddOptions, NcfRanker, Protocol, SweepGrid,
    SweepOptions, SyntheticSpec,
};
use qseq_core::ncf::{Activation, NcfConfig};
use qseq_core::Parallelism;

/// Personalized question sequencing: EduRank vs neural collaborative
/// filtering on held-out questionnaires.
#[derive(Parser, Debug)]
#[command(name = "qseq", version)]
struct Cli {
    /// Execution mode for data-parallel work: `parallel` or `sequential`.
    #[arg(long, global = true, default_value_t = Parallelism::default())]
    parallelism: Parallelism,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a KDD-style export and optionally convert it to CSV.
    Ingest(IngestArgs),
    /// Compare NCF and EduRank on held-out questionnaires.
    Bench(BenchArgs),
    /// Evaluate NCF over a grid of activation, k and depth.
    Sweep(SweepArgs),
    /// Recompute paired t-tests from a report.csv.
    Ttest(TtestArgs),
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Tab-separated KDD-Algebra-style step export.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,

    /// Use the latent-factor generator instead of a file.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[command(flatten)]
    source: SourceArgs,

    /// Column used as questionnaire identity.
    #[arg(long, default_value = "Problem Hierarchy")]
    questionnaire_column: String,

    /// Fraction of malformed rows tolerated.
    #[arg(long, default_value_t = 0.01)]
    malformed_threshold: f64,

    /// Keep a seeded random subset of this many attempts.
    #[arg(long)]
    max_attempts: Option<usize>,

    #[arg(long, default_value_t = 30)]
    syn_students: usize,

    #[arg(long, default_value_t = 40)]
    syn_questions: usize,

    #[arg(long, default_value_t = 4)]
    syn_questionnaires: usize,

    #[arg(long, default_value_t = 3)]
    syn_latent_dim: usize,

    /// Standard deviation of the generator's latent noise.
    #[arg(long, default_value_t = 0.05)]
    syn_noise: f64,
}

impl DataArgs {
    fn spec(&self, seed: u64) -> DatasetSpec {
        let source = match &self.source.data {
            Some(path) => DatasetSource::Kdd {
                path: path.clone(),
                options: KddOptions {
                    questionnaire_column: self.questionnaire_column.clone(),
                    malformed_threshold: self.malformed_threshold,
                },
            },
            None => DatasetSource::Synthetic(SyntheticSpec {
                students: self.syn_students,
                questions: self.syn_questions,
                questionnaires: self.syn_questionnaires,
                latent_dim: self.syn_latent_dim,
                noise: self.syn_noise,
                seed,
            }),
        };
        DatasetSpec {
            source,
            max_attempts: self.max_attempts,
            sample_seed: seed,
        }
    }
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    /// Students sampled for evaluation.
    #[arg(long, default_value_t = 3)]
    students: usize,

    /// Questionnaires held out per sampled student.
    #[arg(long, default_value_t = 4)]
    questionnaires: usize,

    /// Seed for data generation, sampling and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Significance level of the paired t-tests.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct NcfArgs {
    #[arg(long, default_value_t = 40)]
    k: usize,

    #[arg(long, default_value_t = 1)]
    layers: usize,

    #[arg(long, default_value_t = Activation::Tanh)]
    activation: Activation,

    #[arg(long, default_value_t = 0.25)]
    dropout: f64,

    #[arg(long, default_value_t = 1024)]
    batch_size: usize,

    #[arg(long, default_value_t = 20)]
    epochs: usize,
}

impl NcfArgs {
    fn config(&self, seed: u64) -> NcfConfig {
        NcfConfig {
            k: self.k,
            layers: self.layers,
            activation: self.activation,
            dropout_rate: self.dropout,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the parsed attempts as CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    protocol: ProtocolArgs,

    #[command(flatten)]
    ncf: NcfArgs,

    /// Neighbors consulted by EduRank.
    #[arg(long, default_value_t = 5)]
    memory_size: usize,

    /// Directory for report.csv, means.csv, ttest.csv and summary.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Save each fold's trained NCF model here.
    #[arg(long, value_name = "DIR")]
    checkpoints: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    protocol: ProtocolArgs,

    #[command(flatten)]
    ncf: NcfArgs,

    /// Embedding sizes as `start:end:step` (inclusive) or a single value.
    #[arg(long, default_value = "20:80:20", value_parser = parse_range)]
    k_range: KRange,

    /// Comma-separated hidden-layer counts.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
    layer_set: Vec<usize>,

    /// Comma-separated activations.
    #[arg(long, value_delimiter = ',', default_value = "tanh,linear,relu")]
    activation_set: Vec<Activation>,

    /// Run grid points concurrently; wall-times are then flagged as not
    /// comparable.
    #[arg(long)]
    parallel_points: bool,

    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TtestArgs {
    /// A report.csv written by `bench`.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Debug, Clone)]
struct KRange(Vec<usize>);

fn parse_range(text: &str) -> Result<KRange, String> {
    let parts: Vec<usize> = text
        .split(':')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let (start, end, step) = match parts[..] {
        [v] => (v, v, 1),
        [a, b] => (a, b, 1),
        [a, b, s] => (a, b, s),
        _ => return Err("expected start:end[:step]".into()),
    };
    if step == 0 || start > end {
        return Err(format!("empty range {text}"));
    }
    Ok(KRange((start..=end).step_by(step).collect()))
}

fn load(data: &DataArgs, seed: u64) -> Result<Vec<qseq_core::AnswerAttempt>> {
    let spec = data.spec(seed);
    let ingested = harness::ingest(&spec).with_context(|| match &spec.source {
        DatasetSource::Kdd { path, .. } => format!("reading {}", path.display()),
        DatasetSource::Synthetic(_) => "generating synthetic data".into(),
    })?;
    let s = &ingested.summary;
    log::info!(
        "{} attempts ({} rows, {} malformed, {} missing durations, {} capped)",
        ingested.attempts.len(),
        s.rows_read,
        s.malformed,
        s.missing_durations,
        s.capped
    );
    Ok(ingested.attempts)
}

fn protocol(data: &DataArgs, args: &ProtocolArgs) -> Result<Protocol> {
    let attempts = load(data, args.seed)?;
    if attempts.is_empty() {
        bail!("dataset has no attempts");
    }
    Ok(make_cases(
        &attempts,
        args.students,
        args.questionnaires,
        args.seed,
        &DifficultyWeights::default(),
    )?)
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let attempts = load(&args.data, args.seed)?;
    let students: std::collections::BTreeSet<_> = attempts.iter().map(|a| &a.student).collect();
    let questions: std::collections::BTreeSet<_> = attempts.iter().map(|a| &a.question).collect();
    let units: std::collections::BTreeSet<_> = attempts.iter().map(|a| &a.questionnaire).collect();
    println!(
        "{} attempts, {} students, {} questions, {} questionnaires",
        attempts.len(),
        students.len(),
        questions.len(),
        units.len()
    );
    if let Some(out) = &args.out {
        let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        harness::write_attempts_csv(std::io::BufWriter::new(file), &attempts)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn bench(args: &BenchArgs, mode: Parallelism) -> Result<()> {
    let protocol = protocol(&args.data, &args.protocol)?;
    let mut ncf = NcfRanker::new(args.ncf.config(args.protocol.seed));
    if let Some(dir) = &args.checkpoints {
        ncf = ncf.with_checkpoints(dir);
    }
    let mut edurank = EduRankRanker::new(args.memory_size);
    let options = ComparisonOptions {
        weights: DifficultyWeights::default(),
        alpha: args.protocol.alpha,
        parallelism: mode,
    };
    let report = run_comparison(&protocol, &mut [&mut ncf, &mut edurank], &options);
    print!("{}", summary_text(&report));
    report_paths(&write_bench_outputs(&args.out, &report)?);
    Ok(())
}

fn sweep(args: &SweepArgs, mode: Parallelism) -> Result<()> {
    let protocol = protocol(&args.data, &args.protocol)?;
    let grid = SweepGrid {
        activations: args.activation_set.clone(),
        ks: args.k_range.0.clone(),
        layers: args.layer_set.clone(),
    };
    let options = SweepOptions {
        base: args.ncf.config(args.protocol.seed),
        comparison: ComparisonOptions {
            weights: DifficultyWeights::default(),
            alpha: args.protocol.alpha,
            parallelism: mode,
        },
        parallel_points: args.parallel_points,
    };
    let report = harness::sweep(&protocol, &grid, &options)?;
    println!("{:<8} {:>4} {:>6} {:>8} {:>8} {:>12}", "act", "k", "layers", "SAP", "SR", "train_ms");
    for r in &report.rows {
        match &r.outcome {
            Ok(m) => println!(
                "{:<8} {:>4} {:>6} {:>8.4} {:>8.4} {:>12.1}",
                r.activation, r.k, r.layers, m.mean_sap, m.mean_sr, r.train_wall_ms
            ),
            Err(e) => println!("{:<8} {:>4} {:>6} failed: {e}", r.activation, r.k, r.layers),
        }
    }
    report_paths(&write_sweep_outputs(&args.out, &report)?);
    Ok(())
}

fn ttest(args: &TtestArgs) -> Result<()> {
    let file = open(&args.report)?;
    let report = read_report_csv(file, args.alpha)?;
    print!("{}", summary_text(&report));
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Bench(args) => bench(args, cli.parallelism),
        Command::Sweep(args) => sweep(args, cli.parallelism),
        Command::Ttest(args) => ttest(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
