//! `cafie`: fair decoding, n-gram training and bias evaluation from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input,
//! 3 backend failure. Primary output goes to stdout, diagnostics to stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use cafie_core::backend::{
    vocab_path_for, LanguageModel, NgramModel, RemoteModel, MAX_ORDER, MIN_ORDER,
};
use cafie_core::calibrator::{CalibrationParams, CombineMode, InterWeighting, WeightFn};
use cafie_core::decoder::{DecodeSession, PrefixMode, Refresh, Sampling};
use cafie_core::eval::{self, BenchRow, EvalReport, SweepParam, SweepRow, SweepTarget};
use cafie_core::lexicon::AttributeLexicon;
use cafie_core::sentiment::SentimentLexicon;
use cafie_core::synthetic::{self, SyntheticConfig, SYNTHETIC_K, SYNTHETIC_ORDER};
use cafie_core::text::Vocabulary;
use cafie_core::CafieError;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Every tenth corpus line is held out when no held-out file is given.
const HELDOUT_STRIDE: usize = 10;

#[derive(Parser, Debug)]
#[command(
    name = "cafie",
    version,
    about = "Counterfactually calibrated fair decoding and bias evaluation"
)]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a continuation of a prompt.
    Decode(DecodeArgs),
    /// Train an n-gram model and its vocabulary from a text corpus.
    TrainNgram(TrainArgs),
    /// Score a benchmark and write an evaluation report.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
    /// Measure backend calls and throughput, base versus calibrated.
    Bench(BenchArgs),
    /// Convert an upstream benchmark release to normalized JSONL.
    Convert(ConvertArgs),
    /// Write the synthetic stereotype corpus, benchmarks and lexicon.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct SessionArgs {
    /// `ngram:<model path>` or `http:<url>`.
    #[arg(long)]
    backend: String,
    /// Vocabulary file (required for http backends; n-gram models find theirs beside the model).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Attribute lexicon JSON (default: the built-in starter lexicon).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Upper bound on counterfactuals per context (default: all).
    #[arg(long)]
    max_counterfactuals: Option<usize>,
    #[arg(long, default_value = "tanh")]
    weight_fn: WeightFn,
    #[arg(long, default_value = "cafie")]
    combine_mode: CombineMode,
    #[arg(long, default_value = "elementwise")]
    inter_weighting: InterWeighting,
    /// `greedy`, `multinomial`, `top_k:K` or `nucleus:P`.
    #[arg(long, default_value = "greedy")]
    sampling: Sampling,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_tokens: usize,
    #[arg(long, default_value = "none")]
    prefix_mode: PrefixMode,
    #[arg(long, default_value = "static")]
    refresh: Refresh,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    prompt: String,
    #[command(flatten)]
    session: SessionArgs,
    /// Write the generation and its per-step trace as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Plain text, one document per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Model output path; the vocabulary is written beside it with extension `.vocab`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    k: f64,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Held-out text for perplexity (default: every tenth corpus line, excluded from training).
    #[arg(long)]
    heldout: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Full JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `metric,value` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    Stereoset {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    Crows {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    Bold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        generations: usize,
        /// Sentiment lexicon TSV (default: the built-in one).
        #[arg(long)]
        sentiment_lexicon: Option<PathBuf>,
        /// Per-group negative/neutral/positive fractions as CSV.
        #[arg(long)]
        plot_csv: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    Fluency {
        /// Plain text, one line per sequence; scored by the raw backend.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// lambda, alpha or temperature.
    #[arg(long)]
    param: SweepParam,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    stereoset: Option<PathBuf>,
    #[arg(long)]
    crows: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Prompts, one per line.
    #[arg(long)]
    prompts: PathBuf,
    /// Counterfactual caps to compare; 0 is the uncalibrated base.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    caps: Vec<usize>,
    #[command(flatten)]
    session: SessionArgs,
    /// CSV output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ReleaseFormat {
    /// StereoSet release JSON.
    Stereoset,
    /// CrowS-Pairs release CSV.
    Crows,
    /// BOLD prompt JSON for one domain.
    Bold,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    format: ReleaseFormat,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// BOLD domain name (default: the input file stem up to `_prompt`).
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also train the matching n-gram model as `model.bin`.
    #[arg(long)]
    train: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (`| head`) is not a failure
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        let io = match cause.downcast_ref::<io::Error>() {
            Some(io) => Some(io),
            None => match cause.downcast_ref::<CafieError>() {
                Some(CafieError::Io(io)) => Some(io),
                _ => None,
            },
        };
        io.is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn out_line(line: &str) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CafieError>() {
        Some(c) if c.is_config() => 2,
        Some(c) if c.is_backend() => 3,
        _ if e.downcast_ref::<ConfigError>().is_some() => 2,
        _ => 1,
    }
}

/// Names the offending flag for parameter errors.
fn describe(e: &anyhow::Error) -> String {
    match e.downcast_ref::<CafieError>() {
        Some(CafieError::InvalidParameter { name, message }) => {
            format!("--{}: {message}", name.replace('_', "-"))
        }
        _ => format!("{e:#}"),
    }
}

/// Bad flags or inputs detected by the CLI itself.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(message.into()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(config_error("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Decode(args) => cmd_decode(args),
        Command::TrainNgram(args) => cmd_train(args),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

// ---- session plumbing ----

enum BackendSpec {
    Ngram(PathBuf),
    Http(String),
}

fn parse_backend(spec: &str) -> anyhow::Result<BackendSpec> {
    if let Some(path) = spec.strip_prefix("ngram:") {
        if path.is_empty() {
            return Err(config_error("--backend ngram: needs a model path"));
        }
        return Ok(BackendSpec::Ngram(PathBuf::from(path)));
    }
    if spec.starts_with("http://") {
        return Ok(BackendSpec::Http(spec.to_string()));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        let url = if rest.starts_with("http://") {
            rest.to_string()
        } else {
            format!("http://{}", rest.trim_start_matches('/'))
        };
        return Ok(BackendSpec::Http(url));
    }
    Err(config_error(format!(
        "--backend `{spec}` is neither ngram:<path> nor http:<url>"
    )))
}

fn load_backend(args: &SessionArgs) -> anyhow::Result<Arc<dyn LanguageModel>> {
    Ok(match parse_backend(&args.backend)? {
        BackendSpec::Ngram(path) => {
            let model = match &args.vocab {
                Some(v) => NgramModel::from_bytes(&read_bytes(&path)?, Vocabulary::load(v)?)?,
                None => NgramModel::load(&path)?,
            };
            Arc::new(model)
        }
        BackendSpec::Http(url) => {
            let vocab_path = args
                .vocab
                .as_ref()
                .ok_or_else(|| config_error("--vocab is required for http backends"))?;
            Arc::new(RemoteModel::connect(&url, Vocabulary::load(vocab_path)?)?)
        }
    })
}

fn read_bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn params_of(args: &SessionArgs) -> anyhow::Result<CalibrationParams> {
    let params = CalibrationParams {
        lambda: args.lambda,
        alpha: args.alpha,
        temperature: args.temperature,
        max_counterfactuals: args.max_counterfactuals.unwrap_or(usize::MAX),
        weight_fn: args.weight_fn,
        combine_mode: args.combine_mode,
        inter_weighting: args.inter_weighting,
    };
    params.validate()?;
    Ok(params)
}

/// Validates every flag before touching the backend, so configuration errors
/// are reported as such even when the backend is also unreachable.
fn build_session(args: &SessionArgs) -> anyhow::Result<DecodeSession> {
    let params = params_of(args)?;
    if args.max_tokens == 0 {
        return Err(CafieError::InvalidParameter {
            name: "max_tokens".into(),
            message: "must be at least 1".into(),
        }
        .into());
    }
    parse_backend(&args.backend)?;
    let lexicon = match &args.lexicon {
        Some(path) => AttributeLexicon::load(path)?,
        None => AttributeLexicon::starter(),
    };
    let backend = load_backend(args)?;
    let session = DecodeSession::new(backend, Arc::new(lexicon))
        .with_params(params)
        .with_sampling(args.sampling)
        .with_seed(args.seed)
        .with_max_tokens(args.max_tokens)
        .with_prefix_mode(args.prefix_mode)
        .with_refresh(args.refresh);
    session.validate()?;
    Ok(session)
}

fn write_output(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut file = io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            );
            write(&mut file)?;
            file.flush()?;
            eprintln!("wrote {}", p.display());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

// ---- commands ----

fn cmd_decode(args: DecodeArgs) -> anyhow::Result<()> {
    let session = build_session(&args.session)?;
    let generation = session.generate(&args.prompt)?;
    out_line(&generation.text)?;
    if let Some(path) = &args.trace {
        write_file(path, &serde_json::to_string_pretty(&generation)?)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&args.order) {
        return Err(CafieError::InvalidParameter {
            name: "order".into(),
            message: format!("must lie in 2..=5, got {}", args.order),
        }
        .into());
    }
    let text = read_text(&args.corpus)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let heldout_text;
    let (train, heldout): (Vec<&str>, Vec<&str>) = match &args.heldout {
        Some(path) => {
            heldout_text = read_text(path)?;
            (lines, heldout_text.lines().collect())
        }
        None => {
            let (h, t): (Vec<_>, Vec<_>) = lines
                .iter()
                .enumerate()
                .partition(|(i, _)| i % HELDOUT_STRIDE == HELDOUT_STRIDE - 1);
            (
                t.into_iter().map(|(_, l)| *l).collect(),
                h.into_iter().map(|(_, l)| *l).collect(),
            )
        }
    };
    let model =
        NgramModel::train_with_vocab(train.iter().copied(), args.order, args.k, args.min_count)?;
    model.save(&args.out)?;
    eprintln!(
        "wrote {} and {}",
        args.out.display(),
        vocab_path_for(&args.out).display()
    );
    match eval::eval_fluency(heldout.iter().copied(), &model) {
        Ok(f) => out_line(&format!(
            "heldout_perplexity\t{}\t({} lines, {} tokens)",
            f.perplexity, f.lines, f.tokens
        ))?,
        Err(CafieError::EmptyDataset(_)) => eprintln!("no held-out text; perplexity not computed"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn emit_report(report: &EvalReport, args: &ReportArgs) -> anyhow::Result<()> {
    match &args.out {
        Some(p) => write_file(p, &report.to_json())?,
        None => out_line(&report.to_json())?,
    }
    if let Some(p) = &args.csv {
        write_output(Some(p), |w| Ok(report.write_csv(w)?))?;
    }
    Ok(())
}

fn cmd_eval(cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Stereoset {
            data,
            session,
            report,
        } => {
            let s = build_session(&session)?;
            let instances = eval::load_stereoset(&data)?;
            let mut r = EvalReport::new(&s);
            r.stereoset = Some(eval::eval_stereoset(&instances, &s)?);
            emit_report(&r, &report)
        }
        EvalCommand::Crows {
            data,
            session,
            report,
        } => {
            let s = build_session(&session)?;
            let pairs = eval::load_crows(&data)?;
            let mut r = EvalReport::new(&s);
            r.crows = Some(eval::eval_crows(&pairs, &s)?);
            emit_report(&r, &report)
        }
        EvalCommand::Bold {
            data,
            generations,
            sentiment_lexicon,
            plot_csv,
            session,
            report,
        } => {
            if generations == 0 {
                return Err(config_error("--generations must be at least 1"));
            }
            let s = build_session(&session)?;
            let prompts = eval::load_bold(&data)?;
            let sentiment = match &sentiment_lexicon {
                Some(p) => SentimentLexicon::load(p)?,
                None => SentimentLexicon::starter(),
            };
            let bold = eval::eval_bold(&prompts, &s, generations, &sentiment)?;
            if let Some(p) = &plot_csv {
                write_output(Some(p), |w| Ok(bold.write_plot_csv(w)?))?;
            }
            let mut r = EvalReport::new(&s);
            r.bold = Some(bold);
            emit_report(&r, &report)
        }
        EvalCommand::Fluency {
            data,
            session,
            report,
        } => {
            let s = build_session(&session)?;
            let text = read_text(&data)?;
            let mut r = EvalReport::new(&s);
            r.fluency = Some(eval::eval_fluency(text.lines(), s.backend().as_ref())?);
            emit_report(&r, &report)
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let grid = eval::parse_grid(&args.grid)?;
    if args.stereoset.is_none() && args.crows.is_none() {
        return Err(config_error("sweep needs --stereoset and/or --crows"));
    }
    let session = build_session(&args.session)?;
    let target = SweepTarget {
        stereoset: args
            .stereoset
            .as_deref()
            .map(eval::load_stereoset)
            .transpose()?
            .unwrap_or_default(),
        crows: args
            .crows
            .as_deref()
            .map(eval::load_crows)
            .transpose()?
            .unwrap_or_default(),
    };
    let rows = eval::sweep(args.param, &grid, &target, &session)?;
    write_output(args.out.as_deref(), |w| Ok(SweepRow::write_csv(&rows, w)?))
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    if args.caps.is_empty() {
        return Err(config_error("--caps needs at least one value"));
    }
    let session = build_session(&args.session)?;
    let prompts: Vec<String> = read_text(&args.prompts)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let rows = eval::bench(&prompts, &session, &args.caps)?;
    write_output(args.out.as_deref(), |w| Ok(BenchRow::write_csv(&rows, w)?))
}

fn cmd_convert(args: ConvertArgs) -> anyhow::Result<()> {
    use cafie_core::eval::convert;
    let input = read_text(&args.input)?;
    let jsonl = match args.format {
        ReleaseFormat::Stereoset => eval::to_jsonl(&convert::stereoset_from_release(&input)?),
        ReleaseFormat::Crows => eval::to_jsonl(&convert::crows_from_release(&input)?),
        ReleaseFormat::Bold => {
            let domain = match args.domain {
                Some(d) => d,
                None => default_domain(&args.input)?,
            };
            eval::to_jsonl(&convert::bold_from_release(&input, &domain)?)
        }
    };
    write_file(&args.output, &jsonl)?;
    out_line(&jsonl.lines().count().to_string())?;
    Ok(())
}

fn default_domain(path: &Path) -> anyhow::Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("cannot derive a domain from {}", path.display()))?;
    Ok(stem.split("_prompt").next().unwrap_or(stem).to_string())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let dir = &args.out_dir;
    let corpus = synthetic::corpus(&cfg);
    let mut corpus_text = corpus.join("\n");
    corpus_text.push('\n');
    write_file(&dir.join("corpus.txt"), &corpus_text)?;
    write_file(
        &dir.join("stereoset.jsonl"),
        &eval::to_jsonl(&synthetic::stereoset(&cfg)),
    )?;
    write_file(
        &dir.join("crows.jsonl"),
        &eval::to_jsonl(&synthetic::crows()),
    )?;
    write_file(&dir.join("bold.jsonl"), &eval::to_jsonl(&synthetic::bold()))?;
    write_file(&dir.join("lexicon.json"), &synthetic::lexicon()?.to_json())?;
    if args.train {
        let model = NgramModel::train_with_vocab(
            corpus.iter().map(String::as_str),
            SYNTHETIC_ORDER,
            SYNTHETIC_K,
            1,
        )?;
        let path = dir.join("model.bin");
        model.save(&path)?;
        eprintln!(
            "wrote {} and {}",
            path.display(),
            vocab_path_for(&path).display()
        );
    }
    Ok(())
}
