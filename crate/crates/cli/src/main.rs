use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use surpsel_core::eval::{CellKey, FeatureKind, MetricsReport};
use surpsel_core::model::OutputKind;
use surpsel_core::pipeline::{self, Pipeline, RunConfig};
use surpsel_core::{Criterion, Mode};

/// Word-informativeness segment selection for speech emotion recognition.
///
/// Settings come from a TOML file (`--config`) with sections [paths],
/// [grid], [acoustics], [model] and [eval]; every key can be overridden by
/// the flag of the same name, and flags win.
#[derive(Debug, Parser)]
#[command(name = "surpsel", version)]
struct Cli {
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-utterance and per-fold work [default: logical cores].
    #[arg(long, global = true, env = "SURPSEL_JOBS")]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the corpus; writes corpus.jsonl.
    Prepare,
    /// Per-word unigram and language-model scores; writes scores.jsonl.
    Score,
    /// Span selections for every grid cell; writes selections.jsonl.
    Select,
    /// Frame-level acoustic descriptors into the on-disk cache.
    Extract,
    /// Pooled features of a single cell as CSV.
    Pool,
    /// Train a single cell on one fold and save the checkpoint.
    Train {
        /// Fold to train, 1-based.
        #[arg(long, default_value_t = 1)]
        fold: usize,
    },
    /// Evaluate a saved checkpoint on its fold's test speakers.
    Evaluate {
        /// Fold to evaluate, 1-based.
        #[arg(long, default_value_t = 1)]
        fold: usize,
        /// Checkpoint file [default: the one `train` writes for this cell and fold].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// The full pipeline over the whole grid, then the report files.
    Run,
    /// Re-emit the report tables from a finished run.
    Report,
}

/// Config overrides. Defaults are listed per key.
#[derive(Debug, Args)]
struct Overrides {
    /// [paths] Directory of RAVDESS-named .wav files.
    #[arg(long, global = true, help_heading = "Paths")]
    audio_dir: Option<PathBuf>,
    /// [paths] Word alignment JSONL.
    #[arg(long, global = true, help_heading = "Paths")]
    alignments: Option<PathBuf>,
    /// [paths] Token-score JSONL; needed by llm_sr and rank.
    #[arg(long, global = true, help_heading = "Paths")]
    token_scores: Option<PathBuf>,
    /// [paths] Unigram counts, word<TAB>count per line.
    #[arg(long, global = true, help_heading = "Paths")]
    counts_file: Option<PathBuf>,
    /// [paths] Directory of <id>.sfv frame embeddings.
    #[arg(long, global = true, help_heading = "Paths")]
    embeddings_dir: Option<PathBuf>,
    /// [paths] Output directory [default: out].
    #[arg(long, global = true, help_heading = "Paths")]
    out_dir: Option<PathBuf>,

    /// [grid] Feature kinds, comma separated [default: functionals,embeddings].
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Grid")]
    feature_kinds: Option<Vec<FeatureKind>>,
    /// [grid] Criteria, comma separated [default: unigram_sr,llm_sr,rank].
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Grid")]
    criteria: Option<Vec<Criterion>>,
    /// [grid] Modes: top_n, independent_n, baseline (full utterance) [default: top_n,independent_n,full_utterance].
    #[arg(long = "mode", alias = "modes", global = true, value_delimiter = ',', help_heading = "Grid")]
    modes: Option<Vec<Mode>>,
    /// [grid] Word counts n, comma separated [default: 1,2,3,4,5,6].
    #[arg(long = "n", alias = "n-values", global = true, value_delimiter = ',', help_heading = "Grid")]
    n_values: Option<Vec<usize>>,

    /// [acoustics] Lowest pitch searched, Hz [default: 60].
    #[arg(long, global = true, help_heading = "Acoustics")]
    f0_min_hz: Option<f64>,
    /// [acoustics] Highest pitch searched, Hz [default: 500].
    #[arg(long, global = true, help_heading = "Acoustics")]
    f0_max_hz: Option<f64>,
    /// [acoustics] Normalized autocorrelation needed to call a frame voiced [default: 0.45].
    #[arg(long, global = true, help_heading = "Acoustics")]
    voicing_threshold: Option<f64>,
    /// [acoustics] FFT length [default: 512].
    #[arg(long, global = true, help_heading = "Acoustics")]
    fft_size: Option<usize>,
    /// [acoustics] Mel filters [default: 26].
    #[arg(long, global = true, help_heading = "Acoustics")]
    n_mel: Option<usize>,
    /// [acoustics] Cepstral coefficients kept [default: 13].
    #[arg(long, global = true, help_heading = "Acoustics")]
    n_mfcc: Option<usize>,

    /// [model] Hidden layer widths [default: 256,128,64,32].
    #[arg(long, global = true, value_delimiter = ',', help_heading = "Model")]
    hidden: Option<Vec<usize>>,
    /// [model] Dropout probability [default: 0.1].
    #[arg(long, global = true, help_heading = "Model")]
    dropout_p: Option<f64>,
    /// [model] Adam learning rate [default: 0.0001].
    #[arg(long, global = true, help_heading = "Model")]
    lr: Option<f64>,
    /// [model] Mini-batch size [default: 200].
    #[arg(long, global = true, help_heading = "Model")]
    batch_size: Option<usize>,
    /// [model] Training epochs [default: 100].
    #[arg(long, global = true, help_heading = "Model")]
    epochs: Option<usize>,
    /// [model] Base training seed; fold k uses seed + k [default: 0].
    #[arg(long, global = true, help_heading = "Model")]
    seed: Option<u64>,
    /// [model] Output layer: sigmoid_bce or softmax_ce [default: sigmoid_bce].
    #[arg(long, global = true, value_parser = parse_output, help_heading = "Model")]
    output: Option<OutputKind>,
    /// [model] Adam first-moment decay [default: 0.9].
    #[arg(long, global = true, help_heading = "Model")]
    beta1: Option<f64>,
    /// [model] Adam second-moment decay [default: 0.999].
    #[arg(long, global = true, help_heading = "Model")]
    beta2: Option<f64>,
    /// [model] Adam epsilon [default: 0.00000001].
    #[arg(long, global = true, help_heading = "Model")]
    epsilon: Option<f64>,

    /// [eval] Cross-validation folds [default: 10].
    #[arg(long, global = true, help_heading = "Evaluation")]
    folds: Option<usize>,
    /// [eval] Shuffle the speaker pairing with this seed [default: none, sorted by id].
    #[arg(long, global = true, help_heading = "Evaluation")]
    fold_seed: Option<u64>,
}

fn parse_output(s: &str) -> Result<OutputKind, String> {
    match s {
        "sigmoid_bce" => Ok(OutputKind::SigmoidBce),
        "softmax_ce" => Ok(OutputKind::SoftmaxCe),
        _ => Err(format!("unknown output {s:?} (expected sigmoid_bce or softmax_ce)")),
    }
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        fn set<T>(slot: &mut T, v: Option<T>) {
            if let Some(v) = v {
                *slot = v;
            }
        }
        let p = &mut cfg.paths;
        for (slot, v) in [
            (&mut p.audio_dir, self.audio_dir),
            (&mut p.alignments, self.alignments),
            (&mut p.token_scores, self.token_scores),
            (&mut p.counts_file, self.counts_file),
            (&mut p.embeddings_dir, self.embeddings_dir),
        ] {
            if v.is_some() {
                *slot = v;
            }
        }
        set(&mut p.out_dir, self.out_dir);
        let g = &mut cfg.grid;
        set(&mut g.feature_kinds, self.feature_kinds);
        set(&mut g.criteria, self.criteria);
        set(&mut g.modes, self.modes);
        set(&mut g.n_values, self.n_values);
        let a = &mut cfg.acoustics;
        set(&mut a.f0_min_hz, self.f0_min_hz);
        set(&mut a.f0_max_hz, self.f0_max_hz);
        set(&mut a.voicing_threshold, self.voicing_threshold);
        set(&mut a.fft_size, self.fft_size);
        set(&mut a.n_mel, self.n_mel);
        set(&mut a.n_mfcc, self.n_mfcc);
        let m = &mut cfg.model;
        set(&mut m.hidden, self.hidden);
        set(&mut m.dropout_p, self.dropout_p);
        set(&mut m.lr, self.lr);
        set(&mut m.batch_size, self.batch_size);
        set(&mut m.epochs, self.epochs);
        set(&mut m.seed, self.seed);
        set(&mut m.output, self.output);
        set(&mut m.beta1, self.beta1);
        set(&mut m.beta2, self.beta2);
        set(&mut m.epsilon, self.epsilon);
        set(&mut cfg.eval.folds, self.folds);
        if self.fold_seed.is_some() {
            cfg.eval.fold_seed = self.fold_seed;
        }
    }
}

/// The one cell addressed by `pool`, `train` and `evaluate`.
fn single_cell(cfg: &RunConfig) -> Result<CellKey> {
    let g = &cfg.grid;
    let one = |name: &str, len: usize| -> Result<()> {
        if len != 1 {
            bail!("this command works on one cell: give exactly one --{name} (got {len})");
        }
        Ok(())
    };
    one("feature-kinds", g.feature_kinds.len())?;
    one("mode", g.modes.len())?;
    if g.modes[0] == Mode::FullUtterance {
        return Ok(CellKey {
            feature: g.feature_kinds[0],
            criterion: None,
            mode: Mode::FullUtterance,
            n: None,
        });
    }
    one("criteria", g.criteria.len())?;
    one("n", g.n_values.len())?;
    Ok(CellKey {
        feature: g.feature_kinds[0],
        criterion: Some(g.criteria[0]),
        mode: g.modes[0],
        n: Some(g.n_values[0]),
    })
}

fn summarize(report: &MetricsReport) {
    for c in &report.cells {
        match (c.failed, c.accuracy, c.macro_f1) {
            (false, Some(acc), Some(f1)) => println!(
                "{:<40} acc {:6.2} ± {:5.2}  f1 {:6.2} ± {:5.2}  skipped {}",
                c.key.to_string(),
                100.0 * acc.mean,
                100.0 * acc.std,
                100.0 * f1.mean,
                100.0 * f1.std,
                c.skipped()
            ),
            _ => {
                let reason = c.folds.iter().find_map(|f| f.error.as_deref()).unwrap_or("unknown");
                println!("{:<40} FAILED: {reason}", c.key.to_string());
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);

    if let Command::Report = cli.command {
        let dir = cfg.paths.out_dir.join("report");
        for path in pipeline::rerender_report(&dir)? {
            println!("{}", path.display());
        }
        let report: MetricsReport = load_report(&dir)?;
        return Ok(exit_for(&report));
    }

    let p = Pipeline::new(cfg)?;
    match cli.command {
        Command::Prepare => {
            let utts = p.prepare()?;
            println!("{} utterances -> {}", utts.len(), p.out_dir().join("corpus.jsonl").display());
        }
        Command::Score => {
            let utts = p.prepare()?;
            let words = p.score(&utts)?;
            println!("{} records -> {}", words.len(), p.out_dir().join("scores.jsonl").display());
        }
        Command::Select => {
            let utts = p.prepare()?;
            let words = p.score(&utts)?;
            let stats = p.select(&utts, &words)?;
            println!(
                "{} selections ({} skipped) -> {}",
                stats.written,
                stats.skipped,
                p.out_dir().join("selections.jsonl").display()
            );
        }
        Command::Extract => {
            let utts = p.prepare()?;
            let frames = p.extract(&utts)?;
            println!("{} utterances, {} frames cached", frames.len(), frames.iter().map(|f| f.n_frames()).sum::<usize>());
        }
        Command::Pool => {
            let key = single_cell(&p.config)?;
            let data = p.experiment_data()?;
            let (path, skipped) = p.pool(&data, &key)?;
            println!("{key}: {} ({skipped} skipped)", path.display());
        }
        Command::Train { fold } => {
            let key = single_cell(&p.config)?;
            let data = p.experiment_data()?;
            let (path, record) = p.train(&data, &key, fold)?;
            println!(
                "{key} fold {fold}: final train loss {:.6} -> {}",
                record.train_loss.last().copied().unwrap_or(f64::NAN),
                path.display()
            );
        }
        Command::Evaluate { fold, checkpoint } => {
            let key = single_cell(&p.config)?;
            let data = p.experiment_data()?;
            let checkpoint = checkpoint.unwrap_or_else(|| p.checkpoint_path(&key, fold));
            let result = p.evaluate(&data, &key, fold, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Run => {
            let report = p.run()?;
            summarize(&report);
            println!("report -> {}", p.report_dir().display());
            return Ok(exit_for(&report));
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_report(dir: &std::path::Path) -> Result<MetricsReport> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn exit_for(report: &MetricsReport) -> ExitCode {
    if report.any_failed() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
