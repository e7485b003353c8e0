use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use graphret::adapter::{train_adapter, Query};
use graphret::gradsuite::{run_suite, GRAD_TOL};
use graphret::graph::synth::{gen_longtail_motif, gen_longtail_regression};
use graphret::graph::{write_jsonl, Dataset, Label, Split};
use graphret::index::FlatIndex;
use graphret::metrics::MetricsReport;
use graphret::pipeline::{
    adapter_checkpoint_path, baseline_majority, baseline_retrieval, evaluate, metrics_path, queries,
    report_from_predictions, train_phase1, train_two_phase, write_report, write_two_phase, Checkpoint, EvalMode,
    RunConfig, INDEX_FILE, MODEL_FILE,
};

#[derive(Parser)]
#[command(name = "graphret", version, about = "Retrieval-enhanced graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSONL plus its metadata sidecar.
    GenData(GenDataArgs),
    /// Train the GNN (phase 1), or the whole two-phase procedure.
    Train(TrainArgs),
    /// Embed the train split with the trained model and write the index.
    BuildIndex(RunArgs),
    /// Train retrieval adapters against the frozen model (phase 2).
    TrainAdapter(TrainAdapterArgs),
    /// Score a split in base, enhanced or averaging mode.
    Evaluate(EvaluateArgs),
    /// Score a split with nearest-neighbour label copying or majority voting.
    Baseline(BaselineArgs),
    /// Render metrics JSON files as tables.
    Report(ReportArgs),
    /// Finite-difference check of every differentiable component.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Motif,
    Regression,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    /// Output JSONL path; the sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    head: usize,
    #[arg(long, default_value_t = 5)]
    tail: usize,
    #[arg(long, default_value_t = 0.25)]
    tail_fraction: f64,
    /// Number of examples (regression).
    #[arg(long, default_value_t = 1000)]
    size: usize,
}

/// Overrides shared by the commands that read a run.
#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML). Defaults to the config stored in the run's model checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory. Defaults to `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Long-tail group boundaries, e.g. `100,500,1000,5000`.
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<usize>>,
    /// Regression bucket edges, e.g. `0,10,20,30`.
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Phase-1 seed; phase-2 run `s` uses `seed + s`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
    /// Also build the index and train every adapter.
    #[arg(long)]
    two_phase: bool,
}

#[derive(Args)]
struct TrainAdapterArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Train only this phase-2 seed instead of all configured ones.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "base")]
    mode: String,
    #[arg(long, default_value = "test")]
    split: String,
    /// Adapter seed for enhanced mode; all configured seeds when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report as JSON.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Neighbours voting; 1 copies the nearest label.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per component.
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::BuildIndex(a) => build_index(a),
        Command::TrainAdapter(a) => train_adapters(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::Report(a) => report(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let ds = match a.kind {
        DataKind::Motif => gen_longtail_motif(a.classes, a.head, a.tail, a.tail_fraction, a.seed)?,
        DataKind::Regression => gen_longtail_regression(a.seed, a.size)?,
    };
    write_jsonl(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} ({} train, {} valid, {} test)",
        a.out.display(),
        ds.train().len(),
        ds.valid().len(),
        ds.test().len()
    );
    Ok(())
}

fn apply_overrides(
    cfg: &mut RunConfig,
    k: Option<usize>,
    boundaries: Option<Vec<usize>>,
    edges: Option<Vec<f64>>,
) -> Result<()> {
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(b) = boundaries {
        cfg.boundaries = b;
    }
    if let Some(e) = edges {
        cfg.edges = e;
    }
    cfg.validate().context("invalid --k, --boundaries or --edges")?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.load_dataset()
        .with_context(|| format!("loading dataset {}", cfg.dataset.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("--config {}", a.config.display()))?;
    if let Some(out) = a.out {
        cfg.out = out;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    apply_overrides(&mut cfg, a.k, a.boundaries, a.edges)?;
    let ds = load_dataset(&cfg)?;
    let dir = cfg.out.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if a.two_phase {
        let outcome = train_two_phase(&ds, &cfg)?;
        eprintln!("index built {} time(s), {} entries", outcome.index_builds, outcome.index.len());
        write_two_phase(&dir, &outcome, &cfg)?;
        println!("base\n{}", outcome.base_test.render());
        println!("enhanced\n{}", outcome.enhanced_test.render());
        return Ok(());
    }
    let (model, stats) = train_phase1(&ds, &cfg)?;
    eprintln!("phase 1: best epoch {} of {}", stats.best_epoch, cfg.m1);
    let ck = Checkpoint {
        config: cfg.clone(),
        seed: cfg.seed,
        index_ref: INDEX_FILE.into(),
        model,
        adapter: None,
    };
    ck.save(&dir.join(MODEL_FILE))?;
    let test_q = queries(&ck.model, ds.test())?;
    let base = evaluate(&test_q, ds.task(), EvalMode::Base, None, None, &cfg, &ds.train_class_counts())?;
    write_report(&metrics_path(&dir, EvalMode::Base.as_str(), Some(cfg.seed)), &base)?;
    write_report(&metrics_path(&dir, EvalMode::Base.as_str(), None), &base)?;
    println!("{}", base.render());
    Ok(())
}

/// Run directory, configuration and model checkpoint of an existing run.
struct Run {
    dir: PathBuf,
    cfg: RunConfig,
    model: Checkpoint,
}

impl Run {
    fn open(a: RunArgs) -> Result<Self> {
        let from_file = match &a.config {
            Some(p) => Some(RunConfig::load(p).with_context(|| format!("--config {}", p.display()))?),
            None => None,
        };
        let dir = match (&a.out, &from_file) {
            (Some(d), _) => d.clone(),
            (None, Some(c)) => c.out.clone(),
            (None, None) => bail!("pass --out with the run directory or --config"),
        };
        let ck_path = dir.join(MODEL_FILE);
        let model = Checkpoint::load(&ck_path)
            .with_context(|| format!("model checkpoint {} (run `train` first)", ck_path.display()))?;
        let mut cfg = from_file.unwrap_or_else(|| model.config.clone());
        apply_overrides(&mut cfg, a.k, a.boundaries, a.edges)?;
        Ok(Self { dir, cfg, model })
    }

    fn index_path(&self) -> PathBuf {
        self.model.index_path(&self.dir.join(MODEL_FILE))
    }

    fn index(&self) -> Result<FlatIndex> {
        let path = self.index_path();
        if !path.exists() {
            bail!("index missing: run build-index first ({} not found)", path.display());
        }
        Ok(FlatIndex::load(&path)?)
    }

    fn queries(&self, ds: &Dataset, split: Split) -> Result<Vec<Query>> {
        Ok(queries(&self.model.model, ds.split(split))?)
    }

    fn phase2_seeds(&self, only: Option<u64>) -> Vec<u64> {
        match only {
            Some(s) => vec![s],
            None => (0..self.cfg.seeds).map(|s| self.cfg.phase2_seed(s)).collect(),
        }
    }
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse::<Split>().context("--split")
}

fn build_index(a: RunArgs) -> Result<()> {
    let run = Run::open(a)?;
    let ds = load_dataset(&run.cfg)?;
    let index = graphret::pipeline::build_index(&run.model.model, &ds)?;
    let path = run.index_path();
    index.save(&path)?;
    eprintln!("index built 1 time(s)");
    println!("wrote {} ({} entries, dim {})", path.display(), index.len(), index.dim());
    Ok(())
}

fn train_adapters(a: TrainAdapterArgs) -> Result<()> {
    let run = Run::open(a.run)?;
    let ds = load_dataset(&run.cfg)?;
    let index = run.index()?;
    let train_q = run.queries(&ds, Split::Train)?;
    let valid_q = run.queries(&ds, Split::Valid)?;
    let test_q = run.queries(&ds, Split::Test)?;
    let counts = ds.train_class_counts();
    let seeds = run.phase2_seeds(a.seed);
    let mut reports = Vec::new();
    for &seed in &seeds {
        let (params, stats) = train_adapter(&index, &train_q, &valid_q, ds.task(), &run.cfg.adapter(), seed)?;
        eprintln!(
            "seed {seed}: best epoch {} of {}, {} dropout violations",
            stats.best_epoch, run.cfg.m2, stats.dropout_violations
        );
        let report = evaluate(&test_q, ds.task(), EvalMode::Enhanced, Some(&index), Some(&params), &run.cfg, &counts)?;
        let ck = Checkpoint {
            config: run.cfg.clone(),
            seed,
            adapter: Some(params),
            ..run.model.clone()
        };
        ck.save(&adapter_checkpoint_path(&run.dir, seed))?;
        write_report(&metrics_path(&run.dir, EvalMode::Enhanced.as_str(), Some(seed)), &report)?;
        reports.push(report);
    }
    let summary = MetricsReport::aggregate(&reports)?;
    if a.seed.is_none() {
        write_report(&metrics_path(&run.dir, EvalMode::Enhanced.as_str(), None), &summary)?;
    }
    println!("{}", summary.render());
    Ok(())
}

fn adapter_for(run: &Run, seed: u64) -> Result<Checkpoint> {
    let path = adapter_checkpoint_path(&run.dir, seed);
    if !path.exists() {
        bail!("adapter missing: run train-adapter first ({} not found)", path.display());
    }
    Ok(Checkpoint::load(&path)?)
}

fn finish(report: &MetricsReport, save: Option<&Path>) -> Result<()> {
    if let Some(path) = save {
        write_report(path, report)?;
    }
    println!("{}", report.render());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mode: EvalMode = a.mode.parse().context("--mode")?;
    let split = parse_split(&a.split)?;
    let run = Run::open(a.run)?;
    // Fail on a missing adapter before any expensive work.
    let adapters = match mode {
        EvalMode::Enhanced => run
            .phase2_seeds(a.seed)
            .into_iter()
            .map(|s| adapter_for(&run, s))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let index = match mode {
        EvalMode::Base => None,
        _ => Some(run.index()?),
    };
    let ds = load_dataset(&run.cfg)?;
    let q = run.queries(&ds, split)?;
    let counts = ds.train_class_counts();
    let report = match mode {
        EvalMode::Enhanced => {
            let reports = adapters
                .iter()
                .map(|ck| evaluate(&q, ds.task(), mode, index.as_ref(), ck.adapter.as_ref(), &run.cfg, &counts))
                .collect::<graphret::Result<Vec<_>>>()?;
            MetricsReport::aggregate(&reports)?
        }
        _ => evaluate(&q, ds.task(), mode, index.as_ref(), None, &run.cfg, &counts)?,
    };
    finish(&report, a.save.as_deref())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let run = Run::open(a.run)?;
    let index = run.index()?;
    let ds = load_dataset(&run.cfg)?;
    let q = run.queries(&ds, split)?;
    let preds = if a.n == 1 {
        baseline_retrieval(&index, &q, ds.task())?
    } else {
        baseline_majority(&index, &q, ds.task(), a.n).context("--n")?
    };
    let labels: Vec<Label> = q.iter().map(|x| x.label).collect();
    let report = report_from_predictions(ds.task(), &preds, &labels, &ds.train_class_counts(), &run.cfg)?;
    finish(&report, a.save.as_deref())
}

fn report(a: ReportArgs) -> Result<()> {
    for path in &a.files {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: MetricsReport =
            serde_json::from_str(&text).with_context(|| format!("{} is not a metrics report", path.display()))?;
        if a.files.len() > 1 {
            println!("{}", path.display());
        }
        println!("{}", report.render());
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.instances == 0 {
        bail!("--instances must be at least 1");
    }
    let results = run_suite(a.seed, a.instances)?;
    println!("{:<20} {:>9} {:>7} {:>12}", "component", "instances", "failed", "max rel err");
    for r in &results {
        println!("{:<20} {:>9} {:>7} {:>12.3e}", r.name, r.instances, r.failed, r.max_rel_err);
    }
    let failed: usize = results.iter().map(|r| r.failed).sum();
    if failed > 0 {
        bail!("{failed} instances exceed relative error {GRAD_TOL:e}");
    }
    Ok(())
}
