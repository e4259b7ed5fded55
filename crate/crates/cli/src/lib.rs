//! The `ssg` command line: dataset validation and statistics, DOT export,
//! synthetic data, two-stage training and evaluation.
//!
//! Exit codes: 0 success, 1 validation or metric failure, 2 I/O or
//! configuration error (including usage errors reported by clap).

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ssg_core::dot::frame_to_dot;
use ssg_core::eval::{evaluate, EchoScorer, EvalError, MetricsReport, ModelScorer, Scorer};
use ssg_core::fixture::sg201_counts;
use ssg_core::graph::{Appearance, FeatureProvider, GeometricFeatures};
use ssg_core::model::{train_stage1, train_stage2, Checkpoint, ModelError, Task};
use ssg_core::schema::{compute_stats, parse_dataset, to_json, validate, CategoryCounts, Dataset, Split};
use ssg_core::synth::generate_dataset;

use config::{read_text, Overrides, OutputSet, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    /// Bad content or a failed metric.
    pub fn invalid(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    /// Unreadable input, bad configuration, unwritable output.
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptySplit(_) | ModelError::MissingTaskLabels(_) | ModelError::NonFinite(_) => Failure::invalid(e.to_string()),
            _ => Failure::input(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptySplit(_) => Failure::invalid(e.to_string()),
            EvalError::Model(m) => m.into(),
            _ => Failure::input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssg", version, about = "Surgical scene-graph datasets, training and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Appearance-feature sidecar JSON.
    #[arg(long, global = true)]
    pub sidecar: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda_action: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_hand: Option<f64>,
    /// Training epochs [default: 50]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Edge-retention threshold [default: 0.5]
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitSel {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset against every content rule.
    Validate,
    /// Per-split tool, action and hand counts.
    Stats {
        #[arg(long, value_enum, default_value = "all")]
        split: SplitSel,
        #[arg(long)]
        csv: bool,
    },
    /// Render one frame's annotations as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        frame: String,
    },
    /// Generate a synthetic dataset, or the category-count fixture.
    Synth {
        #[arg(long)]
        counts_fixture: bool,
        /// Label-noise rate.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Stage 1 trains the graph encoder; stage 2 adds a task decoder.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        task: Option<Task>,
        /// Stage-1 checkpoint for stage 2 [default: <out>/stage1.json]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-label AP and mAP of a stage-2 model (or of the labels themselves).
    Eval {
        #[arg(long)]
        task: Task,
        #[arg(long, required_unless_present = "echo")]
        model: Option<PathBuf>,
        /// Score every frame with its own labels.
        #[arg(long, conflicts_with = "model")]
        echo: bool,
        #[arg(long, default_value = "test")]
        split: Split,
    },
}

/// Parse `args` (including the program name), run, and return the exit code.
/// Normal output goes to `out`, diagnostics to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(cli) {
        Ok(report) => {
            let _ = out.write_all(report.stdout.as_bytes());
            let _ = err.write_all(report.stderr.as_bytes());
            report.code
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// What a successful (or content-failing) command produced.
#[derive(Debug, Default)]
pub struct Report {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cli: Cli) -> Result<Report, Failure> {
    let g = &cli.global;
    let base = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        dataset: g.dataset.clone(),
        sidecar: g.sidecar.clone(),
        out: g.out.clone(),
        seed: g.seed,
        lambda_action: g.lambda_action,
        lambda_hand: g.lambda_hand,
        epochs: g.epochs,
        tau: g.tau,
    };
    let mut cfg = base.resolve(&overrides);
    let inputs: Vec<&Path> = g.config.iter().map(PathBuf::as_path).collect();
    match &cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Stats { split, csv } => cmd_stats(&cfg, *split, *csv),
        Command::ExportDot { frame } => cmd_export_dot(&cfg, frame),
        Command::Synth { counts_fixture, sigma, train, val, test } => {
            if let Some(s) = sigma {
                cfg.synth.sigma = *s;
            }
            for (slot, v) in [(&mut cfg.synth.train, train), (&mut cfg.synth.val, val), (&mut cfg.synth.test, test)] {
                if let Some(v) = v {
                    *slot = *v;
                }
            }
            cmd_synth(&cfg, *counts_fixture, &inputs)
        }
        Command::Train { stage, task, checkpoint } => cmd_train(&mut cfg, *stage, *task, checkpoint.as_deref(), &inputs),
        Command::Eval { task, model, echo, split } => cmd_eval(&cfg, *task, model.as_deref(), *echo, *split, &inputs),
    }
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.dataset.as_deref().ok_or_else(|| Failure::input("no dataset given (use --dataset)"))
}

/// Read and parse the dataset; parse failures are content errors.
fn load_dataset(cfg: &RunConfig, report: &mut Report) -> Result<Dataset, Failure> {
    let path = dataset_path(cfg)?;
    let parsed = parse_dataset(&read_text(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    for w in &parsed.warnings {
        let _ = writeln!(report.stderr, "warning: {w}");
    }
    Ok(parsed.dataset)
}

fn load_valid_dataset(cfg: &RunConfig, report: &mut Report) -> Result<Dataset, Failure> {
    let d = load_dataset(cfg, report)?;
    let v = validate(&d);
    if let Some(first) = v.violations.first() {
        return Err(Failure::invalid(format!("dataset has {} violation(s); first: {first}", v.violations.len())));
    }
    Ok(d)
}

fn features(cfg: &RunConfig, d: &Dataset) -> Result<GeometricFeatures, Failure> {
    let fp = GeometricFeatures::new(&d.catalog);
    match &cfg.sidecar {
        None => Ok(fp),
        Some(p) => {
            let a = Appearance::from_json(&read_text(p)?).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            Ok(fp.with_appearance(a))
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.out.as_deref().ok_or_else(|| Failure::input("no output directory given (use --out)"))
}

fn cmd_validate(cfg: &RunConfig) -> Result<Report, Failure> {
    let mut r = Report::default();
    let d = match load_dataset(cfg, &mut r) {
        Ok(d) => d,
        Err(f) if f.code == 1 => {
            let _ = writeln!(r.stdout, "[parse] {}", f.message);
            r.code = 1;
            return Ok(r);
        }
        Err(f) => return Err(f),
    };
    let v = validate(&d);
    for violation in &v.violations {
        let _ = writeln!(r.stdout, "{violation}");
    }
    if v.is_valid() {
        let _ = writeln!(r.stdout, "ok: {} frames", d.frames.len());
    } else {
        let _ = writeln!(r.stdout, "{} violation(s)", v.violations.len());
        r.code = 1;
    }
    Ok(r)
}

fn cmd_stats(cfg: &RunConfig, sel: SplitSel, csv: bool) -> Result<Report, Failure> {
    let mut r = Report::default();
    let d = load_dataset(cfg, &mut r)?;
    let stats = compute_stats(&d);
    let cols: Vec<(&str, &CategoryCounts)> = match sel {
        SplitSel::Train => vec![("train", &stats.train)],
        SplitSel::Val => vec![("val", &stats.val)],
        SplitSel::Test => vec![("test", &stats.test)],
        SplitSel::All => vec![("train", &stats.train), ("val", &stats.val), ("test", &stats.test), ("total", &stats.total)],
    };
    if csv {
        let full = stats.to_csv();
        let mut lines = full.lines();
        let _ = writeln!(r.stdout, "{}", lines.next().unwrap_or_default());
        for line in lines {
            if cols.iter().any(|(name, _)| line.split(',').next() == Some(*name)) {
                let _ = writeln!(r.stdout, "{line}");
            }
        }
        return Ok(r);
    }
    let mut rows: Vec<(String, Vec<u64>)> = vec![("frames".into(), cols.iter().map(|c| c.1.frames).collect())];
    type Column = fn(&CategoryCounts) -> &[u64];
    let groups: [(&str, &[String], Column); 3] = [
        ("tool", &stats.tool_names, |c| &c.tools),
        ("action", &stats.action_names, |c| &c.actions),
        ("hand", &stats.hand_names, |c| &c.hands),
    ];
    for (group, names, get) in groups {
        for (i, n) in names.iter().enumerate() {
            rows.push((format!("{group}/{n}"), cols.iter().map(|c| get(c.1)[i]).collect()));
        }
    }
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let _ = write!(r.stdout, "{:<w$}", "category");
    for (name, _) in &cols {
        let _ = write!(r.stdout, " {name:>7}");
    }
    r.stdout.push('\n');
    for (label, vals) in rows {
        let _ = write!(r.stdout, "{label:<w$}");
        for v in vals {
            let _ = write!(r.stdout, " {v:>7}");
        }
        r.stdout.push('\n');
    }
    Ok(r)
}

fn cmd_export_dot(cfg: &RunConfig, frame: &str) -> Result<Report, Failure> {
    let mut r = Report::default();
    let d = load_dataset(cfg, &mut r)?;
    let f = d.frame(frame).ok_or_else(|| Failure::input(format!("no frame '{frame}' in dataset")))?;
    let dot = frame_to_dot(f, &d.catalog);
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
            let path = dir.join(format!("{frame}.dot"));
            std::fs::write(&path, &dot).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let _ = writeln!(r.stdout, "wrote {}", path.display());
        }
        None => r.stdout = dot,
    }
    Ok(r)
}

fn cmd_synth(cfg: &RunConfig, fixture: bool, inputs: &[&Path]) -> Result<Report, Failure> {
    let mut r = Report::default();
    let d = if fixture {
        sg201_counts()
    } else {
        generate_dataset(&cfg.synth).map_err(|e| Failure::input(e.to_string()))?
    };
    let json = to_json(&d);
    match &cfg.out {
        Some(dir) => {
            let mut set = OutputSet::new(dir);
            set.add("dataset.json", json);
            set.write("synth_manifest.json", "synth", cfg.synth.seed, cfg, inputs)?;
            let _ = writeln!(r.stdout, "wrote {} frames to {}", d.frames.len(), dir.join("dataset.json").display());
        }
        None => r.stdout = json,
    }
    Ok(r)
}

fn cmd_train(cfg: &mut RunConfig, stage: u8, task: Option<Task>, checkpoint: Option<&Path>, inputs: &[&Path]) -> Result<Report, Failure> {
    let mut r = Report::default();
    let out = out_dir(cfg)?.to_path_buf();
    let d = load_valid_dataset(cfg, &mut r)?;
    let fp = features(cfg, &d)?;
    cfg.model.d_node = fp.node_dim();
    cfg.model.d_edge = fp.edge_dim();
    let mut ins: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    ins.extend(cfg.dataset.iter().cloned());
    ins.extend(cfg.sidecar.iter().cloned());
    let mut set = OutputSet::new(&out);
    let name = match stage {
        1 => {
            if task.is_some() {
                return Err(Failure::input("--task applies to stage 2 only"));
            }
            let res = train_stage1(&d, &fp, &cfg.model)?;
            let h = &res.history;
            let best = h.epochs.iter().find(|e| e.epoch == h.best_epoch);
            let _ = writeln!(
                r.stdout,
                "stage 1: {} epochs, best epoch {}{}",
                h.epochs.len(),
                h.best_epoch,
                best.map(|b| {
                    let val = b.val.as_ref().map(|v| format!(", val total {:.6}", v.total)).unwrap_or_default();
                    format!(" (train total {:.6}{val})", b.train.total)
                })
                .unwrap_or_default()
            );
            set.add("stage1.json", Checkpoint::from_model(&res.model).to_json());
            set.add("stage1_history.json", to_pretty(&res.history));
            "stage1"
        }
        _ => {
            let task = task.ok_or_else(|| Failure::input("stage 2 needs --task cvs|triplet"))?;
            let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join("stage1.json"));
            let s1 = Checkpoint::from_json(&read_text(&ck)?)?.into_model()?;
            if s1.config.d_node != fp.node_dim() {
                return Err(Failure::input(format!(
                    "checkpoint expects {}-dim node features, features give {}",
                    s1.config.d_node,
                    fp.node_dim()
                )));
            }
            ins.push(ck);
            let res = train_stage2(&s1, task, &d, &fp, &cfg.model)?;
            let best = match res.history.best_epoch {
                0 => res.initial_map,
                b => res.history.epochs.iter().find(|e| e.epoch == b).and_then(|e| e.val_map),
            };
            let fmt = |m: Option<f64>| m.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                r.stdout,
                "stage 2 ({task}): best epoch {}, selection mAP {} (untrained decoder {})",
                res.history.best_epoch,
                fmt(best),
                fmt(res.initial_map)
            );
            set.add(format!("stage2_{task}.json"), Checkpoint::from_model(&res.model).to_json());
            set.add(format!("stage2_{task}_history.json"), to_pretty(&res.history));
            if task == Task::Cvs { "stage2_cvs" } else { "stage2_triplet" }
        }
    };
    let refs: Vec<&Path> = ins.iter().map(PathBuf::as_path).collect();
    set.write(&format!("{name}_manifest.json"), &format!("train --stage {stage}"), cfg.model.seed, cfg, &refs)?;
    Ok(r)
}

fn cmd_eval(cfg: &RunConfig, task: Task, model: Option<&Path>, echo: bool, split: Split, inputs: &[&Path]) -> Result<Report, Failure> {
    let mut r = Report::default();
    let d = load_valid_dataset(cfg, &mut r)?;
    let mut ins: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    ins.extend(cfg.dataset.iter().cloned());
    let (report, seed): (MetricsReport, u64) = if echo {
        (evaluate(&EchoScorer::new(task, &d), &d, split)?, cfg.model.seed)
    } else {
        let path = model.ok_or_else(|| Failure::input("eval needs --model or --echo"))?;
        let ck = Checkpoint::from_json(&read_text(path)?)?;
        let seed = ck.seed;
        let m = ck.into_model()?;
        if m.task != Some(task) {
            let found = m.task.map(|t| t.to_string()).unwrap_or_else(|| "no decoder".into());
            return Err(Failure::input(format!("model was trained for {found}, not {task}")));
        }
        let fp = features(cfg, &d)?;
        if m.config.d_node != fp.node_dim() {
            return Err(Failure::input(format!("model expects {}-dim node features, features give {}", m.config.d_node, fp.node_dim())));
        }
        ins.push(path.to_path_buf());
        ins.extend(cfg.sidecar.iter().cloned());
        let scorer = ModelScorer { model: &m, features: &fp };
        debug_assert_eq!(scorer.task(), task);
        (evaluate(&scorer, &d, split)?, seed)
    };
    let summary = report.summary_json(seed, &cfg.hash());
    match &cfg.out {
        Some(dir) => {
            let stem = format!("{task}_{split}");
            let mut set = OutputSet::new(dir);
            set.add(format!("metrics_{stem}.csv"), report.to_csv());
            set.add(format!("summary_{stem}.json"), summary.clone());
            let refs: Vec<&Path> = ins.iter().map(PathBuf::as_path).collect();
            set.write(&format!("eval_{stem}_manifest.json"), "eval", seed, cfg, &refs)?;
            r.stdout = summary;
        }
        None => {
            r.stdout = report.to_csv();
            r.stdout.push_str(&summary);
        }
    }
    if report.map.is_none() {
        let _ = writeln!(r.stderr, "no label in the {split} split has a positive; mAP undefined");
        r.code = 1;
    }
    Ok(r)
}

fn to_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}
