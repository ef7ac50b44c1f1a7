//! `rdl`: one entry point for cost analysis, training, distillation,
//! experiment matrices, report tables, and activation export.
//!
//! Every command is deterministic: identical flags and input files produce
//! byte-identical artifacts. Errors print as a single `error: ...` line on
//! stderr with a category-specific exit code (2 flag syntax, 3 invalid
//! config, 4 data, 5 compute, 6 file system).

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rdl_core::archspec::{self, ArchError, GroupingPolicy, NetworkSpec};
use rdl_core::costmodel::{cost_table, format_millions, network_cost, CostError, CostReport};
use rdl_core::data::{load, DataError, Dataset, DatasetHandle, Normalizer, Splits, SyntheticSpec};
use rdl_core::distill::{
    history_csv, train, DistillConfig, LrSchedule, SgdConfig, TrainConfig, TrainError,
};
use rdl_core::experiments::{
    activations_csv, export_activations, per_class_accuracy, project_2d, projected_csv,
    result_csv_row, run_matrix, ExperimentError, ExperimentResult, MatrixConfig, MetricTable,
    RunMode, worst_classes, RESULTS_HEADER,
};
use rdl_core::graph::GraphError;
use rdl_core::model::{Model, ModelError};
use rdl_core::tensor::Tensor;
use rdl_core::util::atomic_write;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

const ARCH_FILE: &str = "arch.json";
const MODEL_FILE: &str = "model.ckpt";
const NORM_FILE: &str = "norm.json";
const HISTORY_FILE: &str = "history.csv";
const TRAINCFG_FILE: &str = "traincfg.json";
const MATRIXCFG_FILE: &str = "matrix.json";
const RESULTS_FILE: &str = "results.csv";
const TABLE_FILE: &str = "table.csv";

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(DataError),
    Compute(String),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Compute(m) => write!(f, "{m}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Compute(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> CliError {
        CliError::Config(e.to_string())
    }
}
impl From<CostError> for CliError {
    fn from(e: CostError) -> CliError {
        CliError::Config(e.to_string())
    }
}
impl From<DataError> for CliError {
    fn from(e: DataError) -> CliError {
        CliError::Data(e)
    }
}
impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::Json(_) | TrainError::Schema { .. } => CliError::Config(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> CliError {
        CliError::Compute(e.to_string())
    }
}
impl From<GraphError> for CliError {
    fn from(e: GraphError) -> CliError {
        CliError::Compute(e.to_string())
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e)
    }
}
impl From<rdl_core::io::IoError> for CliError {
    fn from(e: rdl_core::io::IoError) -> CliError {
        CliError::Compute(e.to_string())
    }
}
impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> CliError {
        match e {
            ExperimentError::Data(d) => CliError::Data(d),
            ExperimentError::Arch(a) => CliError::Config(a.to_string()),
            ExperimentError::Json(_) | ExperimentError::Schema { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Compute(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rdl",
    version,
    about = "Grouped-convolution network lab: cost analysis, training, distillation, experiment matrices"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parameter and FLOP accounting for an architecture, optionally swept
    /// over grouping policies.
    Analyze(AnalyzeArgs),
    /// Train a model on hard targets.
    Train(TrainArgs),
    /// Train a student against a saved teacher's softened outputs.
    Distill(DistillArgs),
    /// Run a teacher-student experiment matrix from a config file.
    Matrix(MatrixArgs),
    /// Rebuild the metric table (with accuracy-drop and distillation-gain
    /// rows) from a results CSV.
    Report(ReportArgs),
    /// Export penultimate-layer activations, optionally projected to 2-D.
    Viz(VizArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchKind {
    Wrn,
    Resnet18,
    Mobilenetv2,
}

#[derive(Args)]
struct ArchArgs {
    #[arg(long, value_enum)]
    arch: ArchKind,
    /// Total conv depth (wrn only).
    #[arg(long)]
    depth: Option<usize>,
    /// Width multiplier (wrn only).
    #[arg(long)]
    widen: Option<usize>,
    /// Grouping policy: std, dw, g=N (group count), G=N (group size).
    #[arg(long, default_value = "std")]
    policy: String,
    #[arg(
        long,
        value_parser = BoolishValueParser::new(),
        action = clap::ArgAction::Set,
        default_value = "true"
    )]
    residual: bool,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

impl ArchArgs {
    fn policy(&self) -> Result<GroupingPolicy, CliError> {
        GroupingPolicy::from_str(&self.policy)
            .map_err(|e| CliError::Config(format!("--policy: {e}")))
    }

    fn build(&self, num_classes: usize) -> Result<NetworkSpec, CliError> {
        self.build_residual(num_classes, self.residual)
    }

    fn build_residual(&self, num_classes: usize, residual: bool) -> Result<NetworkSpec, CliError> {
        let policy = self.policy()?;
        let spec = match self.arch {
            ArchKind::Wrn => archspec::build_wrn(
                self.depth.unwrap_or(22),
                self.widen.unwrap_or(2),
                policy,
                residual,
                num_classes,
                self.dropout,
            )?,
            ArchKind::Resnet18 => archspec::build_resnet18(policy, residual, num_classes)?,
            ArchKind::Mobilenetv2 => archspec::build_mobilenetv2(policy, residual, num_classes)?,
        };
        Ok(spec)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Input shape as CxHxW.
    #[arg(long, default_value = "3x32x32")]
    input: String,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
    /// Comma-separated policy list; emits a residual/non-residual cost table
    /// instead of a single report.
    #[arg(long)]
    sweep: Option<String>,
    /// Classifier width used for cost accounting.
    #[arg(long, default_value_t = 100)]
    classes: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// cifar10:DIR | cifar100:DIR | synthetic:classes=8,train=25,test=10,side=16,noise=0.05,seed=7
    #[arg(long)]
    dataset: String,
    /// Keep only the first N samples per class of each split.
    #[arg(long)]
    subset: Option<usize>,
    /// Load hyperparameters from a traincfg/1 JSON file instead of flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 4e-4)]
    weight_decay: f64,
    /// step (milestones/factor) or exp (gamma).
    #[arg(long, default_value = "step")]
    schedule: String,
    /// Comma-separated epoch numbers for step decay.
    #[arg(long, default_value = "")]
    milestones: String,
    #[arg(long, default_value_t = 10.0)]
    factor: f64,
    #[arg(long, default_value_t = 0.98)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crop padding for train-time augmentation; 0 disables.
    #[arg(long, default_value_t = 0)]
    augment_pad: usize,
    /// Artifact directory (arch.json, traincfg.json, norm.json, model.ckpt,
    /// history.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Teacher artifact directory (arch.json + model.ckpt).
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Leave the softened term unscaled instead of multiplying by T^2.
    #[arg(long)]
    raw_soft_term: bool,
}

#[derive(Args)]
struct MatrixArgs {
    /// matrix/1 JSON config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV produced by `matrix` (or hand-assembled with the same
    /// columns).
    #[arg(long)]
    results: PathBuf,
}

#[derive(Args)]
struct VizArgs {
    /// Model artifact directory (arch.json, model.ckpt, optional norm.json).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    subset: Option<usize>,
    /// Comma-separated class ids to export.
    #[arg(long)]
    classes: Option<String>,
    /// Pick the K classes the model scores worst on instead of naming them.
    #[arg(long)]
    worst: Option<usize>,
    /// Project to two principal components instead of dumping raw features.
    #[arg(long)]
    project: bool,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    rdl_core::util::init_parallelism();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Analyze(a) => analyze(a),
        Cmd::Train(a) => {
            train_command(a, None)?;
            Ok(())
        }
        Cmd::Distill(a) => {
            let teacher = load_model_dir(&a.teacher)?;
            let distill = DistillConfig {
                temperature: a.temperature,
                alpha: a.alpha,
                square_temperature: !a.raw_soft_term,
            };
            train_command(a.train, Some((teacher, distill)))?;
            Ok(())
        }
        Cmd::Matrix(a) => matrix(a),
        Cmd::Report(a) => report(a),
        Cmd::Viz(a) => viz(a),
    }
}

fn parse_input_shape(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = s.split('x').filter_map(|p| p.parse().ok()).collect();
    match parts[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(CliError::Config(format!("--input: expected CxHxW, got '{s}'"))),
    }
}

fn parse_dataset(s: &str) -> Result<DatasetHandle, CliError> {
    if let Some(dir) = s.strip_prefix("cifar10:") {
        return Ok(DatasetHandle::CifarDir { dir: dir.into(), classes: 10 });
    }
    if let Some(dir) = s.strip_prefix("cifar100:") {
        return Ok(DatasetHandle::CifarDir { dir: dir.into(), classes: 100 });
    }
    if let Some(kv) = s.strip_prefix("synthetic:") {
        let mut spec = SyntheticSpec {
            classes: 8,
            train_per_class: 25,
            test_per_class: 10,
            side: 16,
            noise: 0.05,
            seed: 7,
        };
        for pair in kv.split(',').filter(|p| !p.is_empty()) {
            let bad =
                || CliError::Config(format!("--dataset: bad synthetic field '{pair}'"));
            let (key, value) = pair.split_once('=').ok_or_else(bad)?;
            match key {
                "classes" => spec.classes = value.parse().map_err(|_| bad())?,
                "train" => spec.train_per_class = value.parse().map_err(|_| bad())?,
                "test" => spec.test_per_class = value.parse().map_err(|_| bad())?,
                "side" => spec.side = value.parse().map_err(|_| bad())?,
                "noise" => spec.noise = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        return Ok(DatasetHandle::Synthetic(spec));
    }
    Err(CliError::Config(format!(
        "--dataset: expected cifar10:DIR, cifar100:DIR or synthetic:K=V,..., got '{s}'"
    )))
}

/// First `n` samples of each class, in dataset order.
fn subset_per_class(ds: Dataset<f64>, n: usize) -> Dataset<f64> {
    let mut kept_per_class = vec![0usize; ds.num_classes];
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            let c = ds.labels[i];
            if kept_per_class[c] < n {
                kept_per_class[c] += 1;
                true
            } else {
                false
            }
        })
        .collect();
    let numel = ds.image_numel();
    let shape = ds.images.shape().to_vec();
    let mut images = Vec::with_capacity(keep.len() * numel);
    let mut labels = Vec::with_capacity(keep.len());
    for &i in &keep {
        images.extend_from_slice(ds.image(i));
        labels.push(ds.labels[i]);
    }
    Dataset {
        images: Tensor::new(&[keep.len(), shape[1], shape[2], shape[3]], images),
        labels,
        num_classes: ds.num_classes,
    }
}

fn load_splits(dataset: &str, subset: Option<usize>) -> Result<Splits<f64>, CliError> {
    let handle = parse_dataset(dataset)?;
    let mut splits = load::<f64>(&handle)?;
    if let Some(n) = subset {
        splits.train = subset_per_class(splits.train, n);
        splits.test = subset_per_class(splits.test, n);
    }
    Ok(splits)
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let input = parse_input_shape(&a.input)?;
    let spec = a.arch.build(a.classes)?;

    if let Some(sweep) = &a.sweep {
        let policies: Result<Vec<GroupingPolicy>, _> =
            sweep.split(',').map(GroupingPolicy::from_str).collect();
        let policies = policies.map_err(|e| CliError::Config(format!("--sweep: {e}")))?;
        let mut out = String::new();
        for residual in [true, false] {
            let base = a.arch.build_residual(a.classes, residual)?;
            let rows = cost_table(&base, &policies, input);
            writeln!(out, "{} ({})", base.label(), if residual { "R" } else { "NR" }).unwrap();
            for (policy, row) in rows {
                match row {
                    Ok(r) => writeln!(
                        out,
                        "  {:<6} params {:>8} M  flops {:>8} M",
                        policy.to_string(),
                        format_millions(r.params),
                        format_millions(r.flops)
                    )
                    .unwrap(),
                    Err(e) => writeln!(out, "  {:<6} {e}", policy.to_string()).unwrap(),
                }
            }
        }
        print!("{out}");
        return Ok(());
    }

    let report = network_cost(&spec, input)?;
    match a.format {
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report to json"))
        }
        OutputFormat::Text => print_cost_report(&report),
    }
    Ok(())
}

fn print_cost_report(r: &CostReport) {
    println!("{}", r.label);
    for (id, c) in &r.per_layer {
        println!("  {:<22} params {:>12}  flops {:>14}", id, c.params, c.flops);
    }
    println!(
        "total: params {} ({} M), flops {} ({} M)",
        r.params,
        format_millions(r.params),
        r.flops,
        format_millions(r.flops)
    );
    println!(
        "shortcut share: params {}, flops {}",
        r.shortcut_params, r.shortcut_flops
    );
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        return Ok(TrainConfig::from_json(&text)?);
    }
    let schedule = match a.schedule.as_str() {
        "step" => {
            let milestones: Result<Vec<usize>, _> = a
                .milestones
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect();
            LrSchedule::StepDecay {
                milestones: milestones
                    .map_err(|_| CliError::Config("--milestones: expected integers".into()))?,
                factor: a.factor,
            }
        }
        "exp" => LrSchedule::Exponential { gamma: a.gamma },
        other => {
            return Err(CliError::Config(format!("--schedule: expected step or exp, got '{other}'")))
        }
    };
    Ok(TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        sgd: SgdConfig { lr0: a.lr, momentum: a.momentum, weight_decay: a.weight_decay },
        schedule,
        seed: a.seed,
        augment_pad: if a.augment_pad == 0 { None } else { Some(a.augment_pad) },
        distill: None,
    })
}

fn load_model_dir(dir: &Path) -> Result<Model<f64>, CliError> {
    let arch = std::fs::read_to_string(dir.join(ARCH_FILE))?;
    let spec = archspec::from_json(&arch)?;
    Ok(Model::load(spec, &dir.join(MODEL_FILE))?)
}

fn train_command(
    a: TrainArgs,
    teacher: Option<(Model<f64>, DistillConfig)>,
) -> Result<ExperimentResult, CliError> {
    let mut cfg = resolve_train_config(&a)?;
    let mut splits = load_splits(&a.dataset, a.subset)?;
    let norm = Normalizer::fit(&splits.train);
    norm.apply(&mut splits.train.images);
    norm.apply(&mut splits.test.images);

    let spec = a.arch.build(splits.train.num_classes)?;
    let input = splits.train.images.shape().to_vec();
    let cost = network_cost(&spec, (input[1], input[2], input[3]))?;

    let (mut teacher_model, teacher_name) = match teacher {
        Some((m, distill)) => {
            cfg.distill = Some(distill);
            let name = m.spec.label();
            (Some(m), Some(name))
        }
        None => (None, None),
    };

    std::fs::create_dir_all(&a.out)?;
    atomic_write(&a.out.join(ARCH_FILE), archspec::to_json(&spec).as_bytes())?;
    atomic_write(&a.out.join(TRAINCFG_FILE), cfg.to_json().as_bytes())?;
    atomic_write(&a.out.join(NORM_FILE), norm.to_json().as_bytes())?;

    let mut model = Model::init(spec, cfg.seed)?;
    let history = train(
        &mut model,
        teacher_model.as_mut(),
        &splits.train,
        &splits.test,
        &cfg,
    )?;
    model.save(&a.out.join(MODEL_FILE))?;
    atomic_write(&a.out.join(HISTORY_FILE), history_csv(&history).as_bytes())?;

    let last = history.last().expect("at least one epoch");
    println!(
        "{}: test top-1 {:.2}%, train top-1 {:.2}% after {} epochs -> {}",
        model.spec.label(),
        last.test_acc * 100.0,
        last.train_acc * 100.0,
        history.len(),
        a.out.display()
    );
    Ok(ExperimentResult {
        family: model.spec.family,
        depth: model.spec.depth,
        widen: model.spec.widen,
        policy: model.spec.policy,
        residual: model.spec.residual,
        mode: match teacher_name {
            Some(t) => RunMode::Distilled { teacher: t },
            None => RunMode::HardTarget,
        },
        seed: cfg.seed,
        top1_test: last.test_acc * 100.0,
        top1_train: last.train_acc * 100.0,
        params: cost.params,
        flops: cost.flops,
        epochs: history.len(),
    })
}

fn matrix(a: MatrixArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config)?;
    let cfg = MatrixConfig::from_json(&text)?;
    std::fs::create_dir_all(&a.out)?;
    atomic_write(&a.out.join(MATRIXCFG_FILE), cfg.to_json().as_bytes())?;

    let results_path = a.out.join(RESULTS_FILE);
    let mut results = std::fs::File::create(&results_path)?;
    writeln!(results, "{RESULTS_HEADER}")?;
    results.flush()?;

    let mut append_failed = None;
    let outcome = run_matrix::<f64>(&cfg, |r| {
        // One write per row so a crash loses at most the row in flight.
        let line = format!("{}\n", result_csv_row(r));
        if let Err(e) = results.write_all(line.as_bytes()).and_then(|_| results.flush()) {
            append_failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = append_failed {
        return Err(CliError::Io(e));
    }

    atomic_write(&a.out.join(TABLE_FILE), outcome.table.to_csv().as_bytes())?;
    for (cell, err) in &outcome.failures {
        eprintln!("warning: {cell}: {err}");
    }
    println!(
        "matrix complete: {} runs, {} failures -> {}",
        outcome.results.len(),
        outcome.failures.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_results_csv(text: &str) -> Result<MetricTable, CliError> {
    let bad = |line: &str| CliError::Config(format!("results row malformed: '{line}'"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("<empty file>"))?;
    if header != RESULTS_HEADER {
        return Err(CliError::Config(format!(
            "results header mismatch: expected '{RESULTS_HEADER}'"
        )));
    }

    struct Row {
        policy: String,
        residual: bool,
        teacher: Option<String>,
        top1_test: f64,
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(bad(line));
        }
        let residual = match f[4] {
            "R" => true,
            "NR" => false,
            _ => return Err(bad(line)),
        };
        let teacher = match f[5] {
            "hard" => None,
            "distilled" => Some(f[6].to_string()),
            _ => return Err(bad(line)),
        };
        rows.push(Row {
            policy: f[3].to_string(),
            residual,
            teacher,
            top1_test: f[8].parse().map_err(|_| bad(line))?,
        });
    }

    let mut students: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| !r.residual && r.teacher.is_none()) {
        if !students.contains(&r.policy) {
            students.push(r.policy.clone());
        }
    }
    let mut teachers: Vec<String> = Vec::new();
    for r in &rows {
        if let Some(t) = &r.teacher {
            if !teachers.contains(t) {
                teachers.push(t.clone());
            }
        }
    }

    let mean = |accs: Vec<f64>| -> Option<f64> {
        if accs.is_empty() {
            None
        } else {
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        }
    };
    let collect = |pred: &dyn Fn(&Row) -> bool| -> Option<f64> {
        mean(rows.iter().filter(|r| pred(r)).map(|r| r.top1_test).collect())
    };

    Ok(MetricTable {
        distilled: teachers
            .iter()
            .map(|t| {
                students
                    .iter()
                    .map(|s| {
                        collect(&|r: &Row| {
                            !r.residual && r.policy == *s && r.teacher.as_deref() == Some(t)
                        })
                    })
                    .collect()
            })
            .collect(),
        baseline: students
            .iter()
            .map(|s| collect(&|r: &Row| r.residual && r.policy == *s && r.teacher.is_none()))
            .collect(),
        nr_baseline: students
            .iter()
            .map(|s| collect(&|r: &Row| !r.residual && r.policy == *s && r.teacher.is_none()))
            .collect(),
        students: students.iter().map(|s| format!("NR-{s}")).collect(),
        teachers,
    })
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.results)?;
    let table = parse_results_csv(&text)?;
    print!("{}", render_table(&table));
    Ok(())
}

fn render_table(t: &MetricTable) -> String {
    let cell = |v: &Option<f64>| match v {
        Some(x) => format!("{x:.2}"),
        None => "-".to_string(),
    };
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for (teacher, accs) in t.teachers.iter().zip(&t.distilled) {
        rows.push((teacher.clone(), accs.iter().map(cell).collect()));
    }
    rows.push(("Baseline".into(), t.baseline.iter().map(cell).collect()));
    rows.push(("NR-baseline".into(), t.nr_baseline.iter().map(cell).collect()));
    rows.push(("Acc. drop".into(), t.accuracy_drop_row().iter().map(cell).collect()));
    rows.push(("Distil. gain".into(), t.distillation_gain_row().iter().map(cell).collect()));

    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .max()
        .unwrap_or(0)
        .max("teacher \\ student".len());
    let col_width = t
        .students
        .iter()
        .map(|s| s.len())
        .chain(rows.iter().flat_map(|(_, cs)| cs.iter().map(|c| c.len())))
        .max()
        .unwrap_or(1);

    let mut out = format!("{:<label_width$}", "teacher \\ student");
    for s in &t.students {
        write!(out, "  {s:>col_width$}").unwrap();
    }
    out.push('\n');
    for (label, cells) in &rows {
        write!(out, "{label:<label_width$}").unwrap();
        for c in cells {
            write!(out, "  {c:>col_width$}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn viz(a: VizArgs) -> Result<(), CliError> {
    let mut model = load_model_dir(&a.model)?;
    let mut splits = load_splits(&a.dataset, a.subset)?;
    let norm_path = a.model.join(NORM_FILE);
    let norm = if norm_path.exists() {
        Normalizer::from_json(&std::fs::read_to_string(&norm_path)?)?
    } else {
        Normalizer::fit(&splits.train)
    };
    norm.apply(&mut splits.test.images);

    let class_ids: Vec<usize> = match (&a.classes, a.worst) {
        (Some(list), None) => {
            let parsed: Result<Vec<usize>, _> = list.split(',').map(str::parse).collect();
            parsed.map_err(|_| CliError::Config("--classes: expected integers".into()))?
        }
        (None, Some(k)) => {
            let per_class = per_class_accuracy(&mut model, &splits.test, a.batch)?;
            worst_classes(&per_class, k)
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --classes and --worst is required".into(),
            ))
        }
    };

    let rows = export_activations(&mut model, &splits.test, &class_ids, a.batch)?;
    let csv = if a.project {
        projected_csv(&project_2d(&rows)?)
    } else {
        activations_csv(&rows)
    };
    atomic_write(&a.out, csv.as_bytes())?;
    let ids: Vec<String> = class_ids.iter().map(usize::to_string).collect();
    println!(
        "{} rows for classes [{}] -> {}",
        rows.len(),
        ids.join(", "),
        a.out.display()
    );
    Ok(())
}
