//! The experiment harness: teacher/student accuracy matrices, the two
//! derived metrics (accuracy drop, distillation gain), activation export,
//! and a deterministic 2-component projection for cluster plots.
//!
//! A matrix names teacher policies (residual, hard-target) and student
//! policies (non-residual). The runner trains three phases in dependency
//! order: residual baselines, non-residual baselines, then every
//! teacher-student distillation cell. Failures in one cell are recorded and
//! the rest of the matrix continues; failed cells stay empty in the table.

use crate::archspec::{
    build_mobilenetv2, build_resnet18, build_wrn, ArchError, GroupingPolicy, NetFamily,
    NetworkSpec,
};
use crate::costmodel::{network_cost, CostError};
use crate::data::{gather_batch, load, DataError, Dataset, DatasetHandle, Normalizer};
use crate::distill::{train, EpochRow, TrainConfig, TrainError};
use crate::graph::{Graph, Mode};
use crate::model::{Model, ModelError};
use crate::tensor::Scalar;
use crate::util::rng_for;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("distillation gain needs at least one distilled accuracy")]
    EmptyList,
    #[error("class {0} is not present in the dataset")]
    UnknownClass(usize),
    #[error("projection input has no variance")]
    DegenerateData,
    #[error("projection needs at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("matrix config document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected schema {expected}, got {got}")]
    Schema { expected: String, got: String },
    #[error("table row {0} is malformed")]
    BadTableRow(String),
}

/// Accuracy lost by removing the shortcuts: residual baseline minus its
/// non-residual twin, in percentage points.
pub fn accuracy_drop(r_baseline: f64, nr_baseline: f64) -> f64 {
    r_baseline - nr_baseline
}

/// Best distilled accuracy over the teacher set minus the residual
/// baseline, in percentage points. Order of the list does not matter.
pub fn distillation_gain(distilled: &[f64], r_baseline: f64) -> Result<f64, ExperimentError> {
    let best = distilled
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if distilled.is_empty() {
        return Err(ExperimentError::EmptyList);
    }
    Ok(best - r_baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    HardTarget,
    Distilled { teacher: String },
}

impl RunMode {
    fn csv_fields(&self) -> (&'static str, &str) {
        match self {
            RunMode::HardTarget => ("hard", ""),
            RunMode::Distilled { teacher } => ("distilled", teacher),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub family: NetFamily,
    pub depth: Option<usize>,
    pub widen: Option<usize>,
    pub policy: GroupingPolicy,
    pub residual: bool,
    pub mode: RunMode,
    pub seed: u64,
    /// Percentages in [0, 100].
    pub top1_test: f64,
    pub top1_train: f64,
    pub params: u64,
    pub flops: u64,
    pub epochs: usize,
}

pub const RESULTS_HEADER: &str =
    "family,depth,widen,policy,residual,mode,teacher,seed,top1_test,top1_train,params,flops,epochs";

pub fn result_csv_row(r: &ExperimentResult) -> String {
    let (mode, teacher) = r.mode.csv_fields();
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.family,
        opt(r.depth),
        opt(r.widen),
        r.policy,
        if r.residual { "R" } else { "NR" },
        mode,
        teacher,
        r.seed,
        r.top1_test,
        r.top1_train,
        r.params,
        r.flops,
        r.epochs
    )
}

/// Teacher-rows by student-columns accuracy table plus the baseline rows the
/// derived metrics need. Cells hold seed-mean test accuracy in percent;
/// `None` marks a cell whose runs failed.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub students: Vec<String>,
    pub teachers: Vec<String>,
    /// distilled[t][s]: student s taught by teacher t.
    pub distilled: Vec<Vec<Option<f64>>>,
    /// Residual twin of each student column, hard targets.
    pub baseline: Vec<Option<f64>>,
    /// Each student column trained on hard targets.
    pub nr_baseline: Vec<Option<f64>>,
}

impl MetricTable {
    pub fn accuracy_drop_row(&self) -> Vec<Option<f64>> {
        self.baseline
            .iter()
            .zip(&self.nr_baseline)
            .map(|(r, nr)| match (r, nr) {
                (Some(r), Some(nr)) => Some(accuracy_drop(*r, *nr)),
                _ => None,
            })
            .collect()
    }

    pub fn distillation_gain_row(&self) -> Vec<Option<f64>> {
        (0..self.students.len())
            .map(|s| {
                let r = self.baseline[s]?;
                let accs: Vec<f64> =
                    self.distilled.iter().filter_map(|row| row[s]).collect();
                distillation_gain(&accs, r).ok()
            })
            .collect()
    }

    /// Renders the raw rows and recomputes the two derived rows at the
    /// bottom. Values print in shortest round-trip form, so parsing the raw
    /// rows back and re-rendering reproduces the file byte for byte.
    pub fn to_csv(&self) -> String {
        let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("row");
        for s in &self.students {
            write!(out, ",{s}").unwrap();
        }
        out.push('\n');
        for (t, row) in self.teachers.iter().zip(&self.distilled) {
            write!(out, "distilled:{t}").unwrap();
            for v in row {
                write!(out, ",{}", cell(v)).unwrap();
            }
            out.push('\n');
        }
        for (name, row) in [
            ("baseline", self.baseline.clone()),
            ("nr_baseline", self.nr_baseline.clone()),
            ("acc_drop", self.accuracy_drop_row()),
            ("distill_gain", self.distillation_gain_row()),
        ] {
            out.push_str(name);
            for v in &row {
                write!(out, ",{}", cell(v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Reads the raw rows back (derived rows in the text are ignored; they
    /// are recomputed on the next render).
    pub fn from_csv(text: &str) -> Result<MetricTable, ExperimentError> {
        let bad = |l: &str| ExperimentError::BadTableRow(l.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("<empty>"))?;
        let students: Vec<String> =
            header.split(',').skip(1).map(str::to_string).collect();
        let parse_row = |line: &str| -> Result<Vec<Option<f64>>, ExperimentError> {
            let cells: Vec<&str> = line.split(',').skip(1).collect();
            if cells.len() != students.len() {
                return Err(bad(line));
            }
            cells
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>().map(Some).map_err(|_| bad(line))
                    }
                })
                .collect()
        };
        let mut teachers = Vec::new();
        let mut distilled = Vec::new();
        let mut baseline = None;
        let mut nr_baseline = None;
        for line in lines {
            let name = line.split(',').next().unwrap_or("");
            if let Some(t) = name.strip_prefix("distilled:") {
                teachers.push(t.to_string());
                distilled.push(parse_row(line)?);
            } else if name == "baseline" {
                baseline = Some(parse_row(line)?);
            } else if name == "nr_baseline" {
                nr_baseline = Some(parse_row(line)?);
            } else if name == "acc_drop" || name == "distill_gain" {
                continue;
            } else {
                return Err(bad(line));
            }
        }
        Ok(MetricTable {
            students,
            teachers,
            distilled,
            baseline: baseline.ok_or_else(|| bad("baseline"))?,
            nr_baseline: nr_baseline.ok_or_else(|| bad("nr_baseline"))?,
        })
    }
}

pub const MATRIX_SCHEMA: &str = "matrix/1";

/// One experiment matrix: a family at fixed depth/width, teacher policies
/// (trained residual), student policies (trained without shortcuts), seeds,
/// a dataset, and the shared training hyperparameters. The `distill` part of
/// `train` applies only to the distillation phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub family: NetFamily,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub widen: Option<usize>,
    pub dropout_p: f64,
    pub teachers: Vec<GroupingPolicy>,
    pub students: Vec<GroupingPolicy>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetHandle,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    schema: String,
    #[serde(flatten)]
    cfg: MatrixConfig,
}

impl MatrixConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MatrixDoc { schema: MATRIX_SCHEMA.into(), cfg: self.clone() })
            .expect("matrix config serialization")
    }

    pub fn from_json(text: &str) -> Result<MatrixConfig, ExperimentError> {
        let doc: MatrixDoc = serde_json::from_str(text)?;
        if doc.schema != MATRIX_SCHEMA {
            return Err(ExperimentError::Schema { expected: MATRIX_SCHEMA.into(), got: doc.schema });
        }
        Ok(doc.cfg)
    }

    pub fn build_spec(
        &self,
        policy: GroupingPolicy,
        residual: bool,
        num_classes: usize,
    ) -> Result<NetworkSpec, ArchError> {
        match self.family {
            NetFamily::Wrn => build_wrn(
                self.depth.unwrap_or(22),
                self.widen.unwrap_or(2),
                policy,
                residual,
                num_classes,
                self.dropout_p,
            ),
            NetFamily::ResNet18 => build_resnet18(policy, residual, num_classes),
            NetFamily::MobileNetV2 => build_mobilenetv2(policy, residual, num_classes),
        }
    }
}

pub struct MatrixOutcome {
    pub results: Vec<ExperimentResult>,
    pub table: MetricTable,
    /// (cell label, error) for every run that failed.
    pub failures: Vec<(String, String)>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs the whole matrix in dependency order. Each finished run is handed to
/// `sink` (for append-only persistence) in a deterministic order: residual
/// baselines, non-residual baselines, then distilled cells, each
/// teacher-major then seed-major.
pub fn run_matrix<E: Scalar>(
    cfg: &MatrixConfig,
    mut sink: impl FnMut(&ExperimentResult),
) -> Result<MatrixOutcome, ExperimentError> {
    let mut splits = load::<E>(&cfg.dataset)?;
    let norm = Normalizer::fit(&splits.train);
    norm.apply(&mut splits.train.images);
    norm.apply(&mut splits.test.images);
    let classes = splits.train.num_classes;
    let input_shape = splits.train.images.shape().to_vec();
    let cost_input = (input_shape[1], input_shape[2], input_shape[3]);

    let mut results = Vec::new();
    let mut failures: Vec<(String, String)> = Vec::new();
    // Residual hard-target models, kept to teach later cells.
    let mut r_models: BTreeMap<(String, u64), Model<E>> = BTreeMap::new();
    let mut hard = cfg.train.clone();
    hard.distill = None;

    let label = |policy: &GroupingPolicy, residual: bool| {
        format!("{}-{}", if residual { "R" } else { "NR" }, policy)
    };

    // Residual phase: every policy any later cell needs, teachers first.
    let mut r_policies: Vec<GroupingPolicy> = cfg.teachers.clone();
    for p in &cfg.students {
        if !r_policies.contains(p) {
            r_policies.push(*p);
        }
    }

    let run_one = |policy: GroupingPolicy,
                       residual: bool,
                       seed: u64,
                       teacher: Option<(&str, &mut Model<E>)>,
                       train_cfg: &TrainConfig,
                       results: &mut Vec<ExperimentResult>,
                       failures: &mut Vec<(String, String)>,
                       sink: &mut dyn FnMut(&ExperimentResult)|
     -> Option<Model<E>> {
        let teacher_name: Option<String> = teacher.as_ref().map(|(t, _)| t.to_string());
        let cell = match &teacher_name {
            Some(t) => format!("{} <- {} seed {}", label(&policy, residual), t, seed),
            None => format!("{} seed {}", label(&policy, residual), seed),
        };
        let mut cfg_run = train_cfg.clone();
        cfg_run.seed = seed;
        let attempt = || -> Result<(Model<E>, Vec<EpochRow>, u64, u64), ExperimentError> {
            let spec = cfg.build_spec(policy, residual, classes)?;
            let cost = network_cost(&spec, cost_input)?;
            let mut model = Model::init(spec, seed)?;
            let history = match teacher {
                Some((_, t)) => train(&mut model, Some(t), &splits.train, &splits.test, &cfg_run)?,
                None => train(&mut model, None, &splits.train, &splits.test, &cfg_run)?,
            };
            Ok((model, history, cost.params, cost.flops))
        };
        match attempt() {
            Ok((model, history, params, flops)) => {
                let last = history.last().expect("at least one epoch");
                let result = ExperimentResult {
                    family: cfg.family,
                    depth: model.spec.depth,
                    widen: model.spec.widen,
                    policy,
                    residual,
                    mode: match &teacher_name {
                        Some(t) => RunMode::Distilled { teacher: t.clone() },
                        None => RunMode::HardTarget,
                    },
                    seed,
                    top1_test: last.test_acc * 100.0,
                    top1_train: last.train_acc * 100.0,
                    params,
                    flops,
                    epochs: history.len(),
                };
                sink(&result);
                results.push(result);
                Some(model)
            }
            Err(e) => {
                failures.push((cell, e.to_string()));
                None
            }
        }
    };

    for policy in &r_policies {
        for &seed in &cfg.seeds {
            if let Some(m) =
                run_one(*policy, true, seed, None, &hard, &mut results, &mut failures, &mut sink)
            {
                r_models.insert((policy.to_string(), seed), m);
            }
        }
    }
    for policy in &cfg.students {
        for &seed in &cfg.seeds {
            run_one(*policy, false, seed, None, &hard, &mut results, &mut failures, &mut sink);
        }
    }
    let mut distill_cfg = cfg.train.clone();
    if distill_cfg.distill.is_none() {
        distill_cfg.distill = Some(Default::default());
    }
    for tp in &cfg.teachers {
        for sp in &cfg.students {
            for &seed in &cfg.seeds {
                let teacher_label = label(tp, true);
                let Some(teacher) = r_models.get_mut(&(tp.to_string(), seed)) else {
                    failures.push((
                        format!("{} <- {} seed {}", label(sp, false), teacher_label, seed),
                        "teacher run failed".into(),
                    ));
                    continue;
                };
                run_one(
                    *sp,
                    false,
                    seed,
                    Some((teacher_label.as_str(), teacher)),
                    &distill_cfg,
                    &mut results,
                    &mut failures,
                    &mut sink,
                );
            }
        }
    }

    // Aggregate to seed means.
    let acc_of = |policy: &GroupingPolicy, residual: bool, mode_teacher: Option<&str>| {
        let accs: Vec<f64> = results
            .iter()
            .filter(|r| {
                r.policy == *policy
                    && r.residual == residual
                    && match (&r.mode, mode_teacher) {
                        (RunMode::HardTarget, None) => true,
                        (RunMode::Distilled { teacher }, Some(t)) => teacher == t,
                        _ => false,
                    }
            })
            .map(|r| r.top1_test)
            .collect();
        mean(&accs)
    };

    let table = MetricTable {
        students: cfg.students.iter().map(|p| label(p, false)).collect(),
        teachers: cfg.teachers.iter().map(|p| label(p, true)).collect(),
        distilled: cfg
            .teachers
            .iter()
            .map(|tp| {
                let t = label(tp, true);
                cfg.students
                    .iter()
                    .map(|sp| acc_of(sp, false, Some(&t)))
                    .collect()
            })
            .collect(),
        baseline: cfg.students.iter().map(|p| acc_of(p, true, None)).collect(),
        nr_baseline: cfg.students.iter().map(|p| acc_of(p, false, None)).collect(),
    };

    Ok(MatrixOutcome { results, table, failures })
}

/// One penultimate-layer activation vector with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRow {
    pub sample: usize,
    pub class: usize,
    pub features: Vec<f64>,
}

/// Collects the classifier-input activations (inference mode) of every
/// sample in `ds` whose label is in `class_ids`, in dataset order.
pub fn export_activations<E: Scalar>(
    model: &mut Model<E>,
    ds: &Dataset<E>,
    class_ids: &[usize],
    batch_size: usize,
) -> Result<Vec<ActivationRow>, ExperimentError> {
    for &c in class_ids {
        if !ds.labels.contains(&c) {
            return Err(ExperimentError::UnknownClass(c));
        }
    }
    let picked: Vec<usize> =
        (0..ds.len()).filter(|&i| class_ids.contains(&ds.labels[i])).collect();
    let mut rows = Vec::with_capacity(picked.len());
    let mut rng = rng_for(0, "export", &[]);
    for chunk in picked.chunks(batch_size) {
        let (x, labels) = gather_batch(ds, chunk, None, &mut rng);
        let mut g = Graph::new();
        let fp = model.forward(&mut g, x, Mode::Eval, &mut rng)?;
        let feats = g.value(fp.features);
        let width = feats.shape()[1];
        for (bi, (&sample, class)) in chunk.iter().zip(labels).enumerate() {
            rows.push(ActivationRow {
                sample,
                class,
                features: feats.data()[bi * width..(bi + 1) * width]
                    .iter()
                    .map(|v| v.to_f64())
                    .collect(),
            });
        }
    }
    Ok(rows)
}

pub fn activations_csv(rows: &[ActivationRow]) -> String {
    let width = rows.first().map(|r| r.features.len()).unwrap_or(0);
    let mut out = String::from("sample_id,class_id");
    for i in 0..width {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.sample, r.class).unwrap();
        for v in &r.features {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// A projected point: (sample id, x, y, class id).
pub type ProjectedRow = (usize, f64, f64, usize);

/// Projects activation rows onto their top two principal components.
/// Features are centered first; components come from power iteration with
/// deflation, and each component's sign is fixed so its largest-magnitude
/// loading is positive, making the output reproducible bit for bit.
pub fn project_2d(rows: &[ActivationRow]) -> Result<Vec<ProjectedRow>, ExperimentError> {
    if rows.len() < 3 {
        return Err(ExperimentError::TooFewRows(rows.len()));
    }
    let n = rows.len();
    let d = rows[0].features.len();
    let mut centered: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    for j in 0..d {
        let mu = centered.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        for r in &mut centered {
            r[j] -= mu;
        }
    }
    if centered.iter().all(|r| r.iter().all(|&v| v.abs() < 1e-12)) {
        return Err(ExperimentError::DegenerateData);
    }

    // One principal axis by power iteration on the (implicit) covariance;
    // X^T (X v) avoids forming the d x d matrix.
    let component = |data: &[Vec<f64>], tag: u64| -> Vec<f64> {
        use rand::Rng;
        let mut rng = rng_for(0, "projection-start", &[tag]);
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        for _ in 0..500 {
            let xv: Vec<f64> = data.iter().map(|r| dot(r, &v)).collect();
            let mut next = vec![0.0; d];
            for (r, &c) in data.iter().zip(&xv) {
                for (nj, &rj) in next.iter_mut().zip(r) {
                    *nj += c * rj;
                }
            }
            if normalize(&mut next) < 1e-300 {
                break;
            }
            let delta: f64 =
                v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        // Sign convention: the largest-magnitude loading points positive.
        let lead = (0..d).fold(0, |b, j| if v[j].abs() > v[b].abs() { j } else { b });
        if v[lead] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        v
    };

    let v1 = component(&centered, 1);
    let mut deflated = centered.clone();
    for r in &mut deflated {
        let c = dot(r, &v1);
        for (rj, &vj) in r.iter_mut().zip(&v1) {
            *rj -= c * vj;
        }
    }
    let v2 = component(&deflated, 2);

    Ok(rows
        .iter()
        .zip(&centered)
        .map(|(row, r)| (row.sample, dot(r, &v1), dot(r, &v2), row.class))
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

pub fn projected_csv(rows: &[ProjectedRow]) -> String {
    let mut out = String::from("sample_id,class_id,x,y\n");
    for (sample, x, y, class) in rows {
        writeln!(out, "{sample},{class},{x},{y}").unwrap();
    }
    out
}

/// Per-class top-1 accuracy, indexed by class id.
pub fn per_class_accuracy<E: Scalar>(
    model: &mut Model<E>,
    ds: &Dataset<E>,
    batch_size: usize,
) -> Result<Vec<f64>, ExperimentError> {
    let mut hits = vec![0usize; ds.num_classes];
    let mut totals = vec![0usize; ds.num_classes];
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rng_for(0, "eval", &[]);
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = gather_batch(ds, chunk, None, &mut rng);
        let mut g = Graph::new();
        let fp = model.forward(&mut g, x, Mode::Eval, &mut rng)?;
        let pred = crate::distill::argmax_rows(g.value(fp.logits));
        for (p, l) in pred.iter().zip(&labels) {
            totals[*l] += 1;
            if p == l {
                hits[*l] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect())
}

/// The k classes with the lowest accuracy, worst first; ties break toward
/// the smaller class id.
pub fn worst_classes(per_class: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..per_class.len()).collect();
    order.sort_by(|&a, &b| per_class[a].total_cmp(&per_class[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
