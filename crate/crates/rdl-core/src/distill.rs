//! Training: SGD with momentum, learning-rate schedules, the distillation
//! objective, and a deterministic epoch loop with per-epoch metrics.
//!
//! Determinism contract: given the same config, datasets, and initial model,
//! `train` produces bitwise identical parameters and history on every run.
//! Every random choice (shuffle order, augmentation, dropout masks) comes
//! from a substream named by (seed, purpose, epoch, step).

use crate::data::{gather_batch, Dataset};
use crate::graph::{softmax_rows, Graph, GraphError, Mode, Var};
use crate::model::Model;
use crate::tensor::{Parameter, Scalar, Tensor};
use crate::util::rng_for;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("teacher produced {teacher} classes, student {student}")]
    ClassMismatch { teacher: usize, student: usize },
    #[error("training config document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected schema {expected}, got {got}")]
    Schema { expected: String, got: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> SgdConfig {
        SgdConfig { lr0: 0.1, momentum: 0.9, weight_decay: 4e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Divide the rate by `factor` at every milestone epoch reached.
    StepDecay { milestones: Vec<usize>, factor: f64 },
    /// Multiply by `gamma` each epoch.
    Exponential { gamma: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, lr0: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::StepDecay { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                lr0 / factor.powi(passed as i32)
            }
            LrSchedule::Exponential { gamma } => lr0 * gamma.powi(epoch as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    /// Scale the soft term by T^2 so its gradient magnitude stays comparable
    /// to the hard term as the temperature changes.
    pub square_temperature: bool,
}

impl Default for DistillConfig {
    fn default() -> DistillConfig {
        DistillConfig { temperature: 4.0, alpha: 0.9, square_temperature: true }
    }
}

pub const TRAINCFG_SCHEMA: &str = "traincfg/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Reflect-padding amount for train-time crops; `None` disables
    /// augmentation.
    pub augment_pad: Option<usize>,
    pub distill: Option<DistillConfig>,
}

#[derive(Serialize, Deserialize)]
struct TrainDoc {
    schema: String,
    #[serde(flatten)]
    cfg: TrainConfig,
}

impl TrainConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TrainDoc { schema: TRAINCFG_SCHEMA.into(), cfg: self.clone() })
            .expect("train config serialization")
    }

    pub fn from_json(text: &str) -> Result<TrainConfig, TrainError> {
        let doc: TrainDoc = serde_json::from_str(text)?;
        if doc.schema != TRAINCFG_SCHEMA {
            return Err(TrainError::Schema { expected: TRAINCFG_SCHEMA.into(), got: doc.schema });
        }
        Ok(doc.cfg)
    }
}

/// The distillation objective on one batch:
///
/// alpha * T^2 * KL(teacher_T || student_T)  +  (1 - alpha) * CE(student, labels)
///
/// where `_T` denotes temperature-softened distributions. With alpha = 0 this
/// returns the plain cross-entropy node unchanged, so a hard-target run and a
/// distillation run with alpha = 0 build byte-identical graphs.
pub fn kd_loss<E: Scalar>(
    g: &mut Graph<E>,
    student_logits: Var,
    teacher_logits: &Tensor<E>,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<Var, GraphError> {
    let ce = g.cross_entropy(student_logits, labels)?;
    if cfg.alpha == 0.0 {
        return Ok(ce);
    }
    let targets = softmax_rows(teacher_logits, cfg.temperature);
    let softened = g.softmax_t(student_logits, cfg.temperature)?;
    let kl = g.kl_div(&targets, softened)?;
    let t2 = if cfg.square_temperature { cfg.temperature * cfg.temperature } else { 1.0 };
    let soft = g.scale(kl, cfg.alpha * t2);
    let hard = g.scale(ce, 1.0 - cfg.alpha);
    g.add(soft, hard)
}

/// SGD with classical momentum:
///
///   v <- momentum * v + (g + weight_decay * p)
///   p <- p - lr * v
///
/// Weight decay applies only to parameters flagged for it (conv and
/// classifier weights, not BN affine or bias terms). Gradients are cleared
/// after each step.
pub struct Sgd<E: Scalar> {
    pub cfg: SgdConfig,
    velocity: Vec<Tensor<E>>,
}

impl<E: Scalar> Sgd<E> {
    pub fn new(cfg: SgdConfig, params: &[Parameter<E>]) -> Sgd<E> {
        let velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Sgd { cfg, velocity }
    }

    pub fn step(&mut self, params: &mut [Parameter<E>], lr: f64) {
        let mu = E::from_f64(self.cfg.momentum);
        let wd = E::from_f64(self.cfg.weight_decay);
        let lr = E::from_f64(lr);
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let Some(grad) = p.grad.as_ref() else { continue };
            for ((vv, &gv), pv) in
                v.data_mut().iter_mut().zip(grad.data()).zip(p.value.data_mut().iter())
            {
                let g = if p.decay { gv + wd * *pv } else { gv };
                *vv = mu * *vv + g;
            }
            for (pv, &vv) in p.value.data_mut().iter_mut().zip(v.data()) {
                *pv -= lr * vv;
            }
            p.zero_grad();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc";

pub fn history_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
        ));
    }
    out
}

pub fn argmax_rows<E: Scalar>(logits: &Tensor<E>) -> Vec<usize> {
    let [n, c] = [logits.shape()[0], logits.shape()[1]];
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Top-1 accuracy over a dataset, evaluated in inference mode.
pub fn evaluate<E: Scalar>(
    model: &mut Model<E>,
    ds: &Dataset<E>,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rng_for(0, "eval", &[]);
    let mut hits = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = gather_batch(ds, chunk, None, &mut rng);
        let mut g = Graph::new();
        let fp = model.forward(&mut g, x, Mode::Eval, &mut rng)?;
        let pred = argmax_rows(g.value(fp.logits));
        hits += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// Runs the full loop: shuffle, augment, forward, loss, backward, SGD, and a
/// test-set evaluation per epoch. If a teacher is given, every batch also
/// passes through it in inference mode and the distillation objective is
/// used; teacher parameters never receive gradients or updates.
pub fn train<E: Scalar>(
    model: &mut Model<E>,
    teacher: Option<&mut Model<E>>,
    train_set: &Dataset<E>,
    test_set: &Dataset<E>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRow>, TrainError> {
    if let (Some(t), s) = (&teacher, &model.spec) {
        if t.spec.classifier.out_features != s.classifier.out_features {
            return Err(TrainError::ClassMismatch {
                teacher: t.spec.classifier.out_features,
                student: s.classifier.out_features,
            });
        }
    }
    let distill = cfg.distill.clone().unwrap_or_default();
    let mut teacher = teacher;
    let mut sgd = Sgd::new(cfg.sgd.clone(), &model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = train_set.len();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(cfg.sgd.lr0, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, "shuffle", &[epoch as u64]));

        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut aug_rng = rng_for(cfg.seed, "augment", &[epoch as u64, step as u64]);
            let (x, labels) = gather_batch(train_set, chunk, cfg.augment_pad, &mut aug_rng);

            let teacher_logits = match teacher.as_deref_mut() {
                Some(t) => {
                    let mut tg = Graph::new();
                    let mut trng = rng_for(cfg.seed, "teacher", &[]);
                    let fp = t.forward(&mut tg, x.clone(), Mode::Eval, &mut trng)?;
                    Some(tg.value(fp.logits).clone())
                }
                None => None,
            };

            let mut g = Graph::new();
            let mut drop_rng = rng_for(cfg.seed, "dropout", &[epoch as u64, step as u64]);
            let fp = model.forward(&mut g, x, Mode::Train, &mut drop_rng)?;
            let loss = match &teacher_logits {
                Some(tl) => kd_loss(&mut g, fp.logits, tl, &labels, &distill)?,
                None => g.cross_entropy(fp.logits, &labels)?,
            };

            loss_sum += g.value(loss).item().to_f64() * chunk.len() as f64;
            let pred = argmax_rows(g.value(fp.logits));
            hits += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();

            g.backward(loss, &mut model.params)?;
            sgd.step(&mut model.params, lr);
        }

        let test_acc = evaluate(model, test_set, cfg.batch_size)?;
        history.push(EpochRow {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: hits as f64 / n as f64,
            test_acc,
        });
    }
    Ok(history)
}
