//! Lowers a network spec to concrete parameters plus a forward program, and
//! moves both through checkpoints.
//!
//! Parameter names are derived from the spec's stable layer ids
//! (`s1.b0.conv0.weight`, `s1.b0.bn2.gamma`, `fc.bias`, ...), so a cost
//! report's per-layer rows and a checkpoint's records line up with the model
//! without any positional bookkeeping.

use crate::archspec::{ConvLayerSpec, LayerItem, NetworkSpec, ShortcutSpec, ShortcutTap};
use crate::graph::{BnState, Graph, GraphError, Mode, Var};
use crate::io::{load_checkpoint, save_checkpoint, IoError, Record};
use crate::tensor::{Parameter, Scalar, Tensor};
use crate::util::rng_for;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("spec fails validation: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint holds unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name}: checkpoint shape {got:?}, model expects {want:?}")]
    TensorShape { name: String, want: Vec<usize>, got: Vec<usize> },
}

enum Inst {
    Conv { w: usize, stride: usize, padding: usize, groups: usize },
    Bn { gamma: usize, beta: usize, state: usize },
    Relu,
    Dropout { p: f64 },
}

enum ShortcutProgram {
    None,
    Identity,
    Projection { w: usize, stride: usize, bn: Option<(usize, usize, usize)> },
}

struct BlockProgram {
    main: Vec<Inst>,
    tap: ShortcutTap,
    shortcut: ShortcutProgram,
    post_relu: bool,
}

struct Program {
    stem: Vec<Inst>,
    blocks: Vec<BlockProgram>,
    head: Vec<Inst>,
    fc_w: usize,
    fc_b: usize,
}

pub struct ForwardPass {
    /// Globally pooled features, [batch, channels].
    pub features: Var,
    /// Classifier output, [batch, classes].
    pub logits: Var,
}

pub struct Model<E: Scalar> {
    pub spec: NetworkSpec,
    pub params: Vec<Parameter<E>>,
    pub bn_states: Vec<BnState<E>>,
    bn_ids: Vec<String>,
    program: Program,
}

fn conv_param<E: Scalar>(name: String, c: &ConvLayerSpec, seed: u64) -> Parameter<E> {
    let shape = [c.out_channels, c.in_channels / c.groups, c.kernel, c.kernel];
    let fan_out = (c.out_channels / c.groups) as f64 * (c.kernel * c.kernel) as f64;
    let std = (2.0 / fan_out).sqrt();
    let mut rng = rng_for(seed, &name, &[]);
    Parameter::new(name, Tensor::randn(&shape, std, &mut rng), true)
}

struct Builder<E: Scalar> {
    seed: u64,
    params: Vec<Parameter<E>>,
    bn_states: Vec<BnState<E>>,
    bn_ids: Vec<String>,
}

impl<E: Scalar> Builder<E> {
    fn lower(&mut self, items: &[LayerItem], scope: &str) -> Vec<Inst> {
        let (mut ci, mut bi) = (0usize, 0usize);
        let mut insts = Vec::with_capacity(items.len());
        for item in items {
            match item {
                LayerItem::Conv(c) => {
                    let name = format!("{scope}.conv{ci}.weight");
                    self.params.push(conv_param(name, c, self.seed));
                    insts.push(Inst::Conv {
                        w: self.params.len() - 1,
                        stride: c.stride,
                        padding: c.padding,
                        groups: c.groups,
                    });
                    ci += 1;
                }
                LayerItem::BatchNorm { channels } => {
                    let id = format!("{scope}.bn{bi}");
                    self.params.push(Parameter::new(
                        format!("{id}.gamma"),
                        Tensor::full(&[*channels], E::one()),
                        false,
                    ));
                    self.params.push(Parameter::new(
                        format!("{id}.beta"),
                        Tensor::zeros(&[*channels]),
                        false,
                    ));
                    self.bn_states.push(BnState::new(*channels));
                    self.bn_ids.push(id);
                    insts.push(Inst::Bn {
                        gamma: self.params.len() - 2,
                        beta: self.params.len() - 1,
                        state: self.bn_states.len() - 1,
                    });
                    bi += 1;
                }
                LayerItem::Relu => insts.push(Inst::Relu),
                LayerItem::Dropout { p } => insts.push(Inst::Dropout { p: *p }),
            }
        }
        insts
    }
}

impl<E: Scalar> Model<E> {
    /// Fresh parameters for `spec`: conv weights N(0, sqrt(2 / fan_out)) with
    /// the group-aware fan-out n k^2 / t, batch norm at identity, classifier
    /// uniform in +-1/sqrt(fan_in). Each tensor draws from its own named
    /// substream of `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Model<E>, ModelError> {
        let violations = crate::archspec::validate(&spec);
        if !violations.is_empty() {
            let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(ModelError::InvalidSpec(lines.join("; ")));
        }
        let mut b = Builder { seed, params: Vec::new(), bn_states: Vec::new(), bn_ids: Vec::new() };

        let stem = b.lower(&spec.stem, "stem");
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for block in &spec.blocks {
            let id = block.id();
            let main = b.lower(&block.layers, &id);
            let shortcut = match &block.shortcut {
                ShortcutSpec::None => ShortcutProgram::None,
                ShortcutSpec::Identity => ShortcutProgram::Identity,
                ShortcutSpec::Projection1x1 { conv, batch_norm } => {
                    let name = format!("{id}.shortcut.conv.weight");
                    b.params.push(conv_param(name, conv, seed));
                    let w = b.params.len() - 1;
                    let bn = if *batch_norm {
                        let bn_id = format!("{id}.shortcut.bn");
                        b.params.push(Parameter::new(
                            format!("{bn_id}.gamma"),
                            Tensor::full(&[conv.out_channels], E::one()),
                            false,
                        ));
                        b.params.push(Parameter::new(
                            format!("{bn_id}.beta"),
                            Tensor::zeros(&[conv.out_channels]),
                            false,
                        ));
                        b.bn_states.push(BnState::new(conv.out_channels));
                        b.bn_ids.push(bn_id);
                        Some((b.params.len() - 2, b.params.len() - 1, b.bn_states.len() - 1))
                    } else {
                        None
                    };
                    ShortcutProgram::Projection { w, stride: conv.stride, bn }
                }
            };
            blocks.push(BlockProgram {
                main,
                tap: block.shortcut_tap,
                shortcut,
                post_relu: block.post_relu,
            });
        }
        let head = b.lower(&spec.head, "head");

        let fc = &spec.classifier;
        let bound = 1.0 / (fc.in_features as f64).sqrt();
        let mut rng = rng_for(seed, "fc.weight", &[]);
        b.params.push(Parameter::new(
            "fc.weight",
            Tensor::uniform(&[fc.out_features, fc.in_features], -bound, bound, &mut rng),
            true,
        ));
        let mut rng = rng_for(seed, "fc.bias", &[]);
        b.params.push(Parameter::new(
            "fc.bias",
            Tensor::uniform(&[fc.out_features], -bound, bound, &mut rng),
            false,
        ));
        let fc_w = b.params.len() - 2;
        let fc_b = b.params.len() - 1;

        Ok(Model {
            spec,
            params: b.params,
            bn_states: b.bn_states,
            bn_ids: b.bn_ids,
            program: Program { stem, blocks, head, fc_w, fc_b },
        })
    }

    pub fn num_params(&self) -> u64 {
        self.params.iter().map(|p| p.value.numel() as u64).sum()
    }

    pub fn param_named(&self, name: &str) -> Option<&Parameter<E>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Records one forward pass on the graph. Train mode updates batch-norm
    /// running statistics and draws dropout masks from `rng`; eval mode is a
    /// pure function of the parameters.
    pub fn forward(
        &mut self,
        g: &mut Graph<E>,
        x: Tensor<E>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass, GraphError> {
        let program = &self.program;
        let params = &self.params;
        let bn_states = &mut self.bn_states;

        fn run<E: Scalar>(
            g: &mut Graph<E>,
            insts: &[Inst],
            mut cur: Var,
            params: &[Parameter<E>],
            bn_states: &mut [BnState<E>],
            mode: Mode,
            rng: &mut ChaCha8Rng,
            tap_after: Option<usize>,
        ) -> Result<(Var, Option<Var>), GraphError> {
            let mut tapped = None;
            for (i, inst) in insts.iter().enumerate() {
                cur = match inst {
                    Inst::Conv { w, stride, padding, groups } => {
                        let wv = g.param(*w, &params[*w].value);
                        g.conv2d(cur, wv, *stride, *padding, *groups)?
                    }
                    Inst::Bn { gamma, beta, state } => {
                        let gv = g.param(*gamma, &params[*gamma].value);
                        let bv = g.param(*beta, &params[*beta].value);
                        g.batch_norm(cur, gv, bv, &mut bn_states[*state], mode, BN_MOMENTUM, BN_EPSILON)?
                    }
                    Inst::Relu => g.relu(cur),
                    Inst::Dropout { p } => g.dropout(cur, *p, mode, rng)?,
                };
                if tap_after == Some(i) {
                    tapped = Some(cur);
                }
            }
            Ok((cur, tapped))
        }

        let mut cur = g.input(x);
        (cur, _) = run(g, &program.stem, cur, params, bn_states, mode, rng, None)?;

        for block in &program.blocks {
            let block_in = cur;
            let tap_after = match block.tap {
                ShortcutTap::BlockInput => None,
                ShortcutTap::AfterItem { index } => Some(index),
            };
            let (out, tapped) =
                run(g, &block.main, cur, params, bn_states, mode, rng, tap_after)?;
            cur = out;
            let tap = tapped.unwrap_or(block_in);
            match &block.shortcut {
                ShortcutProgram::None => {}
                ShortcutProgram::Identity => {
                    cur = g.add(cur, block_in)?;
                }
                ShortcutProgram::Projection { w, stride, bn } => {
                    let wv = g.param(*w, &params[*w].value);
                    let mut s = g.conv2d(tap, wv, *stride, 0, 1)?;
                    if let Some((gamma, beta, state)) = bn {
                        let gv = g.param(*gamma, &params[*gamma].value);
                        let bv = g.param(*beta, &params[*beta].value);
                        s = g.batch_norm(s, gv, bv, &mut bn_states[*state], mode, BN_MOMENTUM, BN_EPSILON)?;
                    }
                    cur = g.add(cur, s)?;
                }
            }
            if block.post_relu {
                cur = g.relu(cur);
            }
        }

        (cur, _) = run(g, &program.head, cur, params, bn_states, mode, rng, None)?;
        let features = g.global_avg_pool(cur)?;
        let wv = g.param(program.fc_w, &params[program.fc_w].value);
        let bv = g.param(program.fc_b, &params[program.fc_b].value);
        let logits = g.linear(features, wv, bv)?;
        Ok(ForwardPass { features, logits })
    }

    /// Writes parameters and batch-norm running statistics atomically.
    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut records: Vec<Record> =
            self.params.iter().map(|p| Record::from_tensor(p.name.clone(), &p.value)).collect();
        for (id, state) in self.bn_ids.iter().zip(&self.bn_states) {
            records.push(Record::from_tensor(format!("{id}.running_mean"), &state.running_mean));
            records.push(Record::from_tensor(format!("{id}.running_var"), &state.running_var));
        }
        save_checkpoint(path, &records)
    }

    /// Rebuilds a model for `spec` from a checkpoint. Every tensor the spec
    /// implies must be present with its exact shape, and nothing extra may be
    /// in the file.
    pub fn load(spec: NetworkSpec, path: &Path) -> Result<Model<E>, ModelError> {
        let mut model = Model::init(spec, 0)?;
        let records = load_checkpoint(path)?;
        let mut by_name: HashMap<String, Record> =
            records.into_iter().map(|r| (r.name.clone(), r)).collect();

        let mut fill = |name: &str, dst: &mut Tensor<E>| -> Result<(), ModelError> {
            let rec = by_name.remove(name).ok_or_else(|| ModelError::MissingTensor(name.into()))?;
            if rec.shape != dst.shape() {
                return Err(ModelError::TensorShape {
                    name: name.into(),
                    want: dst.shape().to_vec(),
                    got: rec.shape,
                });
            }
            *dst = rec.to_tensor()?;
            Ok(())
        };

        for i in 0..model.params.len() {
            let name = model.params[i].name.clone();
            fill(&name, &mut model.params[i].value)?;
        }
        for i in 0..model.bn_states.len() {
            let id = model.bn_ids[i].clone();
            fill(&format!("{id}.running_mean"), &mut model.bn_states[i].running_mean)?;
            fill(&format!("{id}.running_var"), &mut model.bn_states[i].running_var)?;
        }
        if let Some(name) = by_name.keys().next() {
            return Err(ModelError::UnexpectedTensor(name.clone()));
        }
        Ok(model)
    }
}
