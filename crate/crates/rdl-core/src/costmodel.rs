//! Exact integer parameter and FLOP accounting for network specs.
//!
//! Counting conventions (pinned by the reference tables in the tests):
//! - conv params: n * (m / t) * k^2 for t groups; FLOPs are multiply
//!   accumulates, params * out_h * out_w (no factor 2).
//! - batch norm: 2 parameters per channel, no FLOPs.
//! - classifier: in * out + out parameters, in * out FLOPs.
//! - activations, pooling, and the residual adds are free; projection
//!   shortcuts are counted and reported separately.

use crate::archspec::{ConvLayerSpec, LayerItem, NetworkSpec, ShortcutSpec};
use crate::kernels::conv_out_side;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("input has {got} channels, the stem expects {want}")]
    InputChannels { want: usize, got: usize },
    #[error("feature map {h}x{w} collapsed before layer {at}")]
    MapExhausted { at: String, h: usize, w: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub params: u64,
    pub flops: u64,
}

impl LayerCost {
    fn add(&mut self, other: LayerCost) {
        self.params += other.params;
        self.flops += other.flops;
    }
}

/// Cost of one convolution producing an `out_h` x `out_w` map.
pub fn conv_cost(c: &ConvLayerSpec, out_h: usize, out_w: usize) -> LayerCost {
    let params = c.out_channels as u64 * (c.in_channels / c.groups) as u64 * (c.kernel * c.kernel) as u64;
    LayerCost { params, flops: params * (out_h as u64) * (out_w as u64) }
}

/// Cost of one convolution on a square `f_out` x `f_out` output map.
pub fn layer_cost(c: &ConvLayerSpec, f_out: usize) -> LayerCost {
    conv_cost(c, f_out, f_out)
}

fn bn_cost(channels: usize) -> LayerCost {
    LayerCost { params: 2 * channels as u64, flops: 0 }
}

#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub label: String,
    /// Parameterized layers in network order, keyed by stable layer id.
    pub per_layer: Vec<(String, LayerCost)>,
    pub params: u64,
    pub flops: u64,
    /// The projection-shortcut share of the totals: exactly the cost the
    /// non-residual twin saves.
    pub shortcut_params: u64,
    pub shortcut_flops: u64,
    pub conventions: &'static str,
}

pub const CONVENTIONS: &str = "conv params n*(m/t)*k^2, flops params*out_area (MACs); \
batch norm 2 params/channel, 0 flops; classifier in*out+out params, in*out flops; \
activations, pooling and adds free; projection shortcuts counted";

/// Walks the spec with a feature map threaded through it, accumulating the
/// cost of every parameterized layer.
pub fn network_cost(spec: &NetworkSpec, input: (usize, usize, usize)) -> Result<CostReport, CostError> {
    let (c_in, mut h, mut w) = input;
    let stem_in = spec
        .stem
        .iter()
        .find_map(|l| match l {
            LayerItem::Conv(c) => Some(c.in_channels),
            _ => None,
        })
        .unwrap_or(c_in);
    if c_in != stem_in {
        return Err(CostError::InputChannels { want: stem_in, got: c_in });
    }

    let mut per_layer: Vec<(String, LayerCost)> = Vec::new();
    let mut total = LayerCost::default();
    let mut shortcut = LayerCost::default();

    let walk_items = |items: &[LayerItem],
                          scope: &str,
                          h: &mut usize,
                          w: &mut usize,
                          per_layer: &mut Vec<(String, LayerCost)>,
                          total: &mut LayerCost|
     -> Result<(), CostError> {
        let (mut ci, mut bi) = (0usize, 0usize);
        for item in items {
            match item {
                LayerItem::Conv(c) => {
                    let oh = conv_out_side(*h, c.kernel, c.stride, c.padding);
                    let ow = conv_out_side(*w, c.kernel, c.stride, c.padding);
                    if oh == 0 || ow == 0 {
                        return Err(CostError::MapExhausted { at: format!("{scope}.conv{ci}"), h: *h, w: *w });
                    }
                    let cost = conv_cost(c, oh, ow);
                    per_layer.push((format!("{scope}.conv{ci}"), cost));
                    total.add(cost);
                    *h = oh;
                    *w = ow;
                    ci += 1;
                }
                LayerItem::BatchNorm { channels } => {
                    let cost = bn_cost(*channels);
                    per_layer.push((format!("{scope}.bn{bi}"), cost));
                    total.add(cost);
                    bi += 1;
                }
                LayerItem::Relu | LayerItem::Dropout { .. } => {}
            }
        }
        Ok(())
    };

    walk_items(&spec.stem, "stem", &mut h, &mut w, &mut per_layer, &mut total)?;
    for block in &spec.blocks {
        let (bh, bw) = (h, w);
        walk_items(&block.layers, &block.id(), &mut h, &mut w, &mut per_layer, &mut total)?;
        if let ShortcutSpec::Projection1x1 { conv, batch_norm } = &block.shortcut {
            let oh = conv_out_side(bh, conv.kernel, conv.stride, conv.padding);
            let ow = conv_out_side(bw, conv.kernel, conv.stride, conv.padding);
            let cost = conv_cost(conv, oh, ow);
            per_layer.push((format!("{}.shortcut.conv", block.id()), cost));
            total.add(cost);
            shortcut.add(cost);
            if *batch_norm {
                let cost = bn_cost(conv.out_channels);
                per_layer.push((format!("{}.shortcut.bn", block.id()), cost));
                total.add(cost);
                shortcut.add(cost);
            }
        }
    }
    walk_items(&spec.head, "head", &mut h, &mut w, &mut per_layer, &mut total)?;

    let fc = &spec.classifier;
    let fc_params = (fc.in_features * fc.out_features + if fc.bias { fc.out_features } else { 0 }) as u64;
    let fc_cost = LayerCost { params: fc_params, flops: (fc.in_features * fc.out_features) as u64 };
    per_layer.push(("fc".into(), fc_cost));
    total.add(fc_cost);

    Ok(CostReport {
        label: spec.label(),
        per_layer,
        params: total.params,
        flops: total.flops,
        shortcut_params: shortcut.params,
        shortcut_flops: shortcut.flops,
        conventions: CONVENTIONS,
    })
}

/// Rebuilds the spec under each policy and reports its cost. Policies that
/// do not divide the architecture's widths are skipped with the error kept
/// in the row.
pub fn cost_table(
    base: &NetworkSpec,
    policies: &[crate::archspec::GroupingPolicy],
    input: (usize, usize, usize),
) -> Vec<(crate::archspec::GroupingPolicy, Result<CostReport, String>)> {
    policies
        .iter()
        .map(|&policy| {
            let row = crate::archspec::rebuild_with_policy(base, policy)
                .map_err(|e| e.to_string())
                .and_then(|spec| network_cost(&spec, input).map_err(|e| e.to_string()));
            (policy, row)
        })
        .collect()
}

/// Renders a raw count in millions to 4 significant digits, round half to
/// even, trailing zeros trimmed: 93_652_000 -> "93.65", 656_012 -> "0.656",
/// 16_003_000 -> "16".
pub fn format_millions(x: u64) -> String {
    let v = x as f64 / 1e6;
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (3 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
