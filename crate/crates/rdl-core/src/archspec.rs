//! Declarative construction and validation of the network variants: residual
//! baselines, their non-residual twins, and grouping-policy substitutions.
//!
//! Structural conventions (fixed by calibrating against the reference cost
//! tables; see the repository README):
//! - Each original 3x3 convolution becomes a [3x3 grouped conv -> 1x1 conv]
//!   pair. The grouped conv is channel-preserving (m -> m) and carries the
//!   block's stride; the 1x1 performs the m -> n channel change and mixes
//!   information across groups. Batch norm and ReLU sit between the pair.
//! - WRN blocks are pre-activation; ResNet-18 blocks post-activation; the
//!   MobileNetV2 inverted bottleneck keeps its linear output.
//! - Projection (1x1) shortcuts exist only on blocks that change shape
//!   (stride != 1 or m != n); shape-preserving residual blocks use identity
//!   shortcuts. Disabling residual removes every shortcut (WRN/ResNet-18)
//!   or only the identity add (MobileNetV2).
//! - MobileNetV2 is adapted to 32x32 inputs: stem stride 1, stage strides
//!   (1,2,1,2,2,1,1), so the final map is 4x4.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const SCHEMA: &str = "archspec/1";

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("policy {policy} does not divide {m} input channels")]
    NonDivisible { policy: String, m: usize },
    #[error("depth {0}: (d - 4) / 6 must be a positive integer")]
    InvalidDepth(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("expected schema {expected}, got {got}")]
    Schema { expected: String, got: String },
    #[error("spec document: {0}")]
    Json(#[from] serde_json::Error),
}

/// How a layer's channels are split into independently convolved groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GroupingPolicy {
    /// One group: ordinary convolution.
    Standard,
    /// Fixed number of groups g network-wide; channels per group grow with
    /// width.
    ConstantGroups(usize),
    /// Fixed channels per group G network-wide; the group count m/G grows
    /// with width.
    ConstantGroupSize(usize),
    /// One group per channel.
    Depthwise,
}

impl GroupingPolicy {
    /// Group count for a layer with `m` input channels. The result always
    /// divides `m`.
    pub fn resolve_groups(&self, m: usize) -> Result<usize, ArchError> {
        if m == 0 {
            return Err(ArchError::InvalidArgument("layer has zero channels".into()));
        }
        let err = || ArchError::NonDivisible { policy: self.to_string(), m };
        match *self {
            GroupingPolicy::Standard => Ok(1),
            GroupingPolicy::ConstantGroups(g) => {
                if g == 0 || m % g != 0 {
                    Err(err())
                } else {
                    Ok(g)
                }
            }
            GroupingPolicy::ConstantGroupSize(size) => {
                if size == 0 || m % size != 0 {
                    Err(err())
                } else {
                    Ok(m / size)
                }
            }
            GroupingPolicy::Depthwise => Ok(m),
        }
    }
}

impl fmt::Display for GroupingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupingPolicy::Standard => write!(f, "std"),
            GroupingPolicy::ConstantGroups(g) => write!(f, "g={g}"),
            GroupingPolicy::ConstantGroupSize(s) => write!(f, "G={s}"),
            GroupingPolicy::Depthwise => write!(f, "dw"),
        }
    }
}

impl FromStr for GroupingPolicy {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, ArchError> {
        let bad = || ArchError::InvalidArgument(format!("unrecognized policy '{s}' (std, dw, g=N, G=N)"));
        match s {
            "std" | "standard" => Ok(GroupingPolicy::Standard),
            "dw" | "depthwise" => Ok(GroupingPolicy::Depthwise),
            _ => {
                let (kind, val) = s.split_once('=').ok_or_else(bad)?;
                let v: usize = val.parse().map_err(|_| bad())?;
                if v == 0 {
                    return Err(bad());
                }
                match kind {
                    "g" => Ok(GroupingPolicy::ConstantGroups(v)),
                    "G" => Ok(GroupingPolicy::ConstantGroupSize(v)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvRole {
    Spatial3x3,
    Pointwise1x1,
    Shortcut1x1,
    Stem,
    ClassifierAdjacent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Resolved group count (not the policy): 1 for everything except
    /// spatial 3x3 layers under a grouping policy.
    pub groups: usize,
    pub role: ConvRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerItem {
    Conv(ConvLayerSpec),
    BatchNorm { channels: usize },
    Relu,
    Dropout { p: f64 },
}

/// Where a block's shortcut branch taps the incoming activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "point", rename_all = "snake_case")]
pub enum ShortcutTap {
    BlockInput,
    /// After the main path's item at this index (pre-activation WRN taps the
    /// shared BN-ReLU when projecting).
    AfterItem { index: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShortcutSpec {
    None,
    Identity,
    Projection1x1 { conv: ConvLayerSpec, batch_norm: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockFamily {
    WrnBasic,
    ResNet18Basic,
    Mv2Inverted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub family: BlockFamily,
    pub stage: usize,
    pub index: usize,
    pub layers: Vec<LayerItem>,
    pub shortcut: ShortcutSpec,
    pub shortcut_tap: ShortcutTap,
    /// ResNet-18 applies ReLU after the add (or after the main path when
    /// non-residual).
    pub post_relu: bool,
}

impl BlockSpec {
    pub fn id(&self) -> String {
        format!("s{}.b{}", self.stage, self.index)
    }

    pub fn in_channels(&self) -> usize {
        self.convs().next().map(|c| c.in_channels).unwrap_or(0)
    }

    pub fn out_channels(&self) -> usize {
        self.convs().last().map(|c| c.out_channels).unwrap_or(0)
    }

    pub fn stride(&self) -> usize {
        self.convs().map(|c| c.stride).product()
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvLayerSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerItem::Conv(c) => Some(c),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetFamily {
    Wrn,
    ResNet18,
    MobileNetV2,
}

impl fmt::Display for NetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetFamily::Wrn => write!(f, "wrn"),
            NetFamily::ResNet18 => write!(f, "resnet18"),
            NetFamily::MobileNetV2 => write!(f, "mobilenetv2"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: NetFamily,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub widen: Option<usize>,
    pub policy: GroupingPolicy,
    pub residual: bool,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub stem: Vec<LayerItem>,
    pub blocks: Vec<BlockSpec>,
    pub head: Vec<LayerItem>,
    pub classifier: LinearSpec,
}

impl NetworkSpec {
    /// Short human-readable tag, e.g. "wrn22x2-g=4-R".
    pub fn label(&self) -> String {
        let fam = match (self.family, self.depth, self.widen) {
            (NetFamily::Wrn, Some(d), Some(w)) => format!("wrn{d}x{w}"),
            (f, _, _) => f.to_string(),
        };
        format!("{}-{}-{}", fam, self.policy, if self.residual { "R" } else { "NR" })
    }

    /// All convolutions in network order, including shortcut projections,
    /// paired with stable layer ids.
    pub fn all_convs(&self) -> Vec<(String, &ConvLayerSpec)> {
        let mut out = Vec::new();
        let mut stem_i = 0usize;
        for item in &self.stem {
            if let LayerItem::Conv(c) = item {
                out.push((format!("stem.conv{stem_i}"), c));
                stem_i += 1;
            }
        }
        for b in &self.blocks {
            let mut ci = 0usize;
            for item in &b.layers {
                if let LayerItem::Conv(c) = item {
                    out.push((format!("{}.conv{ci}", b.id()), c));
                    ci += 1;
                }
            }
            if let ShortcutSpec::Projection1x1 { conv, .. } = &b.shortcut {
                out.push((format!("{}.shortcut.conv", b.id()), conv));
            }
        }
        let mut head_i = 0usize;
        for item in &self.head {
            if let LayerItem::Conv(c) = item {
                out.push((format!("head.conv{head_i}"), c));
                head_i += 1;
            }
        }
        out
    }
}

fn conv(
    m: usize,
    n: usize,
    k: usize,
    stride: usize,
    groups: usize,
    role: ConvRole,
) -> LayerItem {
    LayerItem::Conv(ConvLayerSpec {
        in_channels: m,
        out_channels: n,
        kernel: k,
        stride,
        padding: k / 2,
        groups,
        role,
    })
}

fn bn(channels: usize) -> LayerItem {
    LayerItem::BatchNorm { channels }
}

/// The [3x3 grouped -> 1x1] pair replacing one original 3x3 convolution.
fn gconv_pair(
    m: usize,
    n: usize,
    stride: usize,
    policy: &GroupingPolicy,
    out: &mut Vec<LayerItem>,
) -> Result<(), ArchError> {
    let t = policy.resolve_groups(m)?;
    out.push(conv(m, m, 3, stride, t, ConvRole::Spatial3x3));
    out.push(bn(m));
    out.push(LayerItem::Relu);
    out.push(conv(m, n, 1, 1, 1, ConvRole::Pointwise1x1));
    Ok(())
}

fn shortcut_for(
    residual: bool,
    m: usize,
    n: usize,
    stride: usize,
    with_bn: bool,
) -> ShortcutSpec {
    if !residual {
        ShortcutSpec::None
    } else if stride != 1 || m != n {
        ShortcutSpec::Projection1x1 {
            conv: ConvLayerSpec {
                in_channels: m,
                out_channels: n,
                kernel: 1,
                stride,
                padding: 0,
                groups: 1,
                role: ConvRole::Shortcut1x1,
            },
            batch_norm: with_bn,
        }
    } else {
        ShortcutSpec::Identity
    }
}

/// Wide residual network for 32x32 inputs: depth d = 6r + 4, three stages of
/// r pre-activation blocks at widths 16/32/64 times `widen`, strides 1/2/2.
pub fn build_wrn(
    depth: usize,
    widen: usize,
    policy: GroupingPolicy,
    residual: bool,
    num_classes: usize,
    dropout_p: f64,
) -> Result<NetworkSpec, ArchError> {
    if depth < 10 || (depth - 4) % 6 != 0 {
        return Err(ArchError::InvalidDepth(depth));
    }
    if widen == 0 {
        return Err(ArchError::InvalidArgument("widen factor must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(ArchError::InvalidArgument(format!("dropout_p {dropout_p} outside [0, 1)")));
    }
    let r = (depth - 4) / 6;
    let widths = [16 * widen, 32 * widen, 64 * widen];
    let strides = [1usize, 2, 2];

    let stem = vec![conv(3, 16, 3, 1, 1, ConvRole::Stem)];
    let mut blocks = Vec::new();
    let mut cin = 16usize;
    for stage in 0..3 {
        for b in 0..r {
            let s = if b == 0 { strides[stage] } else { 1 };
            let (m, n) = (cin, widths[stage]);
            let mut layers = vec![bn(m), LayerItem::Relu];
            gconv_pair(m, n, s, &policy, &mut layers)?;
            layers.push(bn(n));
            layers.push(LayerItem::Relu);
            layers.push(LayerItem::Dropout { p: dropout_p });
            gconv_pair(n, n, 1, &policy, &mut layers)?;
            let shortcut = shortcut_for(residual, m, n, s, false);
            let tap = match shortcut {
                ShortcutSpec::Projection1x1 { .. } => ShortcutTap::AfterItem { index: 1 },
                _ => ShortcutTap::BlockInput,
            };
            blocks.push(BlockSpec {
                family: BlockFamily::WrnBasic,
                stage,
                index: b,
                layers,
                shortcut,
                shortcut_tap: tap,
                post_relu: false,
            });
            cin = n;
        }
    }
    let head = vec![bn(cin), LayerItem::Relu];
    Ok(NetworkSpec {
        family: NetFamily::Wrn,
        depth: Some(depth),
        widen: Some(widen),
        policy,
        residual,
        stages: (0..3)
            .map(|i| StageSpec { blocks: r, out_channels: widths[i], stride: strides[i] })
            .collect(),
        num_classes,
        dropout_p,
        stem,
        blocks,
        head,
        classifier: LinearSpec { in_features: cin, out_features: num_classes, bias: true },
    })
}

/// ResNet-18 adapted to 32x32 inputs: 3x3 stem to 64 channels (no max pool),
/// four stages of two post-activation basic blocks at widths 64/128/256/512,
/// strides 1/2/2/2.
pub fn build_resnet18(
    policy: GroupingPolicy,
    residual: bool,
    num_classes: usize,
) -> Result<NetworkSpec, ArchError> {
    let widths = [64usize, 128, 256, 512];
    let strides = [1usize, 2, 2, 2];
    let stem = vec![conv(3, 64, 3, 1, 1, ConvRole::Stem), bn(64), LayerItem::Relu];
    let mut blocks = Vec::new();
    let mut cin = 64usize;
    for stage in 0..4 {
        for b in 0..2 {
            let s = if b == 0 { strides[stage] } else { 1 };
            let (m, n) = (cin, widths[stage]);
            let mut layers = Vec::new();
            gconv_pair(m, n, s, &policy, &mut layers)?;
            layers.push(bn(n));
            layers.push(LayerItem::Relu);
            gconv_pair(n, n, 1, &policy, &mut layers)?;
            layers.push(bn(n));
            blocks.push(BlockSpec {
                family: BlockFamily::ResNet18Basic,
                stage,
                index: b,
                layers,
                shortcut: shortcut_for(residual, m, n, s, true),
                shortcut_tap: ShortcutTap::BlockInput,
                post_relu: true,
            });
            cin = n;
        }
    }
    Ok(NetworkSpec {
        family: NetFamily::ResNet18,
        depth: Some(18),
        widen: None,
        policy,
        residual,
        stages: (0..4)
            .map(|i| StageSpec { blocks: 2, out_channels: widths[i], stride: strides[i] })
            .collect(),
        num_classes,
        dropout_p: 0.0,
        stem,
        blocks,
        head: Vec::new(),
        classifier: LinearSpec { in_features: cin, out_features: num_classes, bias: true },
    })
}

/// MobileNetV2 adapted to 32x32 inputs. In every inverted bottleneck the 3x3
/// depthwise convolution is replaced by a channel-preserving 3x3 grouped
/// convolution under `policy`; the block's expand/project 1x1 convolutions
/// and the identity add are unchanged. Disabling residual removes only the
/// add, so parameter and FLOP counts are identical for both variants.
pub fn build_mobilenetv2(
    policy: GroupingPolicy,
    residual: bool,
    num_classes: usize,
) -> Result<NetworkSpec, ArchError> {
    // (expansion, out channels, blocks, stride of first block)
    const CFG: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 1),
        (6, 64, 4, 2),
        (6, 96, 3, 2),
        (6, 160, 3, 1),
        (6, 320, 1, 1),
    ];
    let stem = vec![conv(3, 32, 3, 1, 1, ConvRole::Stem), bn(32), LayerItem::Relu];
    let mut blocks = Vec::new();
    let mut cin = 32usize;
    for (stage, &(expand, n, nblocks, stride)) in CFG.iter().enumerate() {
        for b in 0..nblocks {
            let s = if b == 0 { stride } else { 1 };
            let m = cin;
            let hidden = m * expand;
            let t = policy.resolve_groups(hidden)?;
            let mut layers = Vec::new();
            if expand != 1 {
                layers.push(conv(m, hidden, 1, 1, 1, ConvRole::Pointwise1x1));
                layers.push(bn(hidden));
                layers.push(LayerItem::Relu);
            }
            layers.push(conv(hidden, hidden, 3, s, t, ConvRole::Spatial3x3));
            layers.push(bn(hidden));
            layers.push(LayerItem::Relu);
            layers.push(conv(hidden, n, 1, 1, 1, ConvRole::Pointwise1x1));
            layers.push(bn(n));
            let shortcut = if residual && s == 1 && m == n {
                ShortcutSpec::Identity
            } else {
                ShortcutSpec::None
            };
            blocks.push(BlockSpec {
                family: BlockFamily::Mv2Inverted,
                stage,
                index: b,
                layers,
                shortcut,
                shortcut_tap: ShortcutTap::BlockInput,
                post_relu: false,
            });
            cin = n;
        }
    }
    let head = vec![
        conv(cin, 1280, 1, 1, 1, ConvRole::ClassifierAdjacent),
        bn(1280),
        LayerItem::Relu,
    ];
    Ok(NetworkSpec {
        family: NetFamily::MobileNetV2,
        depth: None,
        widen: None,
        policy,
        residual,
        stages: CFG
            .iter()
            .map(|&(_, n, b, s)| StageSpec { blocks: b, out_channels: n, stride: s })
            .collect(),
        num_classes,
        dropout_p: 0.0,
        stem,
        blocks,
        head,
        classifier: LinearSpec { in_features: 1280, out_features: num_classes, bias: true },
    })
}

/// The same architecture under a different grouping policy.
pub fn rebuild_with_policy(
    spec: &NetworkSpec,
    policy: GroupingPolicy,
) -> Result<NetworkSpec, ArchError> {
    match spec.family {
        NetFamily::Wrn => {
            let depth = spec.depth.ok_or_else(|| ArchError::InvalidArgument("WRN spec without depth".into()))?;
            let widen = spec.widen.ok_or_else(|| ArchError::InvalidArgument("WRN spec without widen".into()))?;
            build_wrn(depth, widen, policy, spec.residual, spec.num_classes, spec.dropout_p)
        }
        NetFamily::ResNet18 => build_resnet18(policy, spec.residual, spec.num_classes),
        NetFamily::MobileNetV2 => build_mobilenetv2(policy, spec.residual, spec.num_classes),
    }
}

/// One validation failure: where, which rule, and what was found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub at: String,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.rule, self.at, self.detail)
    }
}

/// Checks every structural invariant; an empty list means the spec is valid.
pub fn validate(spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |at: String, rule: &'static str, detail: String| {
        out.push(Violation { at, rule, detail });
    };

    if spec.family == NetFamily::Wrn {
        match spec.depth {
            Some(d) if d >= 10 && (d - 4) % 6 == 0 => {
                let r = (d - 4) / 6;
                if spec.stages.iter().any(|s| s.blocks != r) || spec.stages.len() != 3 {
                    push(
                        "stages".into(),
                        "WrnDepth",
                        format!("depth {d} implies 3 stages of {r} blocks, got {:?}", spec.stages),
                    );
                }
            }
            other => push("depth".into(), "WrnDepth", format!("invalid WRN depth {other:?}")),
        }
    }

    for (id, c) in spec.all_convs() {
        if c.groups == 0 || c.in_channels % c.groups != 0 {
            push(id.clone(), "NonDivisible", format!("groups {} vs in {}", c.groups, c.in_channels));
        } else if c.out_channels % c.groups != 0 {
            push(id.clone(), "NonDivisible", format!("groups {} vs out {}", c.groups, c.out_channels));
        }
        match c.role {
            ConvRole::Pointwise1x1 | ConvRole::Shortcut1x1 => {
                if c.kernel != 1 {
                    push(id.clone(), "PointwiseKernel", format!("role {:?} with kernel {}", c.role, c.kernel));
                }
            }
            ConvRole::Spatial3x3 => match spec.policy.resolve_groups(c.in_channels) {
                Ok(t) if t == c.groups => {}
                Ok(t) => push(
                    id.clone(),
                    "PolicyMismatch",
                    format!("policy {} resolves to {t} groups, layer has {}", spec.policy, c.groups),
                ),
                Err(e) => push(id.clone(), "NonDivisible", e.to_string()),
            },
            _ => {
                if c.groups != 1 {
                    push(id.clone(), "PolicyScope", format!("role {:?} must stay standard", c.role));
                }
            }
        }
    }

    for block in &spec.blocks {
        let id = block.id();
        if matches!(block.family, BlockFamily::WrnBasic | BlockFamily::ResNet18Basic) {
            let convs: Vec<&ConvLayerSpec> = block.convs().collect();
            for (i, c) in convs.iter().enumerate() {
                if c.role == ConvRole::Spatial3x3 {
                    match convs.get(i + 1) {
                        Some(next) if next.role == ConvRole::Pointwise1x1 => {}
                        other => push(
                            format!("{id}.conv{i}"),
                            "PairRule",
                            format!("spatial 3x3 must be followed by a 1x1, got {other:?}"),
                        ),
                    }
                }
            }
            let (m, n, s) = (block.in_channels(), block.out_channels(), block.stride());
            let expected = shortcut_for(spec.residual, m, n, s, false);
            let matches = match (&block.shortcut, &expected) {
                (ShortcutSpec::Projection1x1 { .. }, ShortcutSpec::Projection1x1 { .. }) => true,
                (a, b) => a == b,
            };
            if !matches {
                push(
                    id.clone(),
                    "ShortcutRule",
                    format!(
                        "residual={} m={m} n={n} stride={s} expects {:?}-style shortcut, got {:?}",
                        spec.residual, expected, block.shortcut
                    ),
                );
            }
        }
        if block.family == BlockFamily::Mv2Inverted {
            let (m, n, s) = (block.in_channels(), block.out_channels(), block.stride());
            let expected = if spec.residual && s == 1 && m == n {
                ShortcutSpec::Identity
            } else {
                ShortcutSpec::None
            };
            if block.shortcut != expected {
                push(
                    id.clone(),
                    "ShortcutRule",
                    format!("expected {expected:?}, got {:?}", block.shortcut),
                );
            }
        }
    }

    // Channel continuity through the whole network, including norm markers.
    let mut ch = spec.stem.iter().find_map(|l| match l {
        LayerItem::Conv(c) => Some(c.in_channels),
        _ => None,
    });
    let check_items = |items: &[LayerItem], at: &str, ch: &mut Option<usize>, out: &mut Vec<Violation>| {
        for (i, item) in items.iter().enumerate() {
            match item {
                LayerItem::Conv(c) => {
                    if let Some(cur) = *ch {
                        if cur != c.in_channels {
                            out.push(Violation {
                                at: format!("{at}[{i}]"),
                                rule: "ChannelFlow",
                                detail: format!("expects {} in-channels, stream has {cur}", c.in_channels),
                            });
                        }
                    }
                    *ch = Some(c.out_channels);
                }
                LayerItem::BatchNorm { channels } => {
                    if let Some(cur) = *ch {
                        if cur != *channels {
                            out.push(Violation {
                                at: format!("{at}[{i}]"),
                                rule: "ChannelFlow",
                                detail: format!("norm over {channels} channels, stream has {cur}"),
                            });
                        }
                    }
                }
                _ => {}
            }
        }
    };
    check_items(&spec.stem, "stem", &mut ch, &mut out);
    for block in &spec.blocks {
        check_items(&block.layers, &block.id(), &mut ch, &mut out);
    }
    check_items(&spec.head, "head", &mut ch, &mut out);
    if let Some(cur) = ch {
        if cur != spec.classifier.in_features {
            out.push(Violation {
                at: "classifier".into(),
                rule: "ChannelFlow",
                detail: format!("in_features {} vs stream {cur}", spec.classifier.in_features),
            });
        }
    }
    out
}

#[derive(Serialize)]
struct DocRef<'a> {
    schema: &'static str,
    #[serde(flatten)]
    spec: &'a NetworkSpec,
}

#[derive(Deserialize)]
struct DocOwned {
    schema: String,
    #[serde(flatten)]
    spec: NetworkSpec,
}

pub fn to_json(spec: &NetworkSpec) -> String {
    serde_json::to_string_pretty(&DocRef { schema: SCHEMA, spec }).expect("spec serialization")
}

pub fn from_json(text: &str) -> Result<NetworkSpec, ArchError> {
    let doc: DocOwned = serde_json::from_str(text)?;
    if doc.schema != SCHEMA {
        return Err(ArchError::Schema { expected: SCHEMA.into(), got: doc.schema });
    }
    Ok(doc.spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn same_structure(a: &NetworkSpec, b: &NetworkSpec) -> bool {
        a.stem == b.stem && a.blocks == b.blocks && a.head == b.head && a.classifier == b.classifier
    }

    #[test]
    fn policy_parse_and_display_round_trip() {
        for text in ["std", "dw", "g=2", "g=16", "G=1", "G=8"] {
            let p: GroupingPolicy = text.parse().unwrap();
            assert_eq!(p.to_string(), text);
        }
        for bad in ["", "g", "g=", "g=0", "G=0", "x=3", "g=-1", "grp=2"] {
            assert!(bad.parse::<GroupingPolicy>().is_err(), "{bad} should not parse");
        }
    }

    #[test]
    fn policy_json_shape() {
        let v = serde_json::to_value(GroupingPolicy::ConstantGroups(4)).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "constant_groups", "value": 4}));
        let v = serde_json::to_value(GroupingPolicy::Standard).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "standard"}));
        let p: GroupingPolicy =
            serde_json::from_value(serde_json::json!({"kind": "constant_group_size", "value": 8})).unwrap();
        assert_eq!(p, GroupingPolicy::ConstantGroupSize(8));
    }

    #[test]
    fn group_resolution() {
        assert_eq!(GroupingPolicy::Standard.resolve_groups(48).unwrap(), 1);
        assert_eq!(GroupingPolicy::ConstantGroups(4).resolve_groups(32).unwrap(), 4);
        assert_eq!(GroupingPolicy::ConstantGroupSize(8).resolve_groups(32).unwrap(), 4);
        assert_eq!(GroupingPolicy::Depthwise.resolve_groups(32).unwrap(), 32);
        assert!(matches!(
            GroupingPolicy::ConstantGroups(5).resolve_groups(32),
            Err(ArchError::NonDivisible { .. })
        ));
        assert!(matches!(
            GroupingPolicy::ConstantGroupSize(5).resolve_groups(32),
            Err(ArchError::NonDivisible { .. })
        ));
        assert!(GroupingPolicy::Standard.resolve_groups(0).is_err());
    }

    #[test]
    fn wrn_depth_rules() {
        assert!(build_wrn(22, 2, GroupingPolicy::Standard, true, 100, 0.0).is_ok());
        for bad in [9, 12, 21, 23] {
            assert!(matches!(
                build_wrn(bad, 2, GroupingPolicy::Standard, true, 100, 0.0),
                Err(ArchError::InvalidDepth(_))
            ));
        }
        assert!(build_wrn(22, 0, GroupingPolicy::Standard, true, 100, 0.0).is_err());
        assert!(build_wrn(22, 2, GroupingPolicy::Standard, true, 100, 1.0).is_err());
        let spec = build_wrn(28, 2, GroupingPolicy::Standard, true, 10, 0.3).unwrap();
        assert_eq!(spec.blocks.len(), 12);
        assert_eq!(spec.stages.iter().map(|s| s.blocks).sum::<usize>(), 12);
        assert_eq!(spec.classifier.out_features, 10);
    }

    #[test]
    fn twins_share_the_main_path() {
        for policy in [GroupingPolicy::Standard, GroupingPolicy::ConstantGroups(4)] {
            let r = build_wrn(22, 2, policy, true, 100, 0.0).unwrap();
            let nr = build_wrn(22, 2, policy, false, 100, 0.0).unwrap();
            assert_eq!(r.blocks.len(), nr.blocks.len());
            for (br, bnr) in r.blocks.iter().zip(&nr.blocks) {
                assert_eq!(br.layers, bnr.layers, "{}", br.id());
                assert_eq!(bnr.shortcut, ShortcutSpec::None);
            }
            // Three stage transitions project; everything else is identity.
            let projections = r
                .blocks
                .iter()
                .filter(|b| matches!(b.shortcut, ShortcutSpec::Projection1x1 { .. }))
                .count();
            assert_eq!(projections, 3);
        }

        let r = build_resnet18(GroupingPolicy::ConstantGroupSize(4), true, 100).unwrap();
        let nr = build_resnet18(GroupingPolicy::ConstantGroupSize(4), false, 100).unwrap();
        for (br, bnr) in r.blocks.iter().zip(&nr.blocks) {
            assert_eq!(br.layers, bnr.layers);
            assert!(br.post_relu && bnr.post_relu);
        }
    }

    #[test]
    fn mv2_keeps_identity_adds_only() {
        let r = build_mobilenetv2(GroupingPolicy::Depthwise, true, 100).unwrap();
        let nr = build_mobilenetv2(GroupingPolicy::Depthwise, false, 100).unwrap();
        for (br, bnr) in r.blocks.iter().zip(&nr.blocks) {
            assert_eq!(br.layers, bnr.layers);
            assert_eq!(bnr.shortcut, ShortcutSpec::None);
            if br.shortcut == ShortcutSpec::Identity {
                assert_eq!(br.in_channels(), br.out_channels());
                assert_eq!(br.stride(), 1);
            }
        }
        assert!(r.blocks.iter().any(|b| b.shortcut == ShortcutSpec::Identity));
        // Inverted bottlenecks end linear: no activation after the last conv.
        for b in &r.blocks {
            assert!(matches!(b.layers.last(), Some(LayerItem::BatchNorm { .. })));
            assert!(!b.post_relu);
        }
        // 1 + 2 + 3 + 4 + 3 + 3 + 1 inverted bottlenecks.
        assert_eq!(r.blocks.len(), 17);
    }

    #[test]
    fn equivalent_policies_build_identical_structures() {
        let a = build_wrn(22, 2, GroupingPolicy::ConstantGroups(1), true, 100, 0.0).unwrap();
        let b = build_wrn(22, 2, GroupingPolicy::Standard, true, 100, 0.0).unwrap();
        assert!(same_structure(&a, &b));

        let a = build_resnet18(GroupingPolicy::ConstantGroupSize(1), true, 100).unwrap();
        let b = build_resnet18(GroupingPolicy::Depthwise, true, 100).unwrap();
        assert!(same_structure(&a, &b));
    }

    #[test]
    fn builders_validate_clean() {
        let policies = [
            GroupingPolicy::Standard,
            GroupingPolicy::ConstantGroups(2),
            GroupingPolicy::ConstantGroups(16),
            GroupingPolicy::ConstantGroupSize(1),
            GroupingPolicy::ConstantGroupSize(16),
            GroupingPolicy::Depthwise,
        ];
        for policy in policies {
            for residual in [true, false] {
                let specs = [
                    build_wrn(22, 2, policy, residual, 100, 0.3).unwrap(),
                    build_resnet18(policy, residual, 100).unwrap(),
                    build_mobilenetv2(policy, residual, 100).unwrap(),
                ];
                for spec in &specs {
                    let violations = validate(spec);
                    assert!(violations.is_empty(), "{}: {:?}", spec.label(), violations);
                }
            }
        }
    }

    #[test]
    fn nondividing_policy_is_rejected_at_build() {
        assert!(matches!(
            build_wrn(22, 2, GroupingPolicy::ConstantGroups(5), true, 100, 0.0),
            Err(ArchError::NonDivisible { .. })
        ));
        // 16 does not divide the width-1 first stage (16 channels) times ok,
        // but 32 groups never fits a 16-channel layer.
        assert!(build_wrn(22, 1, GroupingPolicy::ConstantGroups(32), true, 100, 0.0).is_err());
        assert!(matches!(
            build_mobilenetv2(GroupingPolicy::ConstantGroupSize(7), true, 100),
            Err(ArchError::NonDivisible { .. })
        ));
    }

    #[test]
    fn validate_flags_corruption() {
        let mut spec = build_wrn(22, 2, GroupingPolicy::ConstantGroups(4), true, 100, 0.0).unwrap();
        // Silently widen one grouped conv's group count.
        for item in &mut spec.blocks[4].layers {
            if let LayerItem::Conv(c) = item {
                if c.role == ConvRole::Spatial3x3 {
                    c.groups *= 2;
                    break;
                }
            }
        }
        let v = validate(&spec);
        assert!(v.iter().any(|v| v.rule == "PolicyMismatch"), "{v:?}");

        let mut spec = build_resnet18(GroupingPolicy::Standard, true, 100).unwrap();
        spec.blocks[2].shortcut = ShortcutSpec::None;
        let v = validate(&spec);
        assert!(v.iter().any(|v| v.rule == "ShortcutRule"), "{v:?}");

        let mut spec = build_mobilenetv2(GroupingPolicy::Standard, true, 100).unwrap();
        if let LayerItem::BatchNorm { channels } = &mut spec.blocks[3].layers[1] {
            *channels += 1;
        }
        let v = validate(&spec);
        assert!(v.iter().any(|v| v.rule == "ChannelFlow"), "{v:?}");

        let mut spec = build_wrn(22, 2, GroupingPolicy::Standard, true, 100, 0.0).unwrap();
        spec.classifier.in_features = 64;
        let v = validate(&spec);
        assert!(v.iter().any(|v| v.rule == "ChannelFlow" && v.at == "classifier"), "{v:?}");
    }

    #[test]
    fn json_round_trip_preserves_specs() {
        let specs = [
            build_wrn(28, 2, GroupingPolicy::ConstantGroups(8), true, 100, 0.3).unwrap(),
            build_resnet18(GroupingPolicy::ConstantGroupSize(2), false, 10).unwrap(),
            build_mobilenetv2(GroupingPolicy::Depthwise, true, 100).unwrap(),
        ];
        for spec in &specs {
            let text = to_json(spec);
            let back = from_json(&text).unwrap();
            assert_eq!(&back, spec);
        }
        let blob = to_json(&specs[0]).replace("archspec/1", "archspec/9");
        assert!(matches!(from_json(&blob), Err(ArchError::Schema { .. })));
        assert!(from_json("{not json").is_err());
    }

    #[test]
    fn labels_are_compact() {
        let spec = build_wrn(22, 2, GroupingPolicy::ConstantGroups(4), true, 100, 0.0).unwrap();
        assert_eq!(spec.label(), "wrn22x2-g=4-R");
        let spec = build_mobilenetv2(GroupingPolicy::Depthwise, false, 100).unwrap();
        assert_eq!(spec.label(), "mobilenetv2-dw-NR");
    }

    #[test]
    fn rebuild_swaps_policy_only() {
        let base = build_wrn(22, 2, GroupingPolicy::Standard, true, 100, 0.3).unwrap();
        let swapped = rebuild_with_policy(&base, GroupingPolicy::ConstantGroups(4)).unwrap();
        assert_eq!(swapped.policy, GroupingPolicy::ConstantGroups(4));
        assert_eq!(swapped.depth, base.depth);
        assert_eq!(swapped.dropout_p, base.dropout_p);
        assert!(!same_structure(&base, &swapped));
        let back = rebuild_with_policy(&swapped, GroupingPolicy::Standard).unwrap();
        assert_eq!(back, base);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_wrn_specs_validate_and_round_trip(
            r in 1usize..=6,
            widen in 1usize..=4,
            pol in 0usize..6,
            residual in proptest::bool::ANY,
        ) {
            let policy = [
                GroupingPolicy::Standard,
                GroupingPolicy::ConstantGroups(2),
                GroupingPolicy::ConstantGroups(4),
                GroupingPolicy::ConstantGroupSize(1),
                GroupingPolicy::ConstantGroupSize(4),
                GroupingPolicy::Depthwise,
            ][pol];
            let depth = 6 * r + 4;
            let spec = build_wrn(depth, widen, policy, residual, 100, 0.0).unwrap();
            prop_assert!(validate(&spec).is_empty());
            let back = from_json(&to_json(&spec)).unwrap();
            prop_assert_eq!(back, spec);
        }
    }
}
