//! Encoder and decoder builders.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::{GraphBuilder, LayerKind, NetGraph, NodeId, Role};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::TensorShape;

/// Decoder channel ladder from the 7×7×1024 bottleneck to the final 32.
pub const DECODER_CHANNELS: [usize; 6] = [1024, 512, 256, 128, 64, 32];

/// Decoder layers whose outputs receive encoder skips.
const SKIP_LAYERS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    MobileNet,
    ResNet18,
    ResNet50,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::MobileNet, EncoderKind::ResNet18, EncoderKind::ResNet50];
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::MobileNet => "mobilenet",
            EncoderKind::ResNet18 => "resnet18",
            EncoderKind::ResNet50 => "resnet50",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mobilenet" => Ok(EncoderKind::MobileNet),
            "resnet18" => Ok(EncoderKind::ResNet18),
            "resnet50" => Ok(EncoderKind::ResNet50),
            _ => Err(Error::InvalidGraph(vec![format!(
                "unknown encoder `{s}` (expected mobilenet, resnet18 or resnet50)"
            )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Upsample {
    UpProj,
    UpConv,
    DeConv5,
    NNConv5,
}

impl Upsample {
    pub const ALL: [Upsample; 4] = [Upsample::UpProj, Upsample::UpConv, Upsample::DeConv5, Upsample::NNConv5];
}

impl fmt::Display for Upsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsample::UpProj => "upproj",
            Upsample::UpConv => "upconv",
            Upsample::DeConv5 => "deconv5",
            Upsample::NNConv5 => "nnconv5",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SkipMode {
    #[default]
    None,
    Add,
    Concat,
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::None => "none",
            SkipMode::Add => "add",
            SkipMode::Concat => "concat",
        })
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SkipMode::None),
            "add" => Ok(SkipMode::Add),
            "concat" => Ok(SkipMode::Concat),
            _ => Err(Error::InvalidDecoder(format!("unknown skip mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecoderKind {
    pub upsample: Upsample,
    pub depthwise: bool,
    pub skip: SkipMode,
}

impl DecoderKind {
    pub fn new(upsample: Upsample, depthwise: bool, skip: SkipMode) -> Result<Self> {
        let kind = Self { upsample, depthwise, skip };
        kind.validate()?;
        Ok(kind)
    }

    /// Depthwise NNConv5 with additive skips.
    pub fn fastdepth() -> Self {
        Self {
            upsample: Upsample::NNConv5,
            depthwise: true,
            skip: SkipMode::Add,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depthwise && self.upsample != Upsample::NNConv5 {
            return Err(Error::InvalidDecoder(format!(
                "depthwise decomposition is only supported for nnconv5, not {}",
                self.upsample
            )));
        }
        Ok(())
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.upsample)?;
        if self.depthwise {
            f.write_str("-dw")?;
        }
        if self.skip != SkipMode::None {
            write!(f, "+skip-{}", self.skip)?;
        }
        Ok(())
    }
}

/// Upsample kind with optional `-dw` suffix; skip mode defaults to none.
impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (base, depthwise) = match lower.strip_suffix("-dw") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let upsample = match base {
            "upproj" => Upsample::UpProj,
            "upconv" => Upsample::UpConv,
            "deconv5" => Upsample::DeConv5,
            "nnconv5" => Upsample::NNConv5,
            _ => {
                return Err(Error::InvalidDecoder(format!(
                    "unknown decoder `{s}` (expected upproj, upconv, deconv5, nnconv5 or nnconv5-dw)"
                )))
            }
        };
        DecoderKind::new(upsample, depthwise, SkipMode::None)
    }
}

fn input_224() -> TensorShape {
    TensorShape::new(1, 3, 224, 224).expect("static shape")
}

/// Encoder backbone on a 1×3×224×224 input, ending at 1×1024×7×7.
pub fn build_encoder(kind: EncoderKind) -> Result<NetGraph> {
    let mut b = GraphBuilder::new(input_224());
    let out = match kind {
        EncoderKind::MobileNet => mobilenet(&mut b)?,
        EncoderKind::ResNet18 => resnet(&mut b, &[2, 2, 2, 2], false)?,
        EncoderKind::ResNet50 => resnet(&mut b, &[3, 4, 6, 3], true)?,
    };
    let taps = resolution_taps(b.graph());
    b.set_taps(taps);
    b.finish(out)
}

/// Last encoder layer at each spatial resolution, in layer order.
fn resolution_taps(g: &NetGraph) -> Vec<usize> {
    let mut taps: Vec<usize> = Vec::new();
    for (i, l) in g.layers.iter().enumerate() {
        match taps.last() {
            Some(&t) if g.layers[t].out_shape.h == l.out_shape.h => *taps.last_mut().unwrap() = i,
            _ => taps.push(i),
        }
    }
    taps
}

fn mobilenet(b: &mut GraphBuilder) -> Result<NodeId> {
    const LADDER: [usize; 14] = [32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024];
    const STRIDE2: [usize; 4] = [2, 4, 6, 12];
    let e = Role::Encoder;
    let mut x = b.conv_bn("mobilenet.0", e, NodeId::Input, ConvSpec::standard(3, 32, 3, 2, 1), true)?;
    for i in 1..LADDER.len() {
        let (cin, cout) = (LADDER[i - 1], LADDER[i]);
        let stride = if STRIDE2.contains(&i) { 2 } else { 1 };
        x = b.conv_bn(format!("mobilenet.{i}.dw"), e, x, ConvSpec::depthwise(cin, 3, stride, 1), true)?;
        x = b.conv_bn(format!("mobilenet.{i}.pw"), e, x, ConvSpec::pointwise(cin, cout), true)?;
    }
    Ok(x)
}

fn resnet(b: &mut GraphBuilder, blocks: &[usize; 4], bottleneck: bool) -> Result<NodeId> {
    let e = Role::Encoder;
    let mut x = b.conv_bn("resnet.conv1", e, NodeId::Input, ConvSpec::standard(3, 64, 7, 2, 3), true)?;
    x = b.push(
        "resnet.maxpool",
        e,
        LayerKind::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
        &[x],
    )?;
    let expansion = if bottleneck { 4 } else { 1 };
    let mut cin = 64;
    for (stage, &count) in blocks.iter().enumerate() {
        let width = 64 << stage;
        for block in 0..count {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let cout = width * expansion;
            let p = format!("resnet.layer{}.{block}", stage + 1);
            let body = if bottleneck {
                let y = b.conv_bn(format!("{p}.conv1"), e, x, ConvSpec::pointwise(cin, width), true)?;
                let y = b.conv_bn(format!("{p}.conv2"), e, y, ConvSpec::standard(width, width, 3, stride, 1), true)?;
                b.conv_bn(format!("{p}.conv3"), e, y, ConvSpec::pointwise(width, cout), false)?
            } else {
                let y = b.conv_bn(format!("{p}.conv1"), e, x, ConvSpec::standard(cin, width, 3, stride, 1), true)?;
                b.conv_bn(format!("{p}.conv2"), e, y, ConvSpec::standard(width, width, 3, 1, 1), false)?
            };
            let shortcut = if stride != 1 || cin != cout {
                b.conv_bn(format!("{p}.downsample"), e, x, ConvSpec::standard(cin, cout, 1, stride, 0), false)?
            } else {
                x
            };
            x = b.push(format!("{p}.add"), e, LayerKind::Add { relu: true }, &[body, shortcut])?;
            cin = cout;
        }
    }
    b.conv_bn("resnet.proj", e, x, ConvSpec::pointwise(cin, 1024), true)
}

/// Stand-alone decoder on a 1×1024×7×7 input. Skip modes other than none
/// need an encoder; use [`assemble_network`].
pub fn build_decoder(kind: DecoderKind) -> Result<NetGraph> {
    kind.validate()?;
    if kind.skip != SkipMode::None {
        return Err(Error::InvalidDecoder(
            "skip connections need an encoder; use assemble_network".into(),
        ));
    }
    let mut b = GraphBuilder::new(TensorShape::new(1, DECODER_CHANNELS[0], 7, 7)?);
    let out = append_decoder(&mut b, NodeId::Input, kind, &[])?;
    b.finish(out)
}

/// Attach a decoder to an encoder. Skip taps are matched to decoder layers
/// 2, 3 and 4 by spatial size.
pub fn assemble_network(encoder: &NetGraph, kind: DecoderKind) -> Result<NetGraph> {
    kind.validate()?;
    let enc_out = encoder.output_shape();
    if enc_out.c != DECODER_CHANNELS[0] {
        return Err(Error::ChannelMismatch {
            expected: DECODER_CHANNELS[0],
            actual: enc_out.c,
        });
    }
    let taps = encoder.taps.clone();
    let mut b = GraphBuilder::extend(encoder.clone());
    let out = append_decoder(&mut b, NodeId::Layer(encoder.output), kind, &taps)?;
    b.finish(out)
}

fn append_decoder(b: &mut GraphBuilder, input: NodeId, kind: DecoderKind, taps: &[usize]) -> Result<NodeId> {
    let d = Role::Decoder;
    let mut x = input;
    for i in 1..DECODER_CHANNELS.len() {
        let cin = b.shape(x).c;
        let cout = DECODER_CHANNELS[i];
        let p = format!("decoder.{i}");
        x = match kind.upsample {
            Upsample::NNConv5 => {
                let y = if kind.depthwise {
                    let y = b.conv_bn(format!("{p}.dw"), d, x, ConvSpec::depthwise(cin, 5, 1, 2), true)?;
                    b.conv_bn(format!("{p}.pw"), d, y, ConvSpec::pointwise(cin, cout), true)?
                } else {
                    b.conv_bn(format!("{p}.conv"), d, x, ConvSpec::standard(cin, cout, 5, 1, 2), true)?
                };
                b.push(format!("{p}.interp"), d, LayerKind::Interp, &[y])?
            }
            Upsample::UpConv => {
                let y = b.push(format!("{p}.unpool"), d, LayerKind::Unpool, &[x])?;
                b.conv_bn(format!("{p}.conv"), d, y, ConvSpec::standard(cin, cout, 5, 1, 2), true)?
            }
            Upsample::DeConv5 => b.push(
                format!("{p}.deconv"),
                d,
                LayerKind::TransposeConv {
                    spec: ConvSpec::transposed(cin, cout, 5, 2, 2, 1),
                    bn: true,
                    bias: false,
                    relu: true,
                },
                &[x],
            )?,
            Upsample::UpProj => {
                let u = b.push(format!("{p}.unpool"), d, LayerKind::Unpool, &[x])?;
                let a = b.conv_bn(format!("{p}.a1"), d, u, ConvSpec::standard(cin, cout, 5, 1, 2), true)?;
                let a = b.conv_bn(format!("{p}.a2"), d, a, ConvSpec::standard(cout, cout, 3, 1, 1), false)?;
                let s = b.conv_bn(format!("{p}.b"), d, u, ConvSpec::standard(cin, cout, 5, 1, 2), false)?;
                b.push(format!("{p}.add"), d, LayerKind::Add { relu: true }, &[a, s])?
            }
        };
        if kind.skip != SkipMode::None && SKIP_LAYERS.contains(&i) {
            x = merge_skip(b, x, kind.skip, taps, &p)?;
        }
    }
    b.push(
        "decoder.6",
        d,
        LayerKind::Conv {
            spec: ConvSpec::pointwise(DECODER_CHANNELS[5], 1),
            bn: false,
            bias: true,
            relu: false,
        },
        &[x],
    )
}

fn merge_skip(b: &mut GraphBuilder, x: NodeId, mode: SkipMode, taps: &[usize], prefix: &str) -> Result<NodeId> {
    let here = b.shape(x);
    let name: String = format!("{prefix}.skip");
    let tap = taps
        .iter()
        .copied()
        .find(|&t| {
            let s = b.graph().layers[t].out_shape;
            (s.h, s.w) == (here.h, here.w)
        })
        .ok_or_else(|| Error::InvalidDecoder(format!("no encoder feature map at {}×{} for `{name}`", here.h, here.w)))?;
    let tap_shape = b.graph().layers[tap].out_shape;
    let kind = match mode {
        SkipMode::Add => {
            if tap_shape != here {
                return Err(Error::SkipMismatch {
                    layer: name,
                    encoder: tap_shape,
                    decoder: here,
                });
            }
            LayerKind::Add { relu: false }
        }
        SkipMode::Concat => LayerKind::Concat,
        SkipMode::None => return Ok(x),
    };
    let merged = b.push(name, Role::Decoder, kind, &[x, NodeId::Layer(tap)])?;
    b.skip(tap, merged);
    Ok(merged)
}
