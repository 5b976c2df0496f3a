//! Closed-form MAC and weight accounting.
//!
//! Conventions: one MAC per multiply-accumulate of a convolution, with
//! transposed convolutions counted as their dense stride-1 equivalent over the
//! output. Batch norm contributes four stored values per channel and no MACs.
//! Resampling, pooling, additions and concatenation are free.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetGraph, Role};
use crate::ops::ConvSpec;
use crate::tensor::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub macs: u64,
    pub weights: u64,
}

/// Cost of one layer producing `output`.
pub fn count_layer(kind: &LayerKind, output: TensorShape) -> LayerCost {
    let (spec, bn, bias) = match kind {
        LayerKind::Conv { spec, bn, bias, .. } | LayerKind::TransposeConv { spec, bn, bias, .. } => (spec, *bn, *bias),
        _ => return LayerCost::default(),
    };
    let per_pixel = (spec.out_c * spec.in_per_group() * spec.kernel * spec.kernel) as u64;
    let mut weights = spec.weight_len() as u64;
    if bn {
        weights += 4 * spec.out_c as u64;
    }
    if bias {
        weights += spec.out_c as u64;
    }
    LayerCost {
        macs: per_pixel * (output.n * output.h * output.w) as u64,
        weights,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub kind: &'static str,
    pub role: Role,
    pub output: TensorShape,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

/// Per-layer costs of a whole graph.
pub fn count_graph(graph: &NetGraph) -> CostReport {
    let rows = graph
        .layers
        .iter()
        .map(|l| CostRow {
                name: l.name.clone(),
                kind: l.kind.label(),
                role: l.role,
                output: l.out_shape,
                cost: count_layer(&l.kind, l.out_shape),
        })
        .collect();
    CostReport { rows }
}

impl CostReport {
    fn sum(&self, role: Option<Role>) -> LayerCost {
        self.rows
            .iter()
            .filter(|r| role.is_none_or(|x| r.role == x))
            .fold(LayerCost::default(), |acc, r| LayerCost {
                macs: acc.macs + r.cost.macs,
                weights: acc.weights + r.cost.weights,
            })
    }

    pub fn encoder(&self) -> LayerCost {
        self.sum(Some(Role::Encoder))
    }

    pub fn decoder(&self) -> LayerCost {
        self.sum(Some(Role::Decoder))
    }

    pub fn total(&self) -> LayerCost {
        self.sum(None)
    }

    pub fn total_macs(&self) -> u64 {
        self.total().macs
    }

    pub fn total_weights(&self) -> u64 {
        self.total().weights
    }

    /// Human-readable table with subtotals, MACs in G and weights in M.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<7}  {:<8}  {:>18}  {:>12}  {:>14}",
            "layer", "kind", "role", "output", "weights", "macs"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<7}  {:<8}  {:>18}  {:>12}  {:>14}",
                r.name,
                r.kind,
                r.role,
                format!("{}", r.output),
                r.cost.weights,
                r.cost.macs
            );
        }
        for (label, c) in [("encoder", self.encoder()), ("decoder", self.decoder()), ("total", self.total())] {
            if label != "total" && c == LayerCost::default() {
                continue;
            }
            let _ = writeln!(
                s,
                "{label:<8} {:>8.3} GMACs  {:>8.3} M weights",
                c.macs as f64 / 1e9,
                c.weights as f64 / 1e6
            );
        }
        s
    }

    /// Tab-separated rows: name, kind, role, output shape, weights, macs.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("layer\tkind\trole\toutput\tweights\tmacs\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.name, r.kind, r.role, r.output, r.cost.weights, r.cost.macs);
        }
        s
    }
}

/// MAC ratio of a depthwise-separable replacement to a standard convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub standard_macs: u64,
    pub separable_macs: u64,
    /// `separable / standard`, always `1/out_c + 1/k²`.
    pub ratio: f64,
    /// Whether the replacement saves MACs.
    pub beneficial: bool,
}

/// Compare a stride-1 standard convolution with its depthwise + pointwise
/// replacement, per output pixel.
pub fn decomposition_ratio(spec: &ConvSpec) -> Result<Decomposition> {
    spec.validate()?;
    if spec.groups != 1 || spec.stride != 1 {
        return Err(Error::NotApplicable(format!(
            "decomposition compares ungrouped stride-1 convolutions, got groups={} stride={}",
            spec.groups, spec.stride
        )));
    }
    let (i, o, kk) = (spec.in_c as u64, spec.out_c as u64, (spec.kernel * spec.kernel) as u64);
    let standard_macs = o * i * kk;
    let separable_macs = i * kk + i * o;
    // separable/standard == 1/o + 1/k² exactly, checked in integers.
    assert_eq!(
        separable_macs as u128 * (o * kk) as u128,
        standard_macs as u128 * (kk + o) as u128
    );
    Ok(Decomposition {
        standard_macs,
        separable_macs,
        ratio: 1.0 / o as f64 + 1.0 / kk as f64,
        beneficial: separable_macs < standard_macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{assemble_network, build_decoder, build_encoder, DecoderKind, EncoderKind, SkipMode, Upsample};

    fn within(actual: u64, expected: f64, tol: f64) -> bool {
        ((actual as f64 - expected) / expected).abs() <= tol
    }

    #[test]
    fn mobilenet_encoder_matches_closed_form() {
        let c = count_graph(&build_encoder(EncoderKind::MobileNet).unwrap()).total();
        assert_eq!(c.macs, 567_716_352);
        assert_eq!(c.weights, 3_228_864);
        assert!(within(c.macs, 0.57e9, 0.02));
        assert!(within(c.weights, 3.19e6, 0.02));
    }

    #[test]
    fn resnet_encoders_include_projection() {
        let r18 = count_graph(&build_encoder(EncoderKind::ResNet18).unwrap()).total();
        assert_eq!((r18.macs, r18.weights), (1_839_251_456, 11_714_496));
        let r50 = count_graph(&build_encoder(EncoderKind::ResNet50).unwrap()).total();
        assert_eq!((r50.macs, r50.weights), (4_189_896_704, 25_662_400));
    }

    #[test]
    fn decoders_match_closed_form() {
        let cost = |u, dw| {
            count_graph(&build_decoder(DecoderKind::new(u, dw, SkipMode::None).unwrap()).unwrap()).total()
        };
        assert_eq!(cost(Upsample::UpProj, false), LayerCost { macs: 28_003_827_712, weights: 38_072_993 });
        assert_eq!(cost(Upsample::UpConv, false), LayerCost { macs: 12_846_661_632, weights: 17_463_201 });
        assert_eq!(cost(Upsample::DeConv5, false), LayerCost { macs: 12_846_661_632, weights: 17_463_201 });
        assert_eq!(cost(Upsample::NNConv5, false), LayerCost { macs: 3_212_869_632, weights: 17_463_201 });
    }

    #[test]
    fn skip_add_is_free_and_concat_is_not() {
        let enc = build_encoder(EncoderKind::MobileNet).unwrap();
        let total = |skip| {
            let kind = DecoderKind::new(Upsample::NNConv5, true, skip).unwrap();
            count_graph(&assemble_network(&enc, kind).unwrap()).total()
        };
        let none = total(SkipMode::None);
        assert_eq!(none, total(SkipMode::Add));
        assert!(total(SkipMode::Concat).macs > none.macs);
    }

    #[test]
    fn decomposition_examples() {
        let d = decomposition_ratio(&ConvSpec::standard(512, 512, 5, 1, 2)).unwrap();
        assert!((d.ratio - 0.041953125).abs() < 1e-12);
        assert!(d.beneficial);
        assert_eq!(d.separable_macs as f64 / d.standard_macs as f64, d.ratio);
        let one = decomposition_ratio(&ConvSpec::pointwise(64, 64)).unwrap();
        assert!(!one.beneficial);
        assert!((one.ratio - (1.0 / 64.0 + 1.0)).abs() < 1e-12);
        let k3 = decomposition_ratio(&ConvSpec::standard(32, 64, 3, 1, 1)).unwrap();
        assert!((k3.ratio - 0.126_736_111).abs() < 1e-9);
        assert!(decomposition_ratio(&ConvSpec::depthwise(8, 3, 1, 1)).is_err());
    }

    #[test]
    fn renderers_list_every_layer() {
        let g = build_decoder(DecoderKind::new(Upsample::NNConv5, true, SkipMode::None).unwrap()).unwrap();
        let r = count_graph(&g);
        assert_eq!(r.to_tsv().lines().count(), g.layers.len() + 1);
        assert!(r.to_table().contains("decoder.6"));
    }
}
