use super::*;
use crate::ops::ConvSpec;
use crate::schedule::{DefaultSchedules, Schedule};
use crate::tensor::Fill;

fn fastdepth() -> NetGraph {
    let enc = build_encoder(EncoderKind::MobileNet).unwrap();
    assemble_network(&enc, DecoderKind::fastdepth()).unwrap()
}

fn shape(n: usize, c: usize, h: usize, w: usize) -> TensorShape {
    TensorShape::new(n, c, h, w).unwrap()
}

#[test]
fn every_encoder_ends_at_7x7x1024() {
    for kind in EncoderKind::ALL {
        let g = build_encoder(kind).unwrap();
        assert_eq!(g.output_shape(), shape(1, 1024, 7, 7), "{kind}");
    }
}

#[test]
fn mobilenet_strides_and_ladder() {
    let g = build_encoder(EncoderKind::MobileNet).unwrap();
    let spatial: Vec<usize> = (1..=13)
        .map(|i| g.layers[g.find(&format!("mobilenet.{i}.pw")).unwrap()].out_shape.h)
        .collect();
    assert_eq!(spatial, [112, 56, 56, 28, 28, 14, 14, 14, 14, 14, 14, 7, 7]);
    let widths: Vec<usize> = (1..=13)
        .map(|i| g.layers[g.find(&format!("mobilenet.{i}.pw")).unwrap()].out_shape.c)
        .collect();
    assert_eq!(widths, [64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024]);
}

#[test]
fn decoder_dimension_chain() {
    for up in Upsample::ALL {
        let g = build_decoder(DecoderKind::new(up, false, SkipMode::None).unwrap()).unwrap();
        assert_eq!(g.output_shape(), shape(1, 1, 224, 224), "{up}");
        let mut chain = Vec::new();
        for i in 1..=5 {
            let last = g
                .layers
                .iter()
                .rev()
                .find(|l| l.name.starts_with(&format!("decoder.{i}.")))
                .unwrap();
            chain.push((last.out_shape.c, last.out_shape.h));
        }
        assert_eq!(chain, [(512, 14), (256, 28), (128, 56), (64, 112), (32, 224)], "{up}");
    }
}

#[test]
fn depthwise_requires_nnconv5() {
    assert!(DecoderKind::new(Upsample::UpProj, true, SkipMode::None).is_err());
    assert!(DecoderKind::new(Upsample::NNConv5, true, SkipMode::None).is_ok());
    assert!("upconv-dw".parse::<DecoderKind>().is_err());
    assert_eq!("nnconv5-dw".parse::<DecoderKind>().unwrap().upsample, Upsample::NNConv5);
    assert!("bogus".parse::<EncoderKind>().is_err());
}

#[test]
fn skip_add_merges_at_the_three_middle_decoder_layers() {
    let g = fastdepth();
    let pairs: Vec<(String, String)> = g
        .skips
        .iter()
        .map(|s| (g.layers[s.tap].name.clone(), g.layers[s.merge].name.clone()))
        .collect();
    assert_eq!(
        pairs,
        [
            ("mobilenet.5.pw".to_string(), "decoder.2.skip".to_string()),
            ("mobilenet.3.pw".to_string(), "decoder.3.skip".to_string()),
            ("mobilenet.1.pw".to_string(), "decoder.4.skip".to_string()),
        ]
    );
    let shapes: Vec<TensorShape> = g.skips.iter().map(|s| g.layers[s.tap].out_shape).collect();
    assert_eq!(shapes, [shape(1, 256, 28, 28), shape(1, 128, 56, 56), shape(1, 64, 112, 112)]);
}

#[test]
fn skip_add_leaves_weight_shapes_unchanged_and_concat_doubles_three_consumers() {
    let enc = build_encoder(EncoderKind::MobileNet).unwrap();
    let build = |skip| assemble_network(&enc, DecoderKind::new(Upsample::NNConv5, true, skip).unwrap()).unwrap();
    let dims = |g: &NetGraph| g.param_slots();
    let none = build(SkipMode::None);
    let add = build(SkipMode::Add);
    let concat = build(SkipMode::Concat);
    assert_eq!(dims(&none), dims(&add));

    let in_c = |g: &NetGraph, name: &str| g.layers[g.find(name).unwrap()].kind.conv_spec().unwrap().in_c;
    let mut doubled = Vec::new();
    for l in &none.layers {
        if let Some(spec) = l.kind.conv_spec() {
            let c = in_c(&concat, &l.name);
            if c != spec.in_c {
                assert_eq!(c, 2 * spec.in_c);
                doubled.push(l.name.clone());
            }
        }
    }
    // Depthwise layers carry the doubled channels through to their pointwise partner.
    assert_eq!(
        doubled,
        ["decoder.3.dw", "decoder.3.pw", "decoder.4.dw", "decoder.4.pw", "decoder.5.dw", "decoder.5.pw"]
    );
}

#[test]
fn resnet_add_skips_are_rejected() {
    let enc = build_encoder(EncoderKind::ResNet18).unwrap();
    let err = assemble_network(&enc, DecoderKind::fastdepth()).unwrap_err();
    assert!(matches!(err, Error::SkipMismatch { .. }), "{err}");
    assert!(assemble_network(&enc, DecoderKind::new(Upsample::NNConv5, true, SkipMode::None).unwrap()).is_ok());
    assert!(build_decoder(DecoderKind::fastdepth()).is_err());
}

#[test]
fn validate_accepts_fastdepth() {
    assert_eq!(fastdepth().validate(), Ok(()));
}

#[test]
fn validate_reports_skip_channel_mismatch() {
    let mut b = GraphBuilder::new(shape(1, 3, 56, 56));
    let a = b
        .conv_bn("a", Role::Encoder, NodeId::Input, ConvSpec::standard(3, 256, 3, 2, 1), true)
        .unwrap();
    let c = b
        .conv_bn("c", Role::Decoder, a, ConvSpec::pointwise(256, 128), true)
        .unwrap();
    let mut g = b.graph().clone();
    // Force an add between 28×28×256 and 28×28×128 past the builder's checks.
    g.layers.push(Layer {
        name: "merge".into(),
        kind: LayerKind::Add { relu: false },
        role: Role::Decoder,
        inputs: vec![c, a],
        out_shape: shape(1, 128, 28, 28),
        params: None,
    });
    g.output = 2;
    g.skips.push(SkipEdge { tap: 0, merge: 2 });
    let issues = g.validate().unwrap_err();
    assert!(issues.iter().any(|i| i.contains("channel mismatch")), "{issues:?}");
}

#[test]
fn validate_reports_cycles() {
    let mut g = fastdepth();
    let i = g.find("mobilenet.3.dw").unwrap();
    let later = g.find("mobilenet.5.dw").unwrap();
    g.layers[i].inputs = vec![NodeId::Layer(later)];
    let issues = g.validate().unwrap_err();
    assert!(issues.iter().any(|m| m.contains("cycle")), "{issues:?}");
}

#[test]
fn validate_reports_duplicate_names_and_bad_shapes() {
    let mut g = fastdepth();
    g.layers[3].name = g.layers[2].name.clone();
    g.layers[5].out_shape = shape(1, 7, 7, 7);
    let issues = g.validate().unwrap_err();
    assert!(issues.iter().any(|m| m.contains("duplicate")));
    assert!(issues.iter().any(|m| m.contains("declares output")));
}

#[test]
fn forward_is_deterministic_and_shaped() {
    let mut g = fastdepth();
    g.init_weights(7);
    let x = Tensor::create(g.input_shape, Fill::Uniform { seed: 3, low: 0.0, high: 1.0 });
    let a = g.forward(&x, &DefaultSchedules).unwrap();
    let b = g.forward(&x, &DefaultSchedules).unwrap();
    assert_eq!(a.shape(), shape(1, 1, 224, 224));
    assert!(a.is_finite());
    assert_eq!(a, b);
}

#[test]
fn forward_matches_reference_schedule_bitwise() {
    let enc = build_encoder(EncoderKind::MobileNet).unwrap();
    let mut g = assemble_network(&enc, DecoderKind::new(Upsample::NNConv5, true, SkipMode::Concat).unwrap()).unwrap();
    g.init_weights(1);
    let x = Tensor::create(g.input_shape, Fill::seeded(9));
    let fast = g.forward(&x, &DefaultSchedules).unwrap();
    let slow = g.forward(&x, &Schedule::naive()).unwrap();
    assert_eq!(fast, slow);
}

#[test]
fn forward_requires_weights_and_matching_input() {
    let g = build_decoder(DecoderKind::new(Upsample::NNConv5, true, SkipMode::None).unwrap()).unwrap();
    let x = Tensor::zeros(g.input_shape);
    assert!(matches!(g.forward(&x, &DefaultSchedules), Err(Error::MissingWeights(_))));
    let wrong = Tensor::zeros(shape(1, 3, 7, 7));
    assert!(g.forward(&wrong, &DefaultSchedules).is_err());
}

#[test]
fn observer_sees_every_layer_in_order() {
    let mut g = build_decoder(DecoderKind::new(Upsample::UpProj, false, SkipMode::None).unwrap()).unwrap();
    g.init_weights(2);
    let x = Tensor::create(g.input_shape, Fill::seeded(1));
    let mut seen = Vec::new();
    g.forward_observe(&x, &DefaultSchedules, |i, t| {
        assert_eq!(t.shape(), g.layers[i].out_shape);
        seen.push(i);
    })
    .unwrap();
    assert_eq!(seen, (0..g.layers.len()).collect::<Vec<_>>());
}

#[test]
fn init_is_seeded() {
    let mut a = fastdepth();
    let mut b = a.clone();
    a.init_weights(5);
    b.init_weights(5);
    assert_eq!(a, b);
    b.init_weights(6);
    assert_ne!(a, b);
}

#[test]
fn set_params_is_atomic() {
    let mut g = build_decoder(DecoderKind::new(Upsample::NNConv5, true, SkipMode::None).unwrap()).unwrap();
    g.init_weights(0);
    let before = g.clone();
    let slots = g.param_slots();
    let last = slots.last().unwrap().0.clone();
    let err = g.set_params_with(|name, dims| {
        if name == last {
            Err(Error::MissingWeights(name.into()))
        } else {
            Ok(vec![0.5; dims.iter().product()])
        }
    });
    assert!(err.is_err());
    assert_eq!(g, before);
    g.set_params_with(|_, dims| Ok(vec![0.5; dims.iter().product()])).unwrap();
    assert!(g.named_params().unwrap().iter().all(|(_, _, v)| v.iter().all(|&x| x == 0.5)));
}

#[test]
fn param_slots_cover_batch_norm_and_bias() {
    let g = build_decoder(DecoderKind::new(Upsample::NNConv5, false, SkipMode::None).unwrap()).unwrap();
    let names: Vec<String> = g.param_slots().into_iter().map(|(n, _)| n).collect();
    assert_eq!(&names[..5], ["decoder.1.conv.weight", "decoder.1.conv.bn_gamma", "decoder.1.conv.bn_beta", "decoder.1.conv.bn_mean", "decoder.1.conv.bn_var"]);
    assert_eq!(&names[names.len() - 2..], ["decoder.6.weight", "decoder.6.bias"]);
}

#[test]
fn resume_from_frontier_matches_full_forward() {
    let mut g = fastdepth();
    g.init_weights(4);
    let x = Tensor::create(g.input_shape, Fill::seeded(8));
    let starts = [0, g.find("mobilenet.4.pw").unwrap(), g.find("decoder.3.pw").unwrap(), g.output];
    let (full, frontiers) = g.capture_frontiers(&x, &DefaultSchedules, &starts).unwrap();
    assert_eq!(full, g.forward(&x, &DefaultSchedules).unwrap());
    for f in &frontiers {
        assert_eq!(g.resume(&x, f, &DefaultSchedules).unwrap(), full, "start {}", f.start());
    }
}
