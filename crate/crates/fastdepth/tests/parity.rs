use std::process::Command;

use fastdepth::error::Error;
use fastdepth::parity::{ActivationArchive, INDEX_FILE, PROBE_INPUT};
use fastdepth::weights::{weights_save, WeightsFile};
use fastdepth_core::graph::{assemble_network, build_encoder, DecoderKind, EncoderKind, NetGraph};
use fastdepth_core::schedule::{DefaultSchedules, Schedule};
use fastdepth_core::{Fill, Tensor, TensorShape};

fn default_net(seed: u64) -> NetGraph {
    let enc = build_encoder(EncoderKind::MobileNet).unwrap();
    let mut g = assemble_network(&enc, DecoderKind::fastdepth()).unwrap();
    g.init_weights(seed);
    g
}

const DECODER_OUTPUTS: [&str; 5] = ["decoder.1.interp", "decoder.2.skip", "decoder.3.skip", "decoder.4.skip", "decoder.5.interp"];

#[test]
fn archive_round_trips_and_records_shapes() {
    let g = default_net(0);
    let x = Tensor::create(g.input_shape, Fill::seeded(42));
    let archive = ActivationArchive::capture(&g, &x, &DECODER_OUTPUTS, &DefaultSchedules).unwrap();
    assert_eq!(archive.layers["decoder.2.skip"].shape(), TensorShape::new(1, 256, 28, 28).unwrap());
    let dir = tempfile::tempdir().unwrap();
    archive.write(dir.path()).unwrap();
    let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert!(index.contains("decoder.2.skip\tdecoder.2.skip.f32\t1,256,28,28\n"), "{index}");
    assert!(index.contains(&format!("{PROBE_INPUT}\tinput.f32\t1,3,224,224\n")));
    let blob = std::fs::read(dir.path().join("input.f32")).unwrap();
    assert_eq!(&blob[..4], &x.data()[0].to_le_bytes());
    assert_eq!(ActivationArchive::read(dir.path()).unwrap(), archive);
}

#[test]
fn empty_layer_list_keeps_only_the_probe_input() {
    let g = default_net(0);
    let x = Tensor::create(g.input_shape, Fill::seeded(1));
    let archive = ActivationArchive::capture(&g, &x, &[], &DefaultSchedules).unwrap();
    assert!(archive.layers.is_empty());
    assert!(archive.compare(&g, &DefaultSchedules).unwrap().is_empty());
}

#[test]
fn parity_is_zero_for_the_same_weights_and_detects_a_perturbation() {
    let g = default_net(3);
    let x = Tensor::create(g.input_shape, Fill::seeded(5));
    let archive = ActivationArchive::capture(&g, &x, &DECODER_OUTPUTS, &Schedule::naive()).unwrap();
    let same = archive.compare(&g, &DefaultSchedules).unwrap();
    assert_eq!(same.iter().map(|l| l.name.as_str()).collect::<Vec<_>>(), DECODER_OUTPUTS);
    assert!(same.iter().all(|l| l.max_abs_diff <= 1e-3), "{same:?}");

    let mut weights = WeightsFile::from_graph(&g).unwrap();
    let entry = weights.entries.iter_mut().find(|e| e.name == "decoder.3.pw.weight").unwrap();
    entry.data[0] += 1.0;
    let mut other = g.clone();
    weights.apply(&mut other, true).unwrap();
    let report = archive.compare(&other, &DefaultSchedules).unwrap();
    assert!(report[..2].iter().all(|l| l.max_abs_diff <= 1e-3));
    assert!(report[2..].iter().all(|l| l.max_abs_diff > 1e-3), "{report:?}");
}

#[test]
fn nan_never_counts_as_agreement() {
    let g = default_net(0);
    let x = Tensor::create(g.input_shape, Fill::seeded(1));
    let mut archive = ActivationArchive::capture(&g, &x, &["decoder.6"], &DefaultSchedules).unwrap();
    archive.layers.get_mut("decoder.6").unwrap().data_mut()[7] = f32::NAN;
    let report = archive.compare(&g, &DefaultSchedules).unwrap();
    assert_eq!(report[0].max_abs_diff, f32::INFINITY);
}

#[test]
fn malformed_archives_are_rejected() {
    let g = default_net(0);
    let x = Tensor::create(g.input_shape, Fill::seeded(1));
    let archive = ActivationArchive::capture(&g, &x, &["decoder.1.pw"], &DefaultSchedules).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    archive.write(d).unwrap();
    let index = std::fs::read_to_string(d.join(INDEX_FILE)).unwrap();

    std::fs::write(d.join(INDEX_FILE), format!("{index}decoder.1.pw\tdecoder.1.pw.f32\t1,512,7,7\n")).unwrap();
    assert!(matches!(ActivationArchive::read(d), Err(Error::Format { .. })));
    std::fs::write(d.join(INDEX_FILE), index.replace("1,512,7,7", "1,512,7,8")).unwrap();
    assert!(matches!(ActivationArchive::read(d), Err(Error::Format { .. })));
    std::fs::write(d.join(INDEX_FILE), "x\t../escape.f32\t1,1,1,1\n").unwrap();
    assert!(ActivationArchive::read(d).is_err());

    let mut unknown = archive.clone();
    unknown.layers.insert("decoder.9".into(), Tensor::zeros(TensorShape::new(1, 1, 1, 1).unwrap()));
    assert!(unknown.compare(&g, &DefaultSchedules).is_err());
    let mut misshapen = archive.clone();
    misshapen.layers.insert("decoder.1.pw".into(), Tensor::zeros(TensorShape::new(1, 1, 7, 7).unwrap()));
    assert!(misshapen.compare(&g, &DefaultSchedules).is_err());
    let mut no_input = archive;
    no_input.input = None;
    assert!(no_input.compare(&g, &DefaultSchedules).is_err());
    assert!(ActivationArchive::capture(&g, &x, &["nope"], &DefaultSchedules).is_err());
}

#[test]
fn cli_parity_against_saved_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = default_net(11);
    weights_save(&g, &d.join("w.fdw")).unwrap();
    let x = Tensor::create(g.input_shape, Fill::seeded(9));
    ActivationArchive::capture(&g, &x, &DECODER_OUTPUTS, &Schedule::naive())
        .unwrap()
        .write(&d.join("ref"))
        .unwrap();
    let run = |weights: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fastdepth"));
        cmd.args(["parity", "--archive", "ref"]).current_dir(d).env_remove("FASTDEPTH_CACHE_DIR");
        if let Some(w) = weights {
            cmd.args(["--weights", w]);
        }
        cmd.output().unwrap()
    };
    let ok = run(Some("w.fdw"));
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + DECODER_OUTPUTS.len());
    // Seed 0 weights differ from the archived seed 11 network.
    let bad = run(None);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("parity tolerance"));
}
