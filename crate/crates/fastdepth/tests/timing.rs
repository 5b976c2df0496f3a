use fastdepth::profiler::{parse_breakdown_tsv, profile_graph, render_breakdown, LatencyReport, LatencyResource, LayerTiming};
use fastdepth::tuner::{
    format_ms, graph_signatures, host_tag, load_cache, parse_ms, save_cache, time_schedule, tune_graph,
};
use fastdepth_core::graph::{build_decoder, DecoderKind, NetGraph, Role, SkipMode, Upsample};
use fastdepth_core::prune::ResourceModel;
use fastdepth_core::schedule::{enumerate_schedules, median, CacheEntry, OpSignature, Schedule, ScheduleCache, ScheduleSource};
use fastdepth_core::{Fill, Tensor};
use proptest::prelude::*;

fn decoder(dw: bool) -> NetGraph {
    let mut g = build_decoder(DecoderKind::new(Upsample::NNConv5, dw, SkipMode::None).unwrap()).unwrap();
    g.init_weights(1);
    g
}

fn sig(s: &str) -> OpSignature {
    s.parse().unwrap()
}

#[test]
fn host_tag_is_a_single_field() {
    let tag = host_tag();
    assert!(!tag.is_empty());
    assert!(!tag.contains(char::is_whitespace));
    assert!(tag.starts_with(std::env::consts::OS));
    assert_eq!(tag, host_tag());
}

#[test]
fn median_of_odd_sample() {
    assert_eq!(median(&[5, 3, 9, 4, 7]), 5);
}

#[test]
fn timing_needs_enough_runs() {
    let s = sig("dw k5 s1 p2 c16 h14 w14");
    assert!(time_schedule(&s, &Schedule::naive(), 2, 4, 0).is_err());
    assert!(time_schedule(&s, &Schedule::naive(), 1, 5, 0).is_err());
    assert!(time_schedule(&s, &Schedule::naive(), 2, 5, 0).is_ok());
}

#[test]
fn timing_does_not_perturb_numerics() {
    let s = sig("conv k3 s2 p1 i8 o16 h20 w20");
    let a = time_schedule(&s, &Schedule::naive(), 2, 5, 4).unwrap();
    let b = time_schedule(&s, &Schedule::naive(), 2, 5, 4).unwrap();
    assert_eq!(a.output, b.output);
    assert_eq!(a.samples.len(), 5);
    assert!(a.median_ns > 0);
    for schedule in enumerate_schedules(&s) {
        assert_eq!(time_schedule(&s, &schedule, 2, 5, 4).unwrap().output, a.output, "{schedule}");
    }
    let t = sig("tconv k5 s2 p2 op1 i8 o4 h6 w6");
    let naive = time_schedule(&t, &Schedule::naive(), 2, 5, 1).unwrap();
    for schedule in enumerate_schedules(&t) {
        assert_eq!(time_schedule(&t, &schedule, 2, 5, 1).unwrap().output, naive.output, "{schedule}");
    }
}

#[test]
fn tuning_picks_the_measured_argmin_and_preserves_outputs() {
    let g = decoder(true);
    let report = tune_graph(&g, 2, 5, "test-host").unwrap();
    assert_eq!(
        report.signatures.iter().map(|t| t.sig).collect::<Vec<_>>(),
        graph_signatures(&g)
    );
    for t in &report.signatures {
        assert!(t.best_ns <= t.naive_ns, "{}", t.sig);
        let min = t.candidates.iter().map(|c| c.1).min().unwrap();
        assert_eq!(t.best_ns, min);
        assert_eq!(t.candidates[0], (Schedule::naive(), t.naive_ns));
        assert_eq!(t.candidates.len(), enumerate_schedules(&t.sig).len());
        assert_eq!(t.max_abs_diff, 0.0);
    }
    let cache = report.to_cache().unwrap();
    assert_eq!(cache.len(), report.signatures.len());
    let x = Tensor::create(g.input_shape, Fill::seeded(2));
    let tuned = g.forward(&x, &cache).unwrap();
    let naive = g.forward(&x, &Schedule::naive()).unwrap();
    let scale = naive.data().iter().fold(0f32, |m, v| m.max(v.abs())).max(1.0);
    assert!(tuned.max_abs_diff(&naive).unwrap() <= 1e-5 * scale);
}

#[test]
fn cache_file_round_trips_and_merges_per_host() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedules.tsv");
    assert!(load_cache(&path, "h1").unwrap().is_empty());

    let s1 = sig("dw k5 s1 p2 c512 h14 w14");
    let s2 = sig("conv k1 s1 p0 i64 o32 h112 w112");
    let mut a = ScheduleCache::new("h1");
    let entry = |schedule, host: &str| CacheEntry {
        schedule,
        median_ns: 1234,
        samples: 5,
        host: host.into(),
    };
    a.insert(s1, entry(Schedule::tiled(14, 8, true), "h1")).unwrap();
    a.insert(s1, entry(Schedule::naive_vectorized(), "h2")).unwrap();
    save_cache(&a, &path).unwrap();

    let loaded = load_cache(&path, "h1").unwrap();
    assert_eq!(loaded, a);
    assert_eq!(loaded.schedule_for(&s1), Schedule::tiled(14, 8, true));
    assert_eq!(loaded.schedule_for(&s2), Schedule::naive());
    let other = load_cache(&path, "h2").unwrap();
    assert_eq!(other.schedule_for(&s1), Schedule::naive_vectorized());

    let mut merged = load_cache(&path, "h1").unwrap();
    merged.insert(s2, entry(Schedule::tiled(3, 16, true), "h1")).unwrap();
    save_cache(&merged, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    assert!(text.lines().all(|l| l.starts_with('#') || l.split('\t').count() == 5));
}

#[test]
fn corrupt_cache_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedules.tsv");
    std::fs::write(&path, "dw k5 s1 p2 c512 h14 w14\tbogus\t1\t5\th\n").unwrap();
    assert!(load_cache(&path, "h").is_err());
}

#[test]
fn ms_formatting_examples() {
    assert_eq!(format_ms(12_034_500), "12.034500");
    assert_eq!(format_ms(999), "0.000999");
    assert_eq!(parse_ms("12.034500"), Some(12_034_500));
    assert_eq!(parse_ms("12.0345"), None);
    assert_eq!(parse_ms(".000001"), None);
}

proptest! {
    #[test]
    fn ms_formatting_round_trips(ns in any::<u64>()) {
        prop_assert_eq!(parse_ms(&format_ms(ns)), Some(ns));
    }
}

#[test]
fn profile_reports_every_layer_and_leaves_the_graph_alone() {
    let g = decoder(true);
    let before = g.clone();
    let report = profile_graph(&g, &Schedule::naive_vectorized(), 1, 10, 0, "dw").unwrap();
    assert_eq!(g, before);
    assert_eq!(report.layers.len(), g.layers.len());
    assert!(report.layers.iter().all(|l| l.median_ns > 0));
    assert!(report.whole_ns > 0);
    assert_eq!(report.encoder_ns(), 0);
    assert_eq!(report.decoder_ns(), report.layer_sum_ns());
    assert_eq!(report.fps(), 1000.0 / (report.whole_ns as f64 / 1e6));
    assert!(profile_graph(&g, &Schedule::naive(), 1, 9, 0, "dw").is_err());
    let tsv = report.to_tsv();
    assert_eq!(tsv.lines().count(), 1 + g.layers.len() + 3);
    assert!(report.to_table().contains("frames per second"));
}

fn fake(label: &str, enc: u64, dec: u64) -> LatencyReport {
    let layer = |name: &str, role, ns| LayerTiming {
        name: name.into(),
        kind: "conv",
        role,
        median_ns: ns,
    };
    LatencyReport {
        label: label.into(),
        layers: vec![layer("e", Role::Encoder, enc), layer("d", Role::Decoder, dec)],
        whole_ns: enc + dec + 17,
    }
}

#[test]
fn breakdown_of_one_report_has_two_segments() {
    let (chart, tsv) = render_breakdown(&[fake("a", 4_000_000, 1_000_000)]);
    assert_eq!(chart.lines().count(), 1);
    let bar: String = chart.chars().filter(|c| *c == 'E' || *c == 'D').collect();
    assert!(bar.starts_with('E') && bar.ends_with('D'));
    assert_eq!(bar.matches('E').count(), 4 * bar.matches('D').count());
    assert_eq!(tsv.lines().count(), 2);
}

#[test]
fn breakdown_rows_keep_order_and_tsv_round_trips() {
    let reports = [
        fake("upproj", 9_100_000, 88_000_123),
        fake("upconv", 9_000_000, 40_000_001),
        fake("nnconv5", 9_050_000, 12_345_678),
        fake("nnconv5-dw", 8_999_999, 1_000_001),
    ];
    let (chart, tsv) = render_breakdown(&reports);
    let labels: Vec<&str> = chart.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["upproj", "upconv", "nnconv5", "nnconv5-dw"]);
    let rows = parse_breakdown_tsv(&tsv).unwrap();
    assert_eq!(rows.len(), 4);
    for (row, r) in rows.iter().zip(&reports) {
        assert_eq!(row.label, r.label);
        assert_eq!(row.encoder_ns, r.encoder_ns());
        assert_eq!(row.decoder_ns, r.decoder_ns());
        assert_eq!(row.whole_ns, r.whole_ns);
    }
    assert!(parse_breakdown_tsv("nope\n").is_err());
}

#[test]
fn latency_resource_memoizes_and_tracks_size() {
    let schedules = Schedule::naive_vectorized();
    let resource = LatencyResource::new(&schedules, 2, 5);
    let dw = decoder(true);
    let a = resource.measure(&dw).unwrap();
    assert!(a > 0.0);
    assert_eq!(resource.measure(&dw).unwrap(), a);
    assert_eq!(resource.name(), "latency");
}
