use std::path::Path;
use std::process::{Command, Output};

use fastdepth::cli::{comparison_rows, main_with};
use fastdepth::pnm::depth_read;
use fastdepth_core::TensorShape;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastdepth"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FASTDEPTH_CACHE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_ppm(path: &Path, w: usize, h: usize) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..w * h * 3).map(|i| (i * 7 % 256) as u8));
    std::fs::write(path, bytes).unwrap();
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["summarize"], dir.path()).status.code(), Some(0));
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(run(&["--version"], dir.path()).status.code(), Some(0));
    let bogus = run(&["summarize", "--bogus"], dir.path());
    assert_eq!(bogus.status.code(), Some(1));
    assert!(!bogus.stderr.is_empty());
    assert_eq!(run(&[], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["summarize", "--decoder", "upconv-dw"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["summarize", "--encoder", "resnet18", "--skip", "add"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["tune"], dir.path()).status.code(), Some(1));
    assert_eq!(run(&["prune", "--target-macs", "1.5"], dir.path()).status.code(), Some(1));
    let missing = run(&["infer", "--input", "nope.ppm", "--output", "d.pfm"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ppm"));
    assert!(listing(dir.path()).is_empty());
}

#[test]
fn in_process_entry_point_matches_binary() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(main_with(["fastdepth", "summarize", "--decoder", "nnconv5"], &mut out, &mut err), 0);
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("total macs 3780585984 weights 20692065"), "{text}");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(main_with(["fastdepth", "frobnicate"], &mut out, &mut err), 1);
    assert!(out.is_empty() && !err.is_empty());
}

#[test]
fn summarize_standard_decoder_matches_whole_network_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["summarize", "--encoder", "mobilenet", "--decoder", "nnconv5", "--skip", "none"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let total = text.lines().find(|l| l.starts_with("total macs")).unwrap();
    let nums: Vec<f64> = total.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    assert!((nums[0] / 3.78e9 - 1.0).abs() <= 0.02, "{total}");
    assert!((nums[1] / 20.6e6 - 1.0).abs() <= 0.02, "{total}");
}

#[test]
fn summarize_tsv_matches_stdout_and_is_only_written_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["summarize"], dir.path());
    assert!(listing(dir.path()).is_empty());
    let o2 = run(&["summarize", "--tsv", "costs.tsv"], dir.path());
    assert_eq!(stdout(&o), stdout(&o2));
    assert_eq!(listing(dir.path()), ["costs.tsv"]);
    let tsv = std::fs::read_to_string(dir.path().join("costs.tsv")).unwrap();
    let table = stdout(&o);
    let mut macs = 0u64;
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        macs += cols[5].parse::<u64>().unwrap();
        // Every TSV row appears in the table with the same numbers.
        let row = table.lines().find(|l| l.split_whitespace().next() == Some(cols[0])).unwrap();
        let fields: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(&fields[fields.len() - 2..], &cols[4..6], "{row}");
    }
    assert!(table.contains(&format!("total macs {macs} ")));
}

#[test]
fn summarize_tables_match_comparison_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["summarize", "--tables", "--tsv", "tables.tsv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for section in ["encoders", "decoders", "networks", "decomposition"] {
        assert!(text.lines().any(|l| l == section), "{section}");
    }
    let tsv = std::fs::read_to_string(dir.path().join("tables.tsv")).unwrap();
    let rows = comparison_rows().unwrap();
    assert_eq!(tsv.lines().count(), rows.len() + 1);
    for (line, r) in tsv.lines().skip(1).zip(&rows) {
        assert_eq!(line, format!("{}\t{}\t{}\t{}", r.section, r.config, r.macs, r.weights));
        assert!(text.contains(&format!("{:>14} {:>10}", r.macs, r.weights)));
    }
}

#[test]
fn infer_writes_a_224_depth_map_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_ppm(&d.join("img.ppm"), 224, 224);
    let save = run(&["prune", "--target-macs", "0.99", "--calib", "1", "--output", "w.fdw"], d);
    assert_eq!(save.status.code(), Some(0), "{}", String::from_utf8_lossy(&save.stderr));
    for out in ["d.pfm", "e.pfm"] {
        let o = run(&["infer", "--weights", "w.fdw", "--input", "img.ppm", "--output", out], d);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let depth = depth_read(&d.join("d.pfm")).unwrap();
    assert_eq!(depth.shape(), TensorShape::new(1, 1, 224, 224).unwrap());
    assert_eq!(std::fs::read(d.join("d.pfm")).unwrap(), std::fs::read(d.join("e.pfm")).unwrap());

    write_ppm(&d.join("wide.ppm"), 320, 240);
    assert_eq!(run(&["infer", "--input", "wide.ppm", "--output", "x.pfm"], d).status.code(), Some(2));
    let o = run(&["infer", "--input", "wide.ppm", "--output", "x.pgm", "--resize"], d);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read(d.join("x.pgm")).unwrap().starts_with(b"P5\n224 224\n65535\n"));
    assert_eq!(listing(d), ["d.pfm", "e.pfm", "img.ppm", "w.fdw", "wide.ppm", "x.pgm"]);
}

#[test]
fn prune_logs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |log: &'static str| ["prune", "--target-macs", "0.96", "--calib", "2", "--seed", "7", "--log", log];
    let a = run(&args("a.log"), d);
    let b = run(&args("b.log"), d);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let la = std::fs::read(d.join("a.log")).unwrap();
    assert_eq!(la, std::fs::read(d.join("b.log")).unwrap());
    let text = String::from_utf8(la).unwrap();
    assert!(text.starts_with("# resource=macs seed=7 "));
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() >= 1);
    assert_eq!(listing(d), ["a.log", "b.log"]);
}

#[test]
fn eval_reports_metrics_and_optional_error_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pfm = |name: &str, vals: [f32; 4]| {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(d.join(name), bytes).unwrap();
    };
    pfm("pred.pfm", [1.0, 2.0, 3.0, 4.0]);
    pfm("gt.pfm", [1.0, 2.0, 3.0, 5.1]);
    let o = run(&["eval", "--pred", "pred.pfm", "--gt", "gt.pfm"], d);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("valid_pixels\t4\n"), "{text}");
    assert!(text.contains("delta1\t0.750000\n"), "{text}");
    assert!(listing(d) == ["gt.pfm", "pred.pfm"]);
    let o = run(&["eval", "--pred", "pred.pfm", "--gt", "gt.pfm", "--error-map", "err.pfm"], d);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(depth_read(&d.join("err.pfm")).unwrap().shape(), TensorShape::new(1, 1, 2, 2).unwrap());
    pfm("zero.pfm", [0.0; 4]);
    assert_eq!(run(&["eval", "--pred", "pred.pfm", "--gt", "zero.pfm"], d).status.code(), Some(2));
}

#[test]
fn tune_writes_only_into_the_cache_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = Command::new(env!("CARGO_BIN_EXE_fastdepth"))
        .args(["tune", "--decoder", "nnconv5-dw", "--skip", "none", "--warmup", "2", "--runs", "5"])
        .current_dir(d)
        .env("FASTDEPTH_CACHE_DIR", d.join("cache"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(listing(d), ["cache"]);
    assert_eq!(listing(&d.join("cache")), ["schedules.tsv"]);
    let text = std::fs::read_to_string(d.join("cache/schedules.tsv")).unwrap();
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() > 10);
}
