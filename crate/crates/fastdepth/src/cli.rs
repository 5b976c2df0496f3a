//! The `fastdepth` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastdepth_core::cost::{count_graph, decomposition_ratio, CostReport};
use fastdepth_core::graph::{
    assemble_network, build_decoder, build_encoder, DecoderKind, EncoderKind, LayerKind, NetGraph, SkipMode, Upsample,
};
use fastdepth_core::metrics::{delta1, error_map, rmse, DepthPair};
use fastdepth_core::prune::{calibration_set, netadapt_prune, MacsResource, PruneConfig, ResourceModel};
use fastdepth_core::schedule::{DefaultSchedules, ScheduleCache, ScheduleSource};

use crate::error::{Error, Result};
use crate::parity::ActivationArchive;
use crate::pnm::{depth_read, depth_write, image_read_rgb, DepthFormat};
use crate::profiler::{profile_graph, render_breakdown, LatencyResource};
use crate::tuner::{cache_file, host_tag, load_cache, resolve_cache_dir, save_cache, tune_graph};
use crate::weights::{weights_save, WeightsFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fastdepth", version, about = "FastDepth inference engine and analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer MACs and weights; no weights needed.
    Summarize(SummarizeArgs),
    /// Measure whole-graph and per-layer latency.
    Bench(BenchArgs),
    /// Search kernel schedules for every convolution and update the cache.
    Tune(TuneArgs),
    /// Run one image through the network and write a depth map.
    Infer(InferArgs),
    /// Prune channels until the resource target is met.
    Prune(PruneArgs),
    /// Compare a predicted depth map with ground truth.
    Eval(EvalArgs),
    /// Check per-layer activations against a reference archive.
    Parity(ParityArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "mobilenet", value_parser = parse_encoder)]
    pub encoder: EncoderKind,
    /// upproj, upconv, deconv5, nnconv5 or nnconv5-dw.
    #[arg(long, default_value = "nnconv5-dw", value_parser = parse_decoder)]
    pub decoder: DecoderKind,
    /// none, add or concat [default: add for mobilenet, none for resnets].
    #[arg(long, value_parser = parse_skip)]
    pub skip: Option<SkipMode>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_encoder(s: &str) -> std::result::Result<EncoderKind, String> {
    s.parse().map_err(|e: fastdepth_core::Error| e.to_string())
}

fn parse_decoder(s: &str) -> std::result::Result<DecoderKind, String> {
    s.parse().map_err(|e: fastdepth_core::Error| e.to_string())
}

fn parse_skip(s: &str) -> std::result::Result<SkipMode, String> {
    s.parse().map_err(|e: fastdepth_core::Error| e.to_string())
}

impl ModelArgs {
    pub fn decoder_kind(&self) -> DecoderKind {
        let skip = self.skip.unwrap_or(match self.encoder {
            EncoderKind::MobileNet => SkipMode::Add,
            _ => SkipMode::None,
        });
        DecoderKind { skip, ..self.decoder }
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.encoder, self.decoder_kind())
    }

    /// The assembled network without weights.
    pub fn build(&self) -> Result<NetGraph> {
        let enc = build_encoder(self.encoder)?;
        Ok(assemble_network(&enc, self.decoder_kind())?)
    }

    /// The assembled network with weights from `path`, or seeded weights.
    pub fn build_loaded(&self, weights: Option<&Path>) -> Result<NetGraph> {
        let graph = self.build()?;
        match weights {
            Some(path) => {
                let file = WeightsFile::read(path)?;
                let mut graph = file.adapt_channels(&graph)?;
                file.apply(&mut graph, true)?;
                Ok(graph)
            }
            None => {
                let mut graph = graph;
                graph.init_weights(self.seed);
                Ok(graph)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print the encoder, decoder and whole-network comparison tables instead.
    #[arg(long)]
    pub tables: bool,
    /// Also write the rows as TSV to this file.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    /// Schedule-cache directory (overrides FASTDEPTH_CACHE_DIR).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Profile the decoder comparison (standard, depthwise, depthwise with
    /// skips) instead of one configuration.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Center-crop and resize the input to 224×224.
    #[arg(long)]
    pub resize: bool,
    /// Depth format [default: from the output extension, pfm otherwise].
    #[arg(long, value_parser = parse_depth_format)]
    pub format: Option<DepthFormat>,
    /// Schedule-cache directory (overrides FASTDEPTH_CACHE_DIR).
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ParityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory holding `index.tsv` and the raw activation blobs.
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Largest allowed max-abs difference per layer.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f32,
    /// Schedule-cache directory (overrides FASTDEPTH_CACHE_DIR).
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

fn parse_depth_format(s: &str) -> std::result::Result<DepthFormat, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResourceKind {
    Macs,
    Latency,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stop once the resource is at most this fraction of its initial value.
    #[arg(long = "target-macs", alias = "target", default_value_t = 0.5)]
    pub target: f64,
    /// Per-iteration reduction as a fraction of the initial resource.
    #[arg(long, default_value_t = 0.025)]
    pub step: f64,
    /// Calibration inputs.
    #[arg(long, default_value_t = 16)]
    pub calib: usize,
    #[arg(long, value_enum, default_value_t = ResourceKind::Macs)]
    pub resource: ResourceKind,
    /// Write the trajectory log here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the pruned weights here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Write |pred - gt| over valid pixels as a PFM.
    #[arg(long = "error-map")]
    pub error_map: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(&cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, Error::Usage(_)) { EXIT_USAGE } else { EXIT_RUNTIME }
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Error {
    Error::Usage(e.to_string())
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load the host's schedule cache if a cache directory is configured.
fn schedules_for(cache_flag: Option<&Path>) -> Result<Box<dyn ScheduleSource>> {
    match resolve_cache_dir(cache_flag) {
        Some(dir) => Ok(Box::new(load_cache(&cache_file(&dir), &host_tag())?)),
        None => Ok(Box::new(DefaultSchedules)),
    }
}

pub fn run(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Summarize(a) => summarize(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Tune(a) => tune(a, out),
        Command::Infer(a) => infer(a, out, err),
        Command::Prune(a) => prune(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Parity(a) => parity(a, out),
    }
}

fn summarize(a: &SummarizeArgs, out: &mut dyn Write) -> Result<()> {
    if a.tables {
        let (table, tsv) = comparison_tables()?;
        write_out(out, &table)?;
        if let Some(path) = &a.tsv {
            write_file(path, &tsv)?;
        }
        return Ok(());
    }
    let graph = a.model.build().map_err(usage)?;
    let report = count_graph(&graph);
    write_out(out, &format!("{}\n{}", a.model.label(), report.to_table()))?;
    let total = report.total();
    write_out(out, &format!("total macs {} weights {}\n", total.macs, total.weights))?;
    if let Some(path) = &a.tsv {
        write_file(path, &report.to_tsv())?;
    }
    Ok(())
}

/// One row of the comparison tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub section: &'static str,
    pub config: String,
    pub macs: u64,
    pub weights: u64,
}

/// Encoder-only, decoder-only and whole-network costs of the reference
/// configurations.
pub fn comparison_rows() -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    let mut push = |section, config: String, r: &CostReport| {
        let t = r.total();
        rows.push(TableRow {
            section,
            config,
            macs: t.macs,
            weights: t.weights,
        });
    };
    for kind in EncoderKind::ALL {
        push("encoders", kind.to_string(), &count_graph(&build_encoder(kind)?));
    }
    for up in Upsample::ALL {
        let d = DecoderKind::new(up, false, SkipMode::None)?;
        push("decoders", d.to_string(), &count_graph(&build_decoder(d)?));
    }
    let enc = build_encoder(EncoderKind::MobileNet)?;
    for (dw, skip) in [
        (false, SkipMode::None),
        (true, SkipMode::None),
        (true, SkipMode::Add),
        (true, SkipMode::Concat),
    ] {
        let d = DecoderKind::new(Upsample::NNConv5, dw, skip)?;
        push("networks", format!("mobilenet+{d}"), &count_graph(&assemble_network(&enc, d)?));
    }
    Ok(rows)
}

fn comparison_tables() -> Result<(String, String)> {
    let rows = comparison_rows()?;
    let mut table = String::new();
    let mut tsv = String::from("section\tconfig\tmacs\tweights\n");
    let mut section = "";
    for r in &rows {
        if r.section != section {
            section = r.section;
            table.push_str(&format!(
                "{section}\n  {:<34} {:>8} {:>10} {:>14} {:>10}\n",
                "config", "GMACs", "M weights", "macs", "weights"
            ));
        }
        table.push_str(&format!(
            "  {:<34} {:>8.3} {:>10.3} {:>14} {:>10}\n",
            r.config,
            r.macs as f64 / 1e9,
            r.weights as f64 / 1e6,
            r.macs,
            r.weights
        ));
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.section, r.config, r.macs, r.weights));
    }
    // Depthwise decomposition of every 5×5 decoder convolution.
    let dec = build_decoder(DecoderKind::new(Upsample::NNConv5, false, SkipMode::None)?)?;
    table.push_str("decomposition\n");
    for l in &dec.layers {
        if let LayerKind::Conv { spec, .. } = &l.kind {
            if spec.kernel == 5 {
                let d = decomposition_ratio(spec)?;
                table.push_str(&format!(
                    "  {:<34} ratio {:.9} (1/{} + 1/25)\n",
                    l.name, d.ratio, spec.out_c
                ));
            }
        }
    }
    Ok((table, tsv))
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let configs: Vec<ModelArgs> = if a.sweep {
        [(false, SkipMode::None), (true, SkipMode::None), (true, SkipMode::Add)]
            .into_iter()
            .map(|(dw, skip)| ModelArgs {
                decoder: DecoderKind {
                    depthwise: dw,
                    ..DecoderKind::new(Upsample::NNConv5, false, SkipMode::None).expect("static decoder")
                },
                skip: Some(skip),
                ..a.model.clone()
            })
            .collect()
    } else {
        vec![a.model.clone()]
    };
    if a.sweep && a.weights.is_some() {
        return Err(usage("--weights cannot be combined with --sweep"));
    }
    for m in &configs {
        m.build().map_err(usage)?;
    }
    let schedules = schedules_for(a.timing.cache.as_deref())?;
    let mut reports = Vec::new();
    for m in &configs {
        let graph = m.build_loaded(a.weights.as_deref())?;
        let report = profile_graph(&graph, schedules.as_ref(), a.timing.warmup, a.runs, m.seed, m.label())?;
        write_out(out, &report.to_table())?;
        reports.push(report);
    }
    let (chart, tsv) = render_breakdown(&reports);
    write_out(out, &chart)?;
    if let Some(path) = &a.tsv {
        let text = if a.sweep { tsv } else { reports[0].to_tsv() };
        write_file(path, &text)?;
    }
    Ok(())
}

fn tune(a: &TuneArgs, out: &mut dyn Write) -> Result<()> {
    let dir = resolve_cache_dir(a.timing.cache.as_deref())
        .ok_or_else(|| usage("tune needs --cache or FASTDEPTH_CACHE_DIR"))?;
    let graph = a.model.build().map_err(usage)?;
    let host = host_tag();
    let report = tune_graph(&graph, a.timing.warmup, a.runs, &host)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = cache_file(&dir);
    let mut cache: ScheduleCache = load_cache(&path, &host)?;
    report.merge_into(&mut cache)?;
    save_cache(&cache, &path)?;
    write_out(out, &report.to_table())?;
    write_out(out, &format!("{} entries for {host} in {}\n", cache.len(), path.display()))
}

fn infer(a: &InferArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    a.model.build().map_err(usage)?;
    let graph = a.model.build_loaded(a.weights.as_deref())?;
    let schedules = schedules_for(a.cache.as_deref())?;
    let x = image_read_rgb(&a.input, a.resize)?;
    let depth = graph.forward(&x, schedules.as_ref())?;
    let format = a.format.unwrap_or_else(|| DepthFormat::from_path(&a.output));
    let clamped = depth_write(&depth, &a.output, format)?;
    if clamped > 0 {
        let _ = writeln!(err, "warning: {clamped} depth values clamped to the 16-bit millimeter range");
    }
    let s = depth.shape();
    write_out(
        out,
        &format!("wrote {}x{} depth map to {}\n", s.w, s.h, a.output.display()),
    )
}

fn parity(a: &ParityArgs, out: &mut dyn Write) -> Result<()> {
    if !(a.tolerance >= 0.0) {
        return Err(usage("--tolerance must be non-negative"));
    }
    a.model.build().map_err(usage)?;
    let graph = a.model.build_loaded(a.weights.as_deref())?;
    let schedules = schedules_for(a.cache.as_deref())?;
    let archive = ActivationArchive::read(&a.archive)?;
    let report = archive.compare(&graph, schedules.as_ref())?;
    let mut text = String::from("layer\tmax_abs_diff\n");
    let mut failed = Vec::new();
    for l in &report {
        text.push_str(&format!("{}\t{:.6e}\n", l.name, l.max_abs_diff));
        if !(l.max_abs_diff <= a.tolerance) {
            failed.push(l.name.clone());
        }
    }
    write_out(out, &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Parity {
            tolerance: a.tolerance,
            layers: failed,
        })
    }
}

fn prune(a: &PruneArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = PruneConfig {
        target_fraction: a.target,
        step_fraction: a.step,
        seed: a.model.seed,
        ..PruneConfig::default()
    };
    if !(a.target > 0.0 && a.target < 1.0) || !(a.step > 0.0 && a.step <= 1.0) || a.calib == 0 {
        return Err(usage("need 0 < --target-macs < 1, 0 < --step <= 1 and --calib >= 1"));
    }
    a.model.build().map_err(usage)?;
    let graph = a.model.build_loaded(a.weights.as_deref())?;
    let schedules = schedules_for(a.timing.cache.as_deref())?;
    let calib = calibration_set(graph.input_shape, a.calib, a.model.seed);
    let latency;
    let resource: &dyn ResourceModel = match a.resource {
        ResourceKind::Macs => &MacsResource,
        ResourceKind::Latency => {
            let _ = writeln!(err, "note: latency-driven pruning depends on host timing and is not reproducible");
            latency = LatencyResource::new(schedules.as_ref(), a.timing.warmup.max(2), 5);
            &latency
        }
    };
    let trajectory = netadapt_prune(&graph, resource, &config, &calib, schedules.as_ref())?;
    let log = trajectory.log_text();
    if let Some(path) = &a.log {
        write_file(path, &log)?;
    }
    if let Some(path) = &a.output {
        weights_save(&trajectory.graph, path)?;
    }
    let before = count_graph(&graph).total();
    let report = count_graph(&trajectory.graph);
    let after = report.total();
    write_out(out, &report.to_table())?;
    write_out(
        out,
        &format!(
            "{} iterations; macs {} -> {} ({:.3}x); weights {} -> {} ({:.3}x)\n",
            trajectory.steps.len(),
            before.macs,
            after.macs,
            before.macs as f64 / after.macs as f64,
            before.weights,
            after.weights,
            before.weights as f64 / after.weights as f64
        ),
    )
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let pred = depth_read(&a.pred)?;
    let gt = depth_read(&a.gt)?;
    let pair = DepthPair::new(&pred, &gt)?;
    let d1 = delta1(&pair)?;
    let e = rmse(&pair)?;
    if let Some(path) = &a.error_map {
        depth_write(&error_map(&pair), path, DepthFormat::Pfm)?;
    }
    write_out(
        out,
        &format!("valid_pixels\t{}\ndelta1\t{d1:.6}\nrmse\t{e:.6}\n", pair.valid_count()),
    )
}
