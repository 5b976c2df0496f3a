//! Whole-graph and per-layer latency, split by encoder and decoder.

use std::cell::RefCell;
use std::collections::BTreeMap;

use fastdepth_core::graph::{NetGraph, NodeId, Role};
use fastdepth_core::prune::ResourceModel;
use fastdepth_core::schedule::{median, OpSignature, ScheduleSource};
use fastdepth_core::{Fill, Tensor};

use crate::error::{Error, Result};
use crate::tuner::{format_ms, measure, parse_ms, time_schedule};

pub const MIN_PROFILE_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTiming {
    pub name: String,
    pub kind: &'static str,
    pub role: Role,
    pub median_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub label: String,
    pub layers: Vec<LayerTiming>,
    pub whole_ns: u64,
}

impl LatencyReport {
    fn subtotal(&self, role: Role) -> u64 {
        self.layers.iter().filter(|l| l.role == role).map(|l| l.median_ns).sum()
    }

    pub fn encoder_ns(&self) -> u64 {
        self.subtotal(Role::Encoder)
    }

    pub fn decoder_ns(&self) -> u64 {
        self.subtotal(Role::Decoder)
    }

    pub fn layer_sum_ns(&self) -> u64 {
        self.layers.iter().map(|l| l.median_ns).sum()
    }

    pub fn whole_ms(&self) -> f64 {
        self.whole_ns as f64 / 1e6
    }

    pub fn fps(&self) -> f64 {
        1000.0 / self.whole_ms()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n{:<28} {:<7} {:<8} {:>12}\n", self.label, "layer", "kind", "role", "median ms");
        for l in &self.layers {
            s.push_str(&format!(
                "{:<28} {:<7} {:<8} {:>12}\n",
                l.name,
                l.kind,
                l.role.to_string(),
                format_ms(l.median_ns)
            ));
        }
        s.push_str(&format!("{:<45} {:>12}\n", "encoder subtotal", format_ms(self.encoder_ns())));
        s.push_str(&format!("{:<45} {:>12}\n", "decoder subtotal", format_ms(self.decoder_ns())));
        s.push_str(&format!("{:<45} {:>12}\n", "whole graph", format_ms(self.whole_ns)));
        s.push_str(&format!("{:<45} {:>12.2}\n", "frames per second", self.fps()));
        s
    }

    /// One line per layer followed by subtotal lines; times in ms.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("layer\tkind\trole\tmedian_ms\n");
        for l in &self.layers {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", l.name, l.kind, l.role, format_ms(l.median_ns)));
        }
        s.push_str(&format!("#encoder\t\t\t{}\n", format_ms(self.encoder_ns())));
        s.push_str(&format!("#decoder\t\t\t{}\n", format_ms(self.decoder_ns())));
        s.push_str(&format!("#whole\t\t\t{}\n", format_ms(self.whole_ns)));
        s
    }
}

/// Time the whole graph, then every layer in isolation on the activations a
/// single forward pass produced. Nothing in `graph` is modified.
pub fn profile_graph(
    graph: &NetGraph,
    schedules: &dyn ScheduleSource,
    warmup: usize,
    runs: usize,
    seed: u64,
    label: impl Into<String>,
) -> Result<LatencyReport> {
    if runs < MIN_PROFILE_RUNS {
        return Err(Error::Usage(format!("profiling needs at least {MIN_PROFILE_RUNS} runs (got {runs})")));
    }
    let x = Tensor::create(graph.input_shape, Fill::Uniform { seed, low: 0.0, high: 1.0 });
    let mut acts: Vec<Option<Tensor>> = vec![None; graph.layers.len()];
    graph.forward_observe(&x, schedules, |i, t| acts[i] = Some(t.clone()))?;
    let (whole, _) = measure(warmup, runs, || Ok(graph.forward(&x, schedules)?))?;

    let mut layers = Vec::with_capacity(graph.layers.len());
    for (i, l) in graph.layers.iter().enumerate() {
        let inputs: Vec<&Tensor> = l
            .inputs
            .iter()
            .map(|n| match n {
                NodeId::Input => &x,
                NodeId::Layer(j) => acts[*j].as_ref().expect("every layer ran"),
            })
            .collect();
        let (samples, _) = measure(warmup, runs, || Ok(graph.run_layer(i, &inputs, schedules)?))?;
        layers.push(LayerTiming {
            name: l.name.clone(),
            kind: l.kind.label(),
            role: l.role,
            median_ns: median(&samples),
        });
    }
    Ok(LatencyReport {
        label: label.into(),
        layers,
        whole_ns: median(&whole),
    })
}

/// Stacked encoder/decoder breakdown of several configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub label: String,
    pub encoder_ns: u64,
    pub decoder_ns: u64,
    pub whole_ns: u64,
}

const BAR_WIDTH: usize = 50;

/// A text bar chart (`E` encoder, `D` decoder, scaled to the slowest row)
/// and the same numbers as TSV, rows in the order given.
pub fn render_breakdown(reports: &[LatencyReport]) -> (String, String) {
    let rows: Vec<BreakdownRow> = reports
        .iter()
        .map(|r| BreakdownRow {
            label: r.label.clone(),
            encoder_ns: r.encoder_ns(),
            decoder_ns: r.decoder_ns(),
            whole_ns: r.whole_ns,
        })
        .collect();
    let widest = rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
    let longest = rows.iter().map(|r| r.encoder_ns + r.decoder_ns).max().unwrap_or(1).max(1);
    let mut chart = String::new();
    let mut tsv = String::from("config\tencoder_ms\tdecoder_ms\twhole_ms\n");
    for r in &rows {
        let cells = |ns: u64| ((ns as f64 / longest as f64) * BAR_WIDTH as f64).round() as usize;
        chart.push_str(&format!(
            "{:<widest$} |{}{}{} enc {} + dec {} ms (whole {} ms)\n",
            r.label,
            "E".repeat(cells(r.encoder_ns)),
            "D".repeat(cells(r.decoder_ns)),
            " ".repeat(BAR_WIDTH.saturating_sub(cells(r.encoder_ns) + cells(r.decoder_ns))),
            format_ms(r.encoder_ns),
            format_ms(r.decoder_ns),
            format_ms(r.whole_ns),
        ));
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.label,
            format_ms(r.encoder_ns),
            format_ms(r.decoder_ns),
            format_ms(r.whole_ns)
        ));
    }
    (chart, tsv)
}

/// Parse the TSV half of [`render_breakdown`].
pub fn parse_breakdown_tsv(text: &str) -> std::result::Result<Vec<BreakdownRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("config\tencoder_ms\tdecoder_ms\twhole_ms") {
        return Err("missing breakdown header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let ms = |s: &str| parse_ms(s).ok_or_else(|| format!("row {}: bad time `{s}`", i + 1));
            match cols.as_slice() {
                [label, e, d, w] => Ok(BreakdownRow {
                    label: label.to_string(),
                    encoder_ns: ms(e)?,
                    decoder_ns: ms(d)?,
                    whole_ns: ms(w)?,
                }),
                _ => Err(format!("row {}: expected 4 columns", i + 1)),
            }
        })
        .collect()
}

/// Latency resource for pruning: the sum over convolution layers of each
/// signature's measured median under `schedules`. Measurements are memoized
/// per signature; values depend on the host and are not bit-reproducible.
pub struct LatencyResource<'a> {
    schedules: &'a dyn ScheduleSource,
    warmup: usize,
    runs: usize,
    memo: RefCell<BTreeMap<OpSignature, u64>>,
}

impl std::fmt::Debug for LatencyResource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatencyResource")
            .field("warmup", &self.warmup)
            .field("runs", &self.runs)
            .field("measured", &self.memo.borrow().len())
            .finish()
    }
}

impl<'a> LatencyResource<'a> {
    pub fn new(schedules: &'a dyn ScheduleSource, warmup: usize, runs: usize) -> Self {
        Self {
            schedules,
            warmup,
            runs,
            memo: RefCell::new(BTreeMap::new()),
        }
    }

    fn signature_ns(&self, sig: &OpSignature) -> fastdepth_core::Result<u64> {
        if let Some(&ns) = self.memo.borrow().get(sig) {
            return Ok(ns);
        }
        let schedule = self.schedules.schedule_for(sig);
        let t = time_schedule(sig, &schedule, self.warmup, self.runs, 0)
            .map_err(|e| fastdepth_core::Error::Resource(e.to_string()))?;
        self.memo.borrow_mut().insert(*sig, t.median_ns);
        Ok(t.median_ns)
    }
}

impl ResourceModel for LatencyResource<'_> {
    fn name(&self) -> &str {
        "latency"
    }

    /// Nanoseconds.
    fn measure(&self, graph: &NetGraph) -> fastdepth_core::Result<f64> {
        let mut total = 0u64;
        for i in 0..graph.layers.len() {
            if let Some(sig) = graph.signature(i) {
                total += self.signature_ns(&sig)?;
            }
        }
        Ok(total as f64)
    }
}
