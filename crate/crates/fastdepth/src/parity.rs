//! Reference activation archives and per-layer parity checks.
//!
//! An archive is a directory holding `index.tsv` and one raw little-endian
//! f32 blob per tensor. Index lines are `name\tfile\tn,c,h,w`; lines starting
//! with `#` are comments. The entry named [`PROBE_INPUT`] is the network
//! input, every other entry is the output of the graph layer of that name.

use std::collections::BTreeMap;
use std::path::Path;

use fastdepth_core::graph::NetGraph;
use fastdepth_core::schedule::ScheduleSource;
use fastdepth_core::{Tensor, TensorShape};

use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.tsv";
pub const PROBE_INPUT: &str = "input";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationArchive {
    pub input: Option<Tensor>,
    /// Layer outputs by layer name.
    pub layers: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParity {
    pub name: String,
    pub max_abs_diff: f32,
}

fn blob_name(name: &str) -> String {
    format!("{name}.f32")
}

fn parse_dims(s: &str) -> Option<TensorShape> {
    let d: Vec<usize> = s.split(',').map(|v| v.trim().parse().ok()).collect::<Option<_>>()?;
    match d[..] {
        [n, c, h, w] => TensorShape::new(n, c, h, w).ok(),
        _ => None,
    }
}

impl ActivationArchive {
    /// Run `graph` on `input` and keep the outputs of the named layers.
    pub fn capture(graph: &NetGraph, input: &Tensor, layers: &[&str], schedules: &dyn ScheduleSource) -> Result<Self> {
        let mut wanted = BTreeMap::new();
        for name in layers {
            let idx = graph
                .find(name)
                .ok_or_else(|| Error::Usage(format!("no layer named `{name}`")))?;
            wanted.insert(idx, name.to_string());
        }
        let mut out = BTreeMap::new();
        graph.forward_observe(input, schedules, |i, t| {
            if let Some(name) = wanted.get(&i) {
                out.insert(name.clone(), t.clone());
            }
        })?;
        Ok(Self {
            input: Some(input.clone()),
            layers: out,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = String::from("# name\tfile\tn,c,h,w\n");
        let entries = self.input.iter().map(|t| (PROBE_INPUT, t)).chain(self.layers.iter().map(|(n, t)| (n.as_str(), t)));
        for (name, t) in entries {
            let file = blob_name(name);
            let [n, c, h, w] = t.shape().dims();
            index.push_str(&format!("{name}\t{file}\t{n},{c},{h},{w}\n"));
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, index).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let index = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut archive = Self::default();
        for (lineno, line) in index.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |m: String| Error::format(&index_path, format!("line {}: {m}", lineno + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            let [name, file, dims] = cols[..] else {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", cols.len())));
            };
            if file.contains('/') || file.contains('\\') || file.starts_with("..") {
                return Err(bad(format!("blob `{file}` is outside the archive")));
            }
            let shape = parse_dims(dims).ok_or_else(|| bad(format!("bad shape `{dims}`")))?;
            let path = dir.join(file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != 4 * shape.numel() {
                return Err(Error::format(
                    &path,
                    format!("{} bytes, expected {} for {shape}", bytes.len(), 4 * shape.numel()),
                ));
            }
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data)?;
            let dup = if name == PROBE_INPUT {
                archive.input.replace(t).is_some()
            } else {
                archive.layers.insert(name.to_string(), t).is_some()
            };
            if dup {
                return Err(bad(format!("duplicate entry `{name}`")));
            }
        }
        Ok(archive)
    }

    /// Forward the probe input through `graph` and compare every archived
    /// layer output. Results follow graph layer order.
    pub fn compare(&self, graph: &NetGraph, schedules: &dyn ScheduleSource) -> Result<Vec<LayerParity>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("archive has no `{PROBE_INPUT}` entry")))?;
        let mut by_index = BTreeMap::new();
        for (name, t) in &self.layers {
            let idx = graph
                .find(name)
                .ok_or_else(|| Error::Usage(format!("archive layer `{name}` is not in the graph")))?;
            if graph.layers[idx].out_shape != t.shape() {
                return Err(Error::Usage(format!(
                    "archive layer `{name}` is {}, graph produces {}",
                    t.shape(),
                    graph.layers[idx].out_shape
                )));
            }
            by_index.insert(idx, (name, t));
        }
        let mut report = Vec::new();
        graph.forward_observe(input, schedules, |i, out| {
            if let Some((name, reference)) = by_index.get(&i) {
                report.push(LayerParity {
                    name: name.to_string(),
                    max_abs_diff: deviation(out, reference),
                });
            }
        })?;
        Ok(report)
    }
}

/// Largest elementwise deviation of two same-shape tensors. Any non-finite
/// value on either side gives infinity.
fn deviation(a: &Tensor, b: &Tensor) -> f32 {
    a.data().iter().zip(b.data()).fold(0f32, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_finite() { m.max(d) } else { f32::INFINITY }
    })
}
