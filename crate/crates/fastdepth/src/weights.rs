//! Flat little-endian weights container.
//!
//! Layout: magic `FDW1`, version (u32), entry count (u32), then per entry the
//! name length (u32), UTF-8 name, dtype code (u32, 0 = f32), rank (u32), one
//! u32 per dimension and the raw f32 payload. No padding anywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use fastdepth_core::graph::NetGraph;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FDW1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightsFile {
    pub entries: Vec<WeightsEntry>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!(
                "truncated {what} at byte {}: need {n} bytes, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl WeightsFile {
    /// Every materialized parameter of `graph`, in slot order.
    pub fn from_graph(graph: &NetGraph) -> Result<Self> {
        let entries = graph
            .named_params()?
            .into_iter()
            .map(|(name, dims, data)| WeightsEntry {
                name,
                dims,
                data: data.to_vec(),
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&WeightsEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.entries.iter().map(|e| 16 + e.name.len() + 4 * (e.dims.len() + e.data.len())).sum();
        let mut out = Vec::with_capacity(12 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&DTYPE_F32.to_le_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse a complete file image. Errors carry a description of the first
    /// problem found.
    pub fn parse(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4, "magic")? != MAGIC {
            return Err("bad magic (not a FDW1 weights file)".into());
        }
        let version = c.u32("version")?;
        if version != VERSION {
            return Err(format!("unsupported version {version} (expected {VERSION})"));
        }
        let count = c.u32("entry count")?;
        let mut entries = Vec::new();
        let mut names = BTreeSet::new();
        for i in 0..count {
            let len = c.u32("name length")? as usize;
            let name = std::str::from_utf8(c.take(len, "name")?)
                .map_err(|_| format!("entry {i}: name is not UTF-8"))?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(format!("duplicate entry `{name}`"));
            }
            let dtype = c.u32("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(format!("`{name}`: unsupported dtype code {dtype}"));
            }
            let rank = c.u32("rank")? as usize;
            let dims = (0..rank)
                .map(|_| c.u32("dims").map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| format!("`{name}`: dimensions overflow"))?;
            let raw = c
                .take(numel.checked_mul(4).ok_or_else(|| format!("`{name}`: payload too large"))?, "payload")
                .map_err(|e| format!("`{name}`: {e}"))?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            entries.push(WeightsEntry { name, dims, data });
        }
        if c.pos != bytes.len() {
            return Err(format!("{} trailing bytes after the last entry", bytes.len() - c.pos));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|m| Error::format(path, m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Install the entries as `graph`'s parameters. Every slot must be present
    /// with matching dimensions; in strict mode unused entries are an error
    /// too. The graph is untouched on error.
    pub fn apply(&self, graph: &mut NetGraph, strict: bool) -> Result<()> {
        let by_name: BTreeMap<&str, &WeightsEntry> = self.entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let slots = graph.param_slots();
        let mut issues = Vec::new();
        for (name, dims) in &slots {
            match by_name.get(name.as_str()) {
                None => issues.push(format!("missing entry `{name}`")),
                Some(e) if &e.dims != dims => {
                    issues.push(format!("`{name}` has dims {:?}, graph expects {:?}", e.dims, dims))
                }
                Some(_) => {}
            }
        }
        if strict {
            let wanted: BTreeSet<&str> = slots.iter().map(|(n, _)| n.as_str()).collect();
            for e in &self.entries {
                if !wanted.contains(e.name.as_str()) {
                    issues.push(format!("orphan entry `{}`", e.name));
                }
            }
        }
        if !issues.is_empty() {
            return Err(Error::WeightsMismatch(issues));
        }
        graph.set_params_with(|name, _| Ok(by_name[name].data.clone()))?;
        Ok(())
    }

    /// Copy of `graph` whose convolution channel counts follow the weight
    /// dimensions in this file, for loading pruned models.
    pub fn adapt_channels(&self, graph: &NetGraph) -> Result<NetGraph> {
        let mut g = graph.clone();
        for l in &mut g.layers {
            let Some(spec) = l.kind.conv_spec_mut() else { continue };
            let Some(e) = self.get(&format!("{}.weight", l.name)) else { continue };
            if e.dims.len() != 4 {
                return Err(Error::WeightsMismatch(vec![format!("`{}` is not rank 4", e.name)]));
            }
            if spec.is_depthwise() {
                if e.dims[1] != 1 {
                    return Err(Error::WeightsMismatch(vec![format!(
                        "`{}` should be depthwise but has {} input channels per group",
                        e.name, e.dims[1]
                    )]));
                }
                spec.in_c = e.dims[0];
                spec.out_c = e.dims[0];
                spec.groups = e.dims[0];
            } else {
                spec.out_c = e.dims[0];
                spec.in_c = e.dims[1];
            }
            l.params = None;
        }
        g.reinfer_shapes()?;
        g.validate().map_err(fastdepth_core::Error::InvalidGraph)?;
        Ok(g)
    }
}

/// Write every parameter of `graph` to `path`.
pub fn weights_save(graph: &NetGraph, path: &Path) -> Result<()> {
    WeightsFile::from_graph(graph)?.write(path)
}

/// Load `path` into `graph`; see [`WeightsFile::apply`].
pub fn weights_load(path: &Path, graph: &mut NetGraph, strict: bool) -> Result<()> {
    WeightsFile::read(path)?.apply(graph, strict)
}
