//! Kernel schedules, operator signatures and the schedule cache.
//!
//! A [`Schedule`] picks the loop structure of a convolution kernel. It never
//! changes the per-element accumulation order, so any schedule is a valid
//! choice for any layer and the cache only has to remember which one was
//! fastest on a given host.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::ConvSpec;

/// Output-channel tile sizes in the search space.
pub const CHANNEL_TILES: [usize; 3] = [8, 16, 32];

/// Target number of output pixels per row tile.
const PIXELS_PER_TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Schedule {
    /// Output rows per tile; `None` for the untiled kernels.
    pub row_tile: Option<usize>,
    /// Output channels per tile.
    pub channel_tile: Option<usize>,
    pub vectorize: bool,
}

impl Schedule {
    /// The scalar reference kernel.
    pub const fn naive() -> Self {
        Self {
            row_tile: None,
            channel_tile: None,
            vectorize: false,
        }
    }

    /// Untiled, row-at-a-time kernel with a vectorizable inner loop.
    pub const fn naive_vectorized() -> Self {
        Self {
            row_tile: None,
            channel_tile: None,
            vectorize: true,
        }
    }

    pub const fn tiled(row_tile: usize, channel_tile: usize, vectorize: bool) -> Self {
        Self {
            row_tile: Some(row_tile),
            channel_tile: Some(channel_tile),
            vectorize,
        }
    }

    pub fn is_naive(&self) -> bool {
        *self == Self::naive()
    }

    pub fn id(&self) -> String {
        match (self.row_tile, self.channel_tile) {
            (Some(r), Some(c)) => {
                format!("tile-r{r}-c{c}-{}", if self.vectorize { "vec" } else { "novec" })
            }
            _ if self.vectorize => "naive-vec".into(),
            _ => "naive".into(),
        }
    }

    /// Whether the tile sizes fit a layer with the given output extents.
    pub fn is_feasible(&self, out_c: usize, out_h: usize) -> bool {
        self.row_tile.is_none_or(|r| r >= 1 && r <= out_h)
            && self.channel_tile.is_none_or(|c| c >= 1 && c <= out_c)
            && self.row_tile.is_some() == self.channel_tile.is_some()
    }

    /// This schedule if it fits the layer, the reference kernel otherwise.
    pub fn feasible_or_naive(&self, spec: &ConvSpec, out_h: usize, _out_w: usize) -> Schedule {
        if self.is_feasible(spec.out_c, out_h) {
            *self
        } else {
            Schedule::naive()
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::NotApplicable(format!("unknown schedule id `{s}`"));
        match s {
            "naive" => return Ok(Schedule::naive()),
            "naive-vec" => return Ok(Schedule::naive_vectorized()),
            _ => {}
        }
        let rest = s.strip_prefix("tile-r").ok_or_else(bad)?;
        let (r, rest) = rest.split_once("-c").ok_or_else(bad)?;
        let (c, v) = rest.split_once('-').ok_or_else(bad)?;
        let vectorize = match v {
            "vec" => true,
            "novec" => false,
            _ => return Err(bad()),
        };
        let r: usize = r.parse().map_err(|_| bad())?;
        let c: usize = c.parse().map_err(|_| bad())?;
        if r == 0 || c == 0 {
            return Err(bad());
        }
        Ok(Schedule::tiled(r, c, vectorize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv,
    Depthwise,
    Transposed,
}

/// Canonical identity of a convolution instance: geometry plus input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpSignature {
    pub kind: OpKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
}

impl OpSignature {
    pub fn conv(spec: &ConvSpec, h: usize, w: usize) -> Self {
        let kind = if spec.is_depthwise() { OpKind::Depthwise } else { OpKind::Conv };
        Self::with_kind(kind, spec, h, w)
    }

    pub fn transposed(spec: &ConvSpec, h: usize, w: usize) -> Self {
        Self::with_kind(OpKind::Transposed, spec, h, w)
    }

    fn with_kind(kind: OpKind, spec: &ConvSpec, h: usize, w: usize) -> Self {
        Self {
            kind,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            output_padding: spec.output_padding,
            in_c: spec.in_c,
            out_c: spec.out_c,
            h,
            w,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        match self.kind {
            OpKind::Conv => ConvSpec::standard(self.in_c, self.out_c, self.kernel, self.stride, self.padding),
            OpKind::Depthwise => ConvSpec::depthwise(self.in_c, self.kernel, self.stride, self.padding),
            OpKind::Transposed => ConvSpec::transposed(
                self.in_c,
                self.out_c,
                self.kernel,
                self.stride,
                self.padding,
                self.output_padding,
            ),
        }
    }

    /// Output extents of the kernel the schedule drives. For transposed
    /// convolutions that is the dense convolution after zero insertion.
    pub fn kernel_output(&self) -> Result<(usize, usize, usize)> {
        let spec = self.spec();
        let (oh, ow) = match self.kind {
            OpKind::Transposed => spec.transposed_output_hw(self.h, self.w)?,
            _ => spec.output_hw(self.h, self.w)?,
        };
        Ok((self.out_c, oh, ow))
    }

    /// Multiply-accumulates of one execution.
    pub fn macs(&self) -> u64 {
        let (oc, oh, ow) = self.kernel_output().unwrap_or((0, 0, 0));
        let spec = self.spec();
        (oc * oh * ow * spec.in_per_group() * spec.kernel * spec.kernel) as u64
    }
}

impl fmt::Display for OpSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        match self.kind {
            OpKind::Depthwise => write!(f, "dw k{k} s{s} p{p} c{} h{} w{}", self.in_c, self.h, self.w),
            OpKind::Conv => write!(
                f,
                "conv k{k} s{s} p{p} i{} o{} h{} w{}",
                self.in_c, self.out_c, self.h, self.w
            ),
            OpKind::Transposed => write!(
                f,
                "tconv k{k} s{s} p{p} op{} i{} o{} h{} w{}",
                self.output_padding, self.in_c, self.out_c, self.h, self.w
            ),
        }
    }
}

impl FromStr for OpSignature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::NotApplicable(format!("malformed op signature `{s}`"));
        let mut parts = s.split_whitespace();
        let kind = match parts.next() {
            Some("conv") => OpKind::Conv,
            Some("dw") => OpKind::Depthwise,
            Some("tconv") => OpKind::Transposed,
            _ => return Err(bad()),
        };
        let mut fields = BTreeMap::new();
        for part in parts {
            let split = part.find(|c: char| c.is_ascii_digit()).ok_or_else(bad)?;
            let (key, value) = part.split_at(split);
            let value: usize = value.parse().map_err(|_| bad())?;
            if fields.insert(key, value).is_some() {
                return Err(bad());
            }
        }
        let mut take = |key: &str| fields.remove(key).ok_or_else(bad);
        let (kernel, stride, padding) = (take("k")?, take("s")?, take("p")?);
        let (output_padding, in_c, out_c) = match kind {
            OpKind::Depthwise => {
                let c = take("c")?;
                (0, c, c)
            }
            OpKind::Conv => (0, take("i")?, take("o")?),
            OpKind::Transposed => (take("op")?, take("i")?, take("o")?),
        };
        let (h, w) = (take("h")?, take("w")?);
        if !fields.is_empty() {
            return Err(bad());
        }
        let sig = Self {
            kind,
            kernel,
            stride,
            padding,
            output_padding,
            in_c,
            out_c,
            h,
            w,
        };
        sig.spec().validate()?;
        sig.kernel_output()?;
        Ok(sig)
    }
}

/// Row tile for a layer whose kernel writes `out_h × out_w` planes.
pub fn row_tile_for(out_h: usize, out_w: usize) -> usize {
    PIXELS_PER_TILE.div_ceil(out_w.max(1)).clamp(1, out_h.max(1))
}

/// The candidate set for a signature: the reference kernel, its vectorized
/// variant, and row-tiled kernels for every channel tile that fits, each
/// with vectorization on and off.
pub fn enumerate_schedules(sig: &OpSignature) -> Vec<Schedule> {
    let mut out = vec![Schedule::naive(), Schedule::naive_vectorized()];
    let Ok((oc, oh, ow)) = sig.kernel_output() else {
        return out;
    };
    let rt = row_tile_for(oh, ow);
    for ct in CHANNEL_TILES {
        if ct > oc {
            continue;
        }
        for vectorize in [true, false] {
            out.push(Schedule::tiled(rt, ct, vectorize));
        }
    }
    out
}

/// Supplies a schedule for each convolution the graph executes.
pub trait ScheduleSource: Sync {
    fn schedule_for(&self, sig: &OpSignature) -> Schedule;
}

/// Every layer uses the same schedule (falling back to the reference
/// kernel where its tiles do not fit).
impl ScheduleSource for Schedule {
    fn schedule_for(&self, _sig: &OpSignature) -> Schedule {
        *self
    }
}

/// A fixed rule that is reasonable on most CPUs without measuring.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultSchedules;

impl ScheduleSource for DefaultSchedules {
    fn schedule_for(&self, sig: &OpSignature) -> Schedule {
        let Ok((oc, oh, ow)) = sig.kernel_output() else {
            return Schedule::naive();
        };
        let ct = if sig.kind == OpKind::Depthwise { 8 } else { 16 };
        if ct > oc {
            return Schedule::naive_vectorized();
        }
        Schedule::tiled(row_tile_for(oh, ow), ct, true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub schedule: Schedule,
    pub median_ns: u64,
    pub samples: u32,
    pub host: String,
}

/// Fastest measured schedule per signature, tagged by host.
///
/// Lookups only consult entries recorded on the cache's own host and fall
/// back to the reference kernel for anything missing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScheduleCache {
    host: String,
    entries: BTreeMap<(OpSignature, String), CacheEntry>,
}

impl ScheduleCache {
    pub fn new(host: impl Into<String>) -> Self {
        Self {
            host: host.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn insert(&mut self, sig: OpSignature, entry: CacheEntry) -> Result<()> {
        let (oc, oh, _) = sig.kernel_output()?;
        if !enumerate_schedules(&sig).contains(&entry.schedule) || !entry.schedule.is_feasible(oc, oh) {
            return Err(Error::NotApplicable(format!(
                "schedule {} is not a candidate for `{sig}`",
                entry.schedule
            )));
        }
        if entry.median_ns == 0 {
            return Err(Error::NotApplicable(format!("non-positive latency for `{sig}`")));
        }
        self.entries.insert((sig, entry.host.clone()), entry);
        Ok(())
    }

    pub fn get(&self, sig: &OpSignature) -> Option<&CacheEntry> {
        self.entries.get(&(*sig, self.host.clone()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries for this cache's host.
    pub fn iter(&self) -> impl Iterator<Item = (&OpSignature, &CacheEntry)> {
        self.entries
            .iter()
            .filter(|((_, host), _)| *host == self.host)
            .map(|((sig, _), e)| (sig, e))
    }

    /// Tab-separated text: signature, schedule id, median ns, samples, host.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# signature\tschedule\tmedian_ns\tsamples\thost\n");
        for ((sig, _), e) in &self.entries {
            s.push_str(&format!(
                "{sig}\t{}\t{}\t{}\t{}\n",
                e.schedule, e.median_ns, e.samples, e.host
            ));
        }
        s
    }

    /// Parse the text form. Entries from other hosts are kept but ignored
    /// by lookups.
    pub fn from_text(host: impl Into<String>, text: &str) -> Result<Self> {
        let mut cache = Self::new(host);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::NotApplicable(format!("cache line {}: {what}", i + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let sig: OpSignature = cols[0].parse()?;
            let entry = CacheEntry {
                schedule: cols[1].parse()?,
                median_ns: cols[2].parse().map_err(|_| bad("median is not an integer"))?,
                samples: cols[3].parse().map_err(|_| bad("sample count is not an integer"))?,
                host: cols[4].to_string(),
            };
            cache.insert(sig, entry)?;
        }
        Ok(cache)
    }
}

impl ScheduleSource for ScheduleCache {
    fn schedule_for(&self, sig: &OpSignature) -> Schedule {
        self.get(sig).map(|e| e.schedule).unwrap_or(Schedule::naive())
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(values: &[u64]) -> u64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_unstable();
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2
    }
}
