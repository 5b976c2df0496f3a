//! Structured channel pruning in the NetAdapt style.
//!
//! Channels are tracked as *spaces*: every ungrouped convolution creates a
//! fresh space for its outputs, channel-preserving layers (depthwise conv,
//! resampling, pooling) pass their input space through, additions merge the
//! spaces of their operands and concatenation lays spaces side by side. A
//! [`PruneGroup`] is one merged space together with every weight slice indexed
//! by it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::cost::count_graph;
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetGraph, NodeId};
use crate::math::sqrt_f64;
use crate::schedule::ScheduleSource;
use crate::tensor::{Fill, Tensor, TensorShape};

/// Channel slots that must be pruned together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneGroup {
    /// Name of the first producing layer.
    pub name: String,
    /// Current channel count.
    pub channels: usize,
    /// Ungrouped convolutions whose output channels form this group.
    pub producers: Vec<usize>,
    /// Depthwise layers carrying the group, with the channel offset.
    pub depthwise: Vec<(usize, usize)>,
    /// Convolutions reading the group as input channels, with the offset.
    pub consumers: Vec<(usize, usize)>,
    /// False for the graph output channels (and anything tied to the
    /// graph input).
    pub prunable: bool,
}

impl PruneGroup {
    /// Lowest layer index touched by the group.
    pub fn first_layer(&self) -> usize {
        self.producers.iter().copied().min().unwrap_or(usize::MAX)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn add(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.parent[hi] = lo;
        }
    }
}

/// Output channels of a node as `(space, count)` segments.
type Layout = Vec<(usize, usize)>;

fn passes_channels(kind: &LayerKind) -> bool {
    match kind {
        LayerKind::Conv { spec, .. } => spec.is_depthwise(),
        LayerKind::Unpool | LayerKind::Interp | LayerKind::MaxPool { .. } => true,
        _ => false,
    }
}

/// Partition every convolution output-channel slot into coupled groups.
/// Groups are ordered by their first producing layer.
pub fn compute_prune_groups(graph: &NetGraph) -> Vec<PruneGroup> {
    let mut uf = UnionFind { parent: Vec::new() };
    let mut fixed = Vec::new();
    let input_space = uf.add();
    fixed.push(input_space);
    let mut producer_space = BTreeMap::new();

    // layouts[0] is the graph input, layouts[i + 1] layer i.
    let mut layouts: Vec<Layout> = vec![vec![(input_space, graph.input_shape.c)]];
    let slot = |n: NodeId| match n {
        NodeId::Input => 0,
        NodeId::Layer(i) => i + 1,
    };
    for (i, l) in graph.layers.iter().enumerate() {
        let first = layouts[slot(l.inputs[0])].clone();
        let layout = match &l.kind {
            k if passes_channels(k) => first,
            LayerKind::Conv { spec, .. } | LayerKind::TransposeConv { spec, .. } => {
                let s = uf.add();
                producer_space.insert(i, s);
                vec![(s, spec.out_c)]
            }
            LayerKind::Add { .. } => {
                let second = &layouts[slot(l.inputs[1])];
                let aligned = first.len() == second.len() && first.iter().zip(second).all(|(a, b)| a.1 == b.1);
                if aligned {
                    for (a, b) in first.iter().zip(second) {
                        uf.union(a.0, b.0);
                    }
                } else {
                    fixed.extend(first.iter().chain(second).map(|s| s.0));
                }
                first
            }
            LayerKind::Concat => {
                let mut out = first;
                out.extend_from_slice(&layouts[slot(l.inputs[1])]);
                out
            }
            _ => unreachable!("all layer kinds handled"),
        };
        layouts.push(layout);
    }
    fixed.extend(layouts[graph.output + 1].iter().map(|s| s.0));
    let fixed: Vec<usize> = fixed.into_iter().map(|s| uf.find(s)).collect();

    let mut groups: BTreeMap<usize, PruneGroup> = BTreeMap::new();
    for (&layer, &space) in &producer_space {
        let root = uf.find(space);
        let g = groups.entry(root).or_insert_with(|| PruneGroup {
            name: graph.layers[layer].name.clone(),
            channels: graph.layers[layer].out_shape.c,
            producers: Vec::new(),
            depthwise: Vec::new(),
            consumers: Vec::new(),
            prunable: !fixed.contains(&root),
        });
        g.producers.push(layer);
    }
    for (i, l) in graph.layers.iter().enumerate() {
        let Some(spec) = l.kind.conv_spec() else { continue };
        let mut offset = 0;
        for &(space, count) in &layouts[slot(l.inputs[0])] {
            let root = uf.find(space);
            if let Some(g) = groups.get_mut(&root) {
                if spec.is_depthwise() {
                    g.depthwise.push((i, offset));
                } else {
                    g.consumers.push((i, offset));
                }
            }
            offset += count;
        }
    }
    let mut out: Vec<PruneGroup> = groups.into_values().collect();
    out.sort_by_key(|g| g.first_layer());
    out
}

/// Sum of squares of `x`.
fn sq(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// Per-channel importance: the sum of L2 norms of every weight slice the
/// channel indexes (producer filters, depthwise filters, consumer input
/// slices).
pub fn channel_importance(graph: &NetGraph, group: &PruneGroup) -> Result<Vec<f64>> {
    let mut scores = vec![0.0f64; group.channels];
    let params = |i: usize| {
        graph.layers[i]
            .params
            .as_ref()
            .ok_or_else(|| Error::MissingWeights(graph.layers[i].name.clone()))
    };
    for &p in &group.producers {
        let w = &params(p)?.weight;
        let row = w.len() / group.channels;
        for (j, s) in scores.iter_mut().enumerate() {
            *s += sqrt_f64(sq(&w[j * row..(j + 1) * row]));
        }
    }
    for &(d, offset) in &group.depthwise {
        let w = &params(d)?.weight;
        let kk = w.len() / graph.layers[d].out_shape.c;
        for (j, s) in scores.iter_mut().enumerate() {
            let c = offset + j;
            *s += sqrt_f64(sq(&w[c * kk..(c + 1) * kk]));
        }
    }
    for &(c, offset) in &group.consumers {
        let spec = graph.layers[c].kind.conv_spec().expect("consumer is a convolution");
        let w = &params(c)?.weight;
        let kk = spec.kernel * spec.kernel;
        for (j, s) in scores.iter_mut().enumerate() {
            let ic = offset + j;
            let total: f64 = (0..spec.out_c)
                .map(|oc| {
                    let at = (oc * spec.in_c + ic) * kk;
                    sq(&w[at..at + kk])
                })
                .sum();
            *s += sqrt_f64(total);
        }
    }
    Ok(scores)
}

/// Remove channels `remove` (indices within the group) everywhere the group
/// appears. Weights are sliced when present; shapes are re-inferred and the
/// result validated.
pub fn prune_channels(graph: &NetGraph, group: &PruneGroup, remove: &[usize]) -> Result<NetGraph> {
    let mut remove = remove.to_vec();
    remove.sort_unstable();
    remove.dedup();
    if !group.prunable {
        return Err(Error::InvalidPruneRequest(format!("group `{}` is not prunable", group.name)));
    }
    if remove.iter().any(|&r| r >= group.channels) || remove.len() >= group.channels {
        return Err(Error::InvalidPruneRequest(format!(
            "cannot remove {} of {} channels from `{}`",
            remove.len(),
            group.channels,
            group.name
        )));
    }
    let keep_local: Vec<usize> = (0..group.channels).filter(|c| remove.binary_search(c).is_err()).collect();
    let r = remove.len();
    let mut g = graph.clone();

    for &p in &group.producers {
        let l = &mut g.layers[p];
        let spec = l.kind.conv_spec_mut().expect("producer is a convolution");
        let row = spec.weight_len() / spec.out_c;
        spec.out_c -= r;
        if let Some(params) = &mut l.params {
            params.weight = select_rows(&params.weight, row, &keep_local);
            if let Some(b) = &mut params.bias {
                *b = keep_local.iter().map(|&i| b[i]).collect();
            }
            if let Some(bn) = &mut params.bn {
                *bn = bn.select(&keep_local);
            }
        }
    }

    let mut dw: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(d, offset) in &group.depthwise {
        dw.entry(d).or_default().extend(remove.iter().map(|&j| offset + j));
    }
    for (d, gone) in dw {
        let l = &mut g.layers[d];
        let spec = l.kind.conv_spec_mut().expect("depthwise is a convolution");
        let keep: Vec<usize> = (0..spec.out_c).filter(|c| !gone.contains(c)).collect();
        let kk = spec.kernel * spec.kernel;
        spec.in_c = keep.len();
        spec.out_c = keep.len();
        spec.groups = keep.len();
        if let Some(params) = &mut l.params {
            params.weight = select_rows(&params.weight, kk, &keep);
            if let Some(b) = &mut params.bias {
                *b = keep.iter().map(|&i| b[i]).collect();
            }
            if let Some(bn) = &mut params.bn {
                *bn = bn.select(&keep);
            }
        }
    }

    let mut cons: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(c, offset) in &group.consumers {
        cons.entry(c).or_default().extend(remove.iter().map(|&j| offset + j));
    }
    for (c, gone) in cons {
        let l = &mut g.layers[c];
        let spec = l.kind.conv_spec_mut().expect("consumer is a convolution");
        let keep: Vec<usize> = (0..spec.in_c).filter(|i| !gone.contains(i)).collect();
        let kk = spec.kernel * spec.kernel;
        let (old_in, out_c) = (spec.in_c, spec.out_c);
        spec.in_c = keep.len();
        if let Some(params) = &mut l.params {
            let mut w = Vec::with_capacity(out_c * keep.len() * kk);
            for oc in 0..out_c {
                for &ic in &keep {
                    let at = (oc * old_in + ic) * kk;
                    w.extend_from_slice(&params.weight[at..at + kk]);
                }
            }
            params.weight = w;
        }
    }

    g.reinfer_shapes()?;
    g.validate().map_err(Error::InvalidGraph)?;
    Ok(g)
}

fn select_rows(data: &[f32], row: usize, keep: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(keep.len() * row);
    for &k in keep {
        out.extend_from_slice(&data[k * row..(k + 1) * row]);
    }
    out
}

/// Root mean squared difference of two equally shaped tensors.
pub fn output_rmse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    Ok(sqrt_f64(sum / a.data().len() as f64))
}

/// Mean output RMSE of `pruned` against precomputed reference outputs.
pub fn fidelity_against(
    pruned: &NetGraph,
    reference_outputs: &[Tensor],
    calib: &[Tensor],
    schedules: &dyn ScheduleSource,
) -> Result<f64> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut total = 0.0;
    for (x, r) in calib.iter().zip(reference_outputs) {
        total += output_rmse(&pruned.forward(x, schedules)?, r)?;
    }
    Ok(total / calib.len() as f64)
}

/// Mean output RMSE between two graphs over a calibration set; lower is
/// better.
pub fn evaluate_fidelity(
    pruned: &NetGraph,
    reference: &NetGraph,
    calib: &[Tensor],
    schedules: &dyn ScheduleSource,
) -> Result<f64> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let refs = calib
        .iter()
        .map(|x| reference.forward(x, schedules))
        .collect::<Result<Vec<_>>>()?;
    fidelity_against(pruned, &refs, calib, schedules)
}

/// Seeded calibration inputs with values in `[0, 1)`.
pub fn calibration_set(shape: TensorShape, count: usize, seed: u64) -> Vec<Tensor> {
    (0..count as u64)
        .map(|i| {
            Tensor::create(
                shape,
                Fill::Uniform {
                    seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i),
                    low: 0.0,
                    high: 1.0,
                },
            )
        })
        .collect()
}

/// Resource metric driving pruning.
pub trait ResourceModel {
    fn name(&self) -> &str;
    /// Resource of `graph`; only layer specs and shapes are consulted.
    fn measure(&self, graph: &NetGraph) -> Result<f64>;
}

/// Analytic multiply-accumulate count.
#[derive(Debug, Clone, Copy, Default)]
pub struct MacsResource;

impl ResourceModel for MacsResource {
    fn name(&self) -> &str {
        "macs"
    }

    fn measure(&self, graph: &NetGraph) -> Result<f64> {
        Ok(count_graph(graph).total_macs() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Stop once the resource is at most this fraction of the initial value.
    pub target_fraction: f64,
    /// Per-iteration reduction as a fraction of the initial value.
    pub step_fraction: f64,
    /// Minimum channels left in any group.
    pub floor: usize,
    /// Remaining channel counts are kept multiples of this.
    pub multiple: usize,
    /// Recorded in the trajectory; also seeds generated calibration sets.
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.5,
            step_fraction: 0.025,
            floor: 8,
            multiple: 4,
            seed: 0,
        }
    }
}

impl PruneConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidPruneRequest(m.into()));
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return bad("target fraction must lie strictly between 0 and 1");
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return bad("step fraction must lie in (0, 1]");
        }
        if self.floor == 0 || self.multiple == 0 {
            return bad("channel floor and multiple must be positive");
        }
        Ok(())
    }
}

/// One accepted proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub iteration: usize,
    pub group: String,
    pub channels_before: usize,
    pub channels_after: usize,
    pub removed: Vec<usize>,
    pub resource: f64,
    pub fidelity: f64,
    pub macs: u64,
    pub weights: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrajectory {
    pub resource: String,
    pub seed: u64,
    pub initial_resource: f64,
    pub target_resource: f64,
    pub initial_macs: u64,
    pub initial_weights: u64,
    pub steps: Vec<PruneStep>,
    pub graph: NetGraph,
}

impl PruneTrajectory {
    pub fn final_resource(&self) -> f64 {
        self.steps.last().map_or(self.initial_resource, |s| s.resource)
    }

    /// Line-oriented log: a header comment then one line per iteration.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# resource={} seed={} initial={} target={} macs={} weights={}",
            self.resource, self.seed, self.initial_resource, self.target_resource, self.initial_macs, self.initial_weights
        );
        let _ = writeln!(s, "# iteration\tgroup\tchannels\tremoved\tresource\tfidelity\tmacs\tweights");
        for st in &self.steps {
            let removed: Vec<String> = st.removed.iter().map(|r| format!("{r}")).collect();
            let _ = writeln!(
                s,
                "{}\t{}\t{}->{}\t{}\t{}\t{:.6e}\t{}\t{}",
                st.iteration,
                st.group,
                st.channels_before,
                st.channels_after,
                removed.join(","),
                st.resource,
                st.fidelity,
                st.macs,
                st.weights
            );
        }
        s
    }
}

/// Graph with the same structure and no parameters, for cheap resource
/// queries.
fn skeleton(graph: &NetGraph) -> NetGraph {
    let mut g = graph.clone();
    for l in &mut g.layers {
        l.params = None;
    }
    g
}

struct Proposal {
    group: PruneGroup,
    removed: Vec<usize>,
    resource: f64,
}

/// Lowest-importance channels first; ties by index.
fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Fidelity of every candidate. Candidates differ from `current` only from
/// their group's first producer on, so each calibration input runs the shared
/// prefix once and every candidate resumes from there.
fn proposal_fidelities(
    current: &NetGraph,
    candidates: &[NetGraph],
    proposals: &[Proposal],
    reference: &[Tensor],
    calib: &[Tensor],
    schedules: &dyn ScheduleSource,
) -> Result<Vec<f64>> {
    let starts: Vec<usize> = proposals.iter().map(|p| p.group.first_layer()).collect();
    let mut sums = vec![0.0f64; candidates.len()];
    for (x, r) in calib.iter().zip(reference) {
        let (_, frontiers) = current.capture_frontiers(x, schedules, &starts)?;
        for ((sum, candidate), frontier) in sums.iter_mut().zip(candidates).zip(&frontiers) {
            *sum += output_rmse(&candidate.resume(x, frontier, schedules)?, r)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / calib.len() as f64).collect())
}

/// Iteratively remove channels until the resource falls to
/// `target_fraction` of its initial value. Each iteration proposes, for every
/// prunable group, the smallest removal meeting the iteration budget and keeps
/// the proposal whose outputs stay closest to the unpruned network.
pub fn netadapt_prune(
    graph: &NetGraph,
    resource: &dyn ResourceModel,
    config: &PruneConfig,
    calib: &[Tensor],
    schedules: &dyn ScheduleSource,
) -> Result<PruneTrajectory> {
    config.validate()?;
    graph.validate().map_err(Error::InvalidGraph)?;
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !graph.has_weights() {
        return Err(Error::InvalidPruneRequest("pruning needs weights loaded".into()));
    }
    let reference: Vec<Tensor> = calib
        .iter()
        .map(|x| graph.forward(x, schedules))
        .collect::<Result<_>>()?;
    let initial = resource.measure(graph)?;
    let target = config.target_fraction * initial;
    let step = config.step_fraction * initial;
    let initial_cost = count_graph(graph).total();

    let mut current = graph.clone();
    let mut current_resource = initial;
    let mut steps = Vec::new();
    while current_resource > target {
        let budget = current_resource - step;
        let shell = skeleton(&current);
        let mut proposals = Vec::new();
        let mut stuck = Vec::new();
        for group in compute_prune_groups(&current).into_iter().filter(|g| g.prunable) {
            let order = removal_order(&channel_importance(&current, &group)?);
            let n = group.channels;
            let mut r = match n % config.multiple {
                0 => config.multiple,
                m => m,
            };
            let mut found = None;
            while r < n && n - r >= config.floor {
                let trial = prune_channels(&shell, &group, &order[..r])?;
                let res = resource.measure(&trial)?;
                if res <= budget {
                    found = Some(res);
                    break;
                }
                r += config.multiple;
            }
            match found {
                Some(res) => {
                    let mut removed = order[..r].to_vec();
                    removed.sort_unstable();
                    proposals.push(Proposal {
                        group,
                        removed,
                        resource: res,
                    });
                }
                None => stuck.push(format!("{} ({} channels, floor {})", group.name, n, config.floor)),
            }
        }
        if proposals.is_empty() {
            return Err(Error::PruneTargetUnreachable(stuck));
        }

        let candidates = proposals
            .iter()
            .map(|p| prune_channels(&current, &p.group, &p.removed))
            .collect::<Result<Vec<_>>>()?;
        let fidelities = proposal_fidelities(&current, &candidates, &proposals, &reference, calib, schedules)?;

        let mut best: Option<(f64, Proposal, NetGraph)> = None;
        for ((p, candidate), fid) in proposals.into_iter().zip(candidates).zip(fidelities) {
            let better = match &best {
                None => true,
                Some((bf, bp, _)) => {
                    fid.total_cmp(bf)
                        .then(bp.resource.total_cmp(&p.resource))
                        .then(p.group.first_layer().cmp(&bp.group.first_layer()))
                        .is_lt()
                }
            };
            if better {
                best = Some((fid, p, candidate));
            }
        }
        let (fidelity, p, next) = best.expect("at least one proposal");
        let cost = count_graph(&next).total();
        steps.push(PruneStep {
            iteration: steps.len() + 1,
            group: p.group.name.clone(),
            channels_before: p.group.channels,
            channels_after: p.group.channels - p.removed.len(),
            removed: p.removed,
            resource: p.resource,
            fidelity,
            macs: cost.macs,
            weights: cost.weights,
        });
        current = next;
        current_resource = p.resource;
    }

    Ok(PruneTrajectory {
        resource: resource.name().into(),
        seed: config.seed,
        initial_resource: initial,
        target_resource: target,
        initial_macs: initial_cost.macs,
        initial_weights: initial_cost.weights,
        steps,
        graph: current,
    })
}
