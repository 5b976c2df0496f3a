//! Layer graphs: construction, validation, parameters and execution.

mod zoo;

pub use zoo::{
    assemble_network, build_decoder, build_encoder, DecoderKind, EncoderKind, SkipMode, Upsample,
    DECODER_CHANNELS,
};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::sqrt_f32;
use crate::ops::{self, BatchNorm, ConvParams, ConvSpec};
use crate::schedule::{OpSignature, ScheduleSource};
use crate::tensor::{Tensor, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Encoder,
    Decoder,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
        })
    }
}

/// Producer of a layer input: the graph input or an earlier layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Input,
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Convolution with optional fused batch norm, bias and ReLU.
    Conv {
        spec: ConvSpec,
        bn: bool,
        bias: bool,
        relu: bool,
    },
    TransposeConv {
        spec: ConvSpec,
        bn: bool,
        bias: bool,
        relu: bool,
    },
    /// 2×2 zero-insertion unpooling.
    Unpool,
    /// Nearest-neighbour ×2 interpolation.
    Interp,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Add {
        relu: bool,
    },
    Concat,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { spec, .. } if spec.is_depthwise() => "dwconv",
            LayerKind::Conv { spec, .. } if spec.is_pointwise() => "pwconv",
            LayerKind::Conv { .. } => "conv",
            LayerKind::TransposeConv { .. } => "tconv",
            LayerKind::Unpool => "unpool",
            LayerKind::Interp => "interp",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Add { .. } => "add",
            LayerKind::Concat => "concat",
        }
    }

    pub fn conv_spec(&self) -> Option<&ConvSpec> {
        match self {
            LayerKind::Conv { spec, .. } | LayerKind::TransposeConv { spec, .. } => Some(spec),
            _ => None,
        }
    }

    pub fn conv_spec_mut(&mut self) -> Option<&mut ConvSpec> {
        match self {
            LayerKind::Conv { spec, .. } | LayerKind::TransposeConv { spec, .. } => Some(spec),
            _ => None,
        }
    }

    fn arity(&self) -> usize {
        match self {
            LayerKind::Add { .. } | LayerKind::Concat => 2,
            _ => 1,
        }
    }

    /// `(bn, bias)` flags of parameterized layers.
    fn param_flags(&self) -> Option<(bool, bool)> {
        match *self {
            LayerKind::Conv { bn, bias, .. } | LayerKind::TransposeConv { bn, bias, .. } => Some((bn, bias)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub role: Role,
    pub inputs: Vec<NodeId>,
    pub out_shape: TensorShape,
    pub params: Option<ConvParams>,
}

/// An encoder feature map merged into the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipEdge {
    pub tap: usize,
    pub merge: usize,
}

/// Topologically ordered layer graph with a single input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGraph {
    pub input_shape: TensorShape,
    pub layers: Vec<Layer>,
    pub output: usize,
    pub skips: Vec<SkipEdge>,
    /// Encoder layers producing the last feature map at each resolution.
    pub taps: Vec<usize>,
}

/// Output shape of `kind` applied to `inputs`.
pub fn infer_shape(kind: &LayerKind, inputs: &[TensorShape]) -> core::result::Result<TensorShape, String> {
    if inputs.len() != kind.arity() {
        return Err(format!("expects {} inputs, got {}", kind.arity(), inputs.len()));
    }
    let x = inputs[0];
    let shape = |n, c, h, w| TensorShape::new(n, c, h, w).map_err(|e| e.to_string());
    match kind {
        LayerKind::Conv { spec, .. } | LayerKind::TransposeConv { spec, .. } => {
            spec.validate().map_err(|e| e.to_string())?;
            if x.c != spec.in_c {
                return Err(format!("channel mismatch: input has {} channels, layer expects {}", x.c, spec.in_c));
            }
            let (h, w) = if matches!(kind, LayerKind::Conv { .. }) {
                spec.output_hw(x.h, x.w)
            } else {
                spec.transposed_output_hw(x.h, x.w)
            }
            .map_err(|e| e.to_string())?;
            shape(x.n, spec.out_c, h, w)
        }
        LayerKind::Unpool | LayerKind::Interp => shape(x.n, x.c, 2 * x.h, 2 * x.w),
        LayerKind::MaxPool { kernel, stride, padding } => {
            if *stride == 0 || x.h + 2 * padding < *kernel || x.w + 2 * padding < *kernel {
                return Err("pooling window larger than input".into());
            }
            shape(
                x.n,
                x.c,
                (x.h + 2 * padding - kernel) / stride + 1,
                (x.w + 2 * padding - kernel) / stride + 1,
            )
        }
        LayerKind::Add { .. } => {
            let y = inputs[1];
            if x.c != y.c {
                return Err(format!("channel mismatch: {x} + {y}"));
            }
            if x != y {
                return Err(format!("shape mismatch: {x} + {y}"));
            }
            Ok(x)
        }
        LayerKind::Concat => {
            let y = inputs[1];
            if (x.n, x.h, x.w) != (y.n, y.h, y.w) {
                return Err(format!("spatial mismatch: {x} ++ {y}"));
            }
            shape(x.n, x.c + y.c, x.h, x.w)
        }
    }
}

/// Incremental graph construction with shape inference at every step.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: NetGraph,
}

impl GraphBuilder {
    pub fn new(input_shape: TensorShape) -> Self {
        Self {
            graph: NetGraph {
                input_shape,
                layers: Vec::new(),
                output: 0,
                skips: Vec::new(),
                taps: Vec::new(),
            },
        }
    }

    /// Continue building on top of an existing graph.
    pub fn extend(graph: NetGraph) -> Self {
        Self { graph }
    }

    pub fn shape(&self, node: NodeId) -> TensorShape {
        self.graph.node_shape(node)
    }

    pub fn graph(&self) -> &NetGraph {
        &self.graph
    }

    pub fn push(&mut self, name: impl Into<String>, role: Role, kind: LayerKind, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        let shapes: Vec<_> = inputs.iter().map(|&n| self.shape(n)).collect();
        let out_shape = infer_shape(&kind, &shapes).map_err(|e| Error::InvalidGraph(vec![format!("{name}: {e}")]))?;
        self.graph.layers.push(Layer {
            name,
            kind,
            role,
            inputs: inputs.to_vec(),
            out_shape,
            params: None,
        });
        Ok(NodeId::Layer(self.graph.layers.len() - 1))
    }

    /// Convolution with batch norm, no bias.
    pub fn conv_bn(&mut self, name: impl Into<String>, role: Role, input: NodeId, spec: ConvSpec, relu: bool) -> Result<NodeId> {
        self.push(
            name,
            role,
            LayerKind::Conv {
                spec,
                bn: true,
                bias: false,
                relu,
            },
            &[input],
        )
    }

    pub fn skip(&mut self, tap: usize, merge: NodeId) {
        if let NodeId::Layer(m) = merge {
            self.graph.skips.push(SkipEdge { tap, merge: m });
        }
    }

    pub fn set_taps(&mut self, taps: Vec<usize>) {
        self.graph.taps = taps;
    }

    pub fn finish(mut self, output: NodeId) -> Result<NetGraph> {
        self.graph.output = match output {
            NodeId::Layer(i) => i,
            NodeId::Input => return Err(Error::InvalidGraph(vec!["graph has no layers".into()])),
        };
        self.graph.validate().map_err(Error::InvalidGraph)?;
        Ok(self.graph)
    }
}

impl NetGraph {
    pub fn node_shape(&self, node: NodeId) -> TensorShape {
        match node {
            NodeId::Input => self.input_shape,
            NodeId::Layer(i) => self.layers[i].out_shape,
        }
    }

    pub fn output_shape(&self) -> TensorShape {
        self.layers[self.output].out_shape
    }

    pub fn input_shapes(&self, idx: usize) -> Vec<TensorShape> {
        self.layers[idx].inputs.iter().map(|&n| self.node_shape(n)).collect()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Layers reading the output of layer `idx`.
    pub fn consumers(&self, idx: usize) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&j| self.layers[j].inputs.contains(&NodeId::Layer(idx)))
            .collect()
    }

    /// Recompute every declared output shape from the layer specs.
    pub fn reinfer_shapes(&mut self) -> Result<()> {
        for i in 0..self.layers.len() {
            let shapes = self.input_shapes(i);
            let layer = &self.layers[i];
            self.layers[i].out_shape = infer_shape(&layer.kind, &shapes)
                .map_err(|e| Error::InvalidGraph(vec![format!("{}: {e}", layer.name)]))?;
        }
        Ok(())
    }

    /// Check structure, shapes, skip edges and parameters; returns every
    /// violation found.
    pub fn validate(&self) -> core::result::Result<(), Vec<String>> {
        let mut issues = Vec::new();
        let n = self.layers.len();
        if n == 0 {
            return Err(vec!["graph has no layers".into()]);
        }

        let mut seen = BTreeSet::new();
        for l in &self.layers {
            if !seen.insert(l.name.as_str()) {
                issues.push(format!("duplicate layer name `{}`", l.name));
            }
        }

        let mut edges_ok = true;
        for (i, l) in self.layers.iter().enumerate() {
            for &input in &l.inputs {
                if let NodeId::Layer(j) = input {
                    if j >= n {
                        issues.push(format!("`{}` reads missing layer #{j}", l.name));
                        edges_ok = false;
                    }
                }
            }
            if l.inputs.len() != l.kind.arity() {
                issues.push(format!("`{}` expects {} inputs, has {}", l.name, l.kind.arity(), l.inputs.len()));
                edges_ok = false;
            }
            let _ = i;
        }
        if !edges_ok {
            return Err(issues);
        }

        if let Some(cycle) = self.find_cycle() {
            let names: Vec<_> = cycle.iter().map(|&i| self.layers[i].name.as_str()).collect();
            issues.push(format!("cycle detected: {}", names.join(" -> ")));
            return Err(issues);
        }
        for (i, l) in self.layers.iter().enumerate() {
            for &input in &l.inputs {
                if let NodeId::Layer(j) = input {
                    if j >= i {
                        issues.push(format!(
                            "layers out of topological order: `{}` reads later layer `{}`",
                            l.name, self.layers[j].name
                        ));
                    }
                }
            }
        }

        for (i, l) in self.layers.iter().enumerate() {
            match infer_shape(&l.kind, &self.input_shapes(i)) {
                Ok(s) if s != l.out_shape => issues.push(format!(
                    "`{}` declares output {} but its inputs produce {s}",
                    l.name, l.out_shape
                )),
                Ok(_) => {}
                Err(e) => issues.push(format!("`{}`: {e}", l.name)),
            }
            if let (Some(spec), Some(p)) = (l.kind.conv_spec(), &l.params) {
                if let Err(e) = p.check(spec) {
                    issues.push(format!("`{}` parameters: {e}", l.name));
                }
                let (bn, bias) = l.kind.param_flags().unwrap_or((false, false));
                if bn != p.bn.is_some() || bias != p.bias.is_some() {
                    issues.push(format!("`{}` parameters do not match its bias/batch-norm flags", l.name));
                }
            }
        }

        if self.output >= n {
            issues.push(format!("output layer #{} does not exist", self.output));
        } else {
            for i in 0..n {
                if i != self.output && self.consumers(i).is_empty() {
                    issues.push(format!("`{}` is a second output (nothing consumes it)", self.layers[i].name));
                }
            }
        }
        if !self.layers.iter().any(|l| l.inputs.contains(&NodeId::Input)) {
            issues.push("no layer reads the graph input".into());
        }

        for s in &self.skips {
            if s.tap >= n || s.merge >= n {
                issues.push(format!("skip edge {}→{} references a missing layer", s.tap, s.merge));
                continue;
            }
            let merge = &self.layers[s.merge];
            let tap = &self.layers[s.tap];
            if !merge.inputs.contains(&NodeId::Layer(s.tap)) {
                issues.push(format!("skip edge `{}` → `{}` is not an input of the merge", tap.name, merge.name));
            }
            match merge.kind {
                LayerKind::Add { .. } => {
                    let shapes = self.input_shapes(s.merge);
                    if shapes.len() == 2 && shapes[0].c != shapes[1].c {
                        issues.push(format!(
                            "skip-add `{}` → `{}` channel mismatch: {} vs {}",
                            tap.name, merge.name, shapes[0], shapes[1]
                        ));
                    }
                }
                LayerKind::Concat => {}
                _ => issues.push(format!("skip edge merges into non-merge layer `{}`", merge.name)),
            }
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    fn find_cycle(&self) -> Option<Vec<usize>> {
        // 0 = unvisited, 1 = on stack, 2 = done; edges run producer -> consumer
        // but it is enough to walk consumer -> producer.
        let n = self.layers.len();
        let mut state = vec![0u8; n];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for start in 0..n {
            if state[start] != 0 {
                continue;
            }
            stack.push((start, 0));
            state[start] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let producers: Vec<usize> = self.layers[node]
                    .inputs
                    .iter()
                    .filter_map(|i| match i {
                        NodeId::Layer(j) => Some(*j),
                        NodeId::Input => None,
                    })
                    .collect();
                if *next < producers.len() {
                    let p = producers[*next];
                    *next += 1;
                    match state[p] {
                        0 => {
                            state[p] = 1;
                            stack.push((p, 0));
                        }
                        1 => {
                            let pos = stack.iter().position(|&(v, _)| v == p).unwrap();
                            let mut cycle: Vec<usize> = stack[pos..].iter().map(|&(v, _)| v).collect();
                            cycle.push(p);
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        None
    }

    /// Convolution signature of layer `idx`, if it is a convolution.
    pub fn signature(&self, idx: usize) -> Option<OpSignature> {
        let l = &self.layers[idx];
        let x = self.node_shape(*l.inputs.first()?);
        match &l.kind {
            LayerKind::Conv { spec, .. } => Some(OpSignature::conv(spec, x.h, x.w)),
            LayerKind::TransposeConv { spec, .. } => Some(OpSignature::transposed(spec, x.h, x.w)),
            _ => None,
        }
    }

    pub fn has_weights(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.kind.conv_spec().is_none() || l.params.is_some())
    }

    /// Seeded He-uniform weights and mildly perturbed batch-norm statistics.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let Some((bn, bias)) = l.kind.param_flags() else { continue };
            let spec = *l.kind.conv_spec().unwrap();
            let fan_in = (spec.in_per_group() * spec.kernel * spec.kernel) as f32;
            let bound = sqrt_f32(6.0 / fan_in);
            let mut uniform = |lo: f32, hi: f32, n: usize| -> Vec<f32> {
                (0..n).map(|_| lo + (hi - lo) * rng.random::<f32>()).collect()
            };
            let weight = uniform(-bound, bound, spec.weight_len());
            let bias = bias.then(|| uniform(-0.05, 0.05, spec.out_c));
            let bn = bn.then(|| BatchNorm {
                gamma: uniform(0.8, 1.2, spec.out_c),
                beta: uniform(-0.1, 0.1, spec.out_c),
                mean: uniform(-0.1, 0.1, spec.out_c),
                var: uniform(0.8, 1.2, spec.out_c),
            });
            l.params = Some(ConvParams { weight, bias, bn });
        }
    }

    /// Parameter slots `<layer>.<param>` with their dimensions, in layer order.
    pub fn param_slots(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            let (Some(spec), Some((bn, bias))) = (l.kind.conv_spec(), l.kind.param_flags()) else {
                continue;
            };
            out.push((format!("{}.weight", l.name), spec.weight_dims().to_vec()));
            if bias {
                out.push((format!("{}.bias", l.name), vec![spec.out_c]));
            }
            if bn {
                for p in ["bn_gamma", "bn_beta", "bn_mean", "bn_var"] {
                    out.push((format!("{}.{p}", l.name), vec![spec.out_c]));
                }
            }
        }
        out
    }

    /// Materialized parameters as `(slot name, dims, values)`.
    pub fn named_params(&self) -> Result<Vec<(String, Vec<usize>, &[f32])>> {
        let mut out = Vec::new();
        for l in &self.layers {
            let Some(spec) = l.kind.conv_spec() else { continue };
            let p = l.params.as_ref().ok_or_else(|| Error::MissingWeights(l.name.clone()))?;
            out.push((format!("{}.weight", l.name), spec.weight_dims().to_vec(), &p.weight[..]));
            if let Some(b) = &p.bias {
                out.push((format!("{}.bias", l.name), vec![spec.out_c], &b[..]));
            }
            if let Some(bn) = &p.bn {
                for (name, v) in [
                    ("bn_gamma", &bn.gamma),
                    ("bn_beta", &bn.beta),
                    ("bn_mean", &bn.mean),
                    ("bn_var", &bn.var),
                ] {
                    out.push((format!("{}.{name}", l.name), vec![spec.out_c], &v[..]));
                }
            }
        }
        Ok(out)
    }

    /// Build parameters for every layer from a slot lookup and install them
    /// only if all slots resolve. `lookup(name, dims)` returns the values for
    /// a slot. Nothing is modified on error.
    pub fn set_params_with(
        &mut self,
        mut lookup: impl FnMut(&str, &[usize]) -> Result<Vec<f32>>,
    ) -> Result<()> {
        let mut staged = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (Some(spec), Some((bn, bias))) = (l.kind.conv_spec(), l.kind.param_flags()) else {
                staged.push(None);
                continue;
            };
            let mut get = |p: &str, dims: &[usize]| lookup(&format!("{}.{p}", l.name), dims);
            let weight = get("weight", &spec.weight_dims())?;
            let bias = if bias { Some(get("bias", &[spec.out_c])?) } else { None };
            let bn = if bn {
                Some(BatchNorm {
                    gamma: get("bn_gamma", &[spec.out_c])?,
                    beta: get("bn_beta", &[spec.out_c])?,
                    mean: get("bn_mean", &[spec.out_c])?,
                    var: get("bn_var", &[spec.out_c])?,
                })
            } else {
                None
            };
            let params = ConvParams { weight, bias, bn };
            params.check(spec)?;
            staged.push(Some(params));
        }
        for (l, p) in self.layers.iter_mut().zip(staged) {
            if p.is_some() {
                l.params = p;
            }
        }
        Ok(())
    }

    /// Run one layer on explicit inputs.
    pub fn run_layer(&self, idx: usize, inputs: &[&Tensor], schedules: &dyn ScheduleSource) -> Result<Tensor> {
        let l = &self.layers[idx];
        let x = inputs[0];
        let conv_params = || l.params.as_ref().ok_or_else(|| Error::MissingWeights(l.name.clone()));
        let out = match &l.kind {
            LayerKind::Conv { spec, relu, .. } => {
                let sig = OpSignature::conv(spec, x.shape().h, x.shape().w);
                ops::conv2d(x, spec, conv_params()?, *relu, &schedules.schedule_for(&sig))?
            }
            LayerKind::TransposeConv { spec, relu, .. } => {
                let sig = OpSignature::transposed(spec, x.shape().h, x.shape().w);
                ops::transpose_conv2d(x, spec, conv_params()?, *relu, &schedules.schedule_for(&sig))?
            }
            LayerKind::Unpool => ops::unpool_zero(x),
            LayerKind::Interp => ops::interp_nearest_x2(x),
            LayerKind::MaxPool { kernel, stride, padding } => ops::max_pool(x, *kernel, *stride, *padding)?,
            LayerKind::Add { relu } => {
                let y = x.add(inputs[1])?;
                if *relu {
                    ops::relu(&y)
                } else {
                    y
                }
            }
            LayerKind::Concat => x.concat_channels(inputs[1])?,
        };
        debug_assert!(out.is_finite(), "non-finite output from `{}`", l.name);
        Ok(out)
    }

    /// Execute the graph. Intermediate activations are released as soon as
    /// their last consumer has run.
    pub fn forward(&self, x: &Tensor, schedules: &dyn ScheduleSource) -> Result<Tensor> {
        self.forward_observe(x, schedules, |_, _| {})
    }

    /// [`forward`](Self::forward), calling `observe(layer, output)` after
    /// every layer.
    pub fn forward_observe(
        &self,
        x: &Tensor,
        schedules: &dyn ScheduleSource,
        observe: impl FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        self.check_input(x)?;
        self.execute(x, 0, vec![None; self.layers.len()], schedules, observe)
    }

    /// Run the graph once and keep, for each layer index in `starts`, the
    /// activations needed to resume execution there.
    pub fn capture_frontiers(
        &self,
        x: &Tensor,
        schedules: &dyn ScheduleSource,
        starts: &[usize],
    ) -> Result<(Tensor, Vec<Frontier>)> {
        let last_use = self.last_uses();
        let mut frontiers: Vec<Frontier> = starts
            .iter()
            .map(|&start| Frontier {
                start,
                values: Vec::new(),
            })
            .collect();
        let out = self.forward_observe(x, schedules, |i, t| {
            for f in frontiers.iter_mut() {
                if i < f.start && (last_use[i] >= f.start || i == self.output) {
                    f.values.push((i, t.clone()));
                }
            }
        })?;
        Ok((out, frontiers))
    }

    /// Execute layers from `frontier.start` on. Layers before the start must
    /// be identical to those of the graph that captured the frontier.
    pub fn resume(&self, x: &Tensor, frontier: &Frontier, schedules: &dyn ScheduleSource) -> Result<Tensor> {
        self.check_input(x)?;
        let mut values = vec![None; self.layers.len()];
        for (i, t) in &frontier.values {
            if self.layers[*i].out_shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    left: t.shape(),
                    right: self.layers[*i].out_shape,
                });
            }
            values[*i] = Some(t.clone());
        }
        self.execute(x, frontier.start, values, schedules, |_, _| {})
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                left: x.shape(),
                right: self.input_shape,
            });
        }
        Ok(())
    }

    fn last_uses(&self) -> Vec<usize> {
        let mut last_use = vec![0usize; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate() {
            for input in &l.inputs {
                if let NodeId::Layer(j) = input {
                    last_use[*j] = i;
                }
            }
        }
        last_use
    }

    fn execute(
        &self,
        x: &Tensor,
        start: usize,
        mut values: Vec<Option<Tensor>>,
        schedules: &dyn ScheduleSource,
        mut observe: impl FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        let last_use = self.last_uses();
        for i in start..=self.output {
            let l = &self.layers[i];
            let inputs = l
                .inputs
                .iter()
                .map(|node| match node {
                    NodeId::Input => Ok(x),
                    NodeId::Layer(j) => values[*j]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidGraph(vec![format!("`{}` input not available", l.name)])),
                })
                .collect::<Result<Vec<&Tensor>>>()?;
            let y = self.run_layer(i, &inputs, schedules)?;
            if y.shape() != l.out_shape {
                return Err(Error::InvalidGraph(vec![format!(
                    "`{}` produced {} but declares {}",
                    l.name,
                    y.shape(),
                    l.out_shape
                )]));
            }
            observe(i, &y);
            values[i] = Some(y);
            for input in &l.inputs {
                if let NodeId::Layer(j) = input {
                    if last_use[*j] == i && *j != self.output {
                        values[*j] = None;
                    }
                }
            }
        }
        values[self.output]
            .take()
            .ok_or_else(|| Error::InvalidGraph(vec!["output was not computed".into()]))
    }
}

/// Activations sufficient to resume a forward pass at layer `start`.
#[derive(Debug, Clone)]
pub struct Frontier {
    start: usize,
    values: Vec<(usize, Tensor)>,
}

impl Frontier {
    pub fn start(&self) -> usize {
        self.start
    }
}

#[cfg(test)]
mod tests;
