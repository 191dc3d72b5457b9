//! The dilated wide activation network (DWAN).
//!
//! ```text
//! x ─ head 3x3 (1→C) ─┬─ local:  4 × [3x3 C→E, ReLU, 3x3 E→C] + residual ─┐
//! │                   └─ global: 4 × [3x3 C→E dil d_k, ReLU, 3x3 E→C] + res ┴─ concat ─ fuse 3x3 (2C→1) ─┐
//! └────────────────────────────── skip 3x3 (1→1) ──────────────────────────────────────────────────── + ─ out
//! ```
//!
//! `C` is the base width (32), `E` the expansion width (128) and `d_k` the
//! global dilations (2, 4, 8, 16). All convolutions use "same" zero padding,
//! there is no normalisation layer anywhere.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::ops;
use crate::seed;
use crate::tensor::{Scalar, Tensor};

/// Weight initialisation. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// He-normal for every convolution.
    He,
    /// He-normal, except the second convolution of every residual block,
    /// which starts at zero so each block is initially the identity.
    HeZeroResidual,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::He => "he",
            InitScheme::HeZeroResidual => "he_zero_residual",
        }
    }
}

impl core::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(InitScheme::He),
            "he_zero_residual" => Ok(InitScheme::HeZeroResidual),
            _ => Err(Error::InvalidArgument(format!("unknown init scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DwanSpec {
    pub base_channels: usize,
    pub expansion_channels: usize,
    pub blocks_per_pathway: usize,
    pub global_dilations: Vec<usize>,
    pub kernel: usize,
    pub init: InitScheme,
}

impl Default for DwanSpec {
    fn default() -> Self {
        Self {
            base_channels: 32,
            expansion_channels: 128,
            blocks_per_pathway: 4,
            global_dilations: vec![2, 4, 8, 16],
            kernel: 3,
            init: InitScheme::HeZeroResidual,
        }
    }
}

impl DwanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.expansion_channels == 0 {
            return Err(Error::InvalidSpec("channel counts must be positive".into()));
        }
        if self.blocks_per_pathway == 0 {
            return Err(Error::InvalidSpec("need at least one block per pathway".into()));
        }
        if self.global_dilations.len() != self.blocks_per_pathway {
            return Err(Error::InvalidSpec(format!(
                "{} global dilations for {} blocks",
                self.global_dilations.len(),
                self.blocks_per_pathway
            )));
        }
        if let Some(&d) = self.global_dilations.iter().find(|&&d| d < 1) {
            return Err(Error::InvalidSpec(format!("dilation {d} < 1")));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidSpec(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

/// Which part of the network a convolution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Head,
    Local { block: usize, conv: usize },
    Global { block: usize, conv: usize },
    Fuse,
    Skip,
}

/// One convolution of the architecture, in parameter order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub stage: Stage,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvLayer {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn scalar_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// The ordered layer table for a spec: head, local blocks, global blocks, fuse, skip.
pub fn layers(spec: &DwanSpec) -> Result<Vec<ConvLayer>> {
    spec.validate()?;
    let (c, e, k) = (spec.base_channels, spec.expansion_channels, spec.kernel);
    let conv = |name: String, stage, i, o, d| ConvLayer {
        name,
        stage,
        in_channels: i,
        out_channels: o,
        kernel: k,
        dilation: d,
    };
    let mut out = vec![conv("head.conv".into(), Stage::Head, 1, c, 1)];
    for b in 0..spec.blocks_per_pathway {
        out.push(conv(format!("local.block{}.conv1", b + 1), Stage::Local { block: b, conv: 0 }, c, e, 1));
        out.push(conv(format!("local.block{}.conv2", b + 1), Stage::Local { block: b, conv: 1 }, e, c, 1));
    }
    for (b, &d) in spec.global_dilations.iter().enumerate() {
        out.push(conv(format!("global.block{}.conv1", b + 1), Stage::Global { block: b, conv: 0 }, c, e, d));
        out.push(conv(format!("global.block{}.conv2", b + 1), Stage::Global { block: b, conv: 1 }, e, c, 1));
    }
    out.push(conv("fuse.conv".into(), Stage::Fuse, 2 * c, 1, 1));
    out.push(conv("skip.conv".into(), Stage::Skip, 1, 1, 1));
    Ok(out)
}

/// Ordered, uniquely named learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> NetworkParameters<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Node ids recorded by [`Dwan::record`].
#[derive(Debug, Clone)]
pub struct DwanNodes {
    /// Parameter leaves, in parameter order.
    pub params: Vec<NodeId>,
    pub head: NodeId,
    pub local: NodeId,
    pub global: NodeId,
    pub output: NodeId,
}

/// A DWAN architecture; parameters are kept separately in [`NetworkParameters`].
#[derive(Debug, Clone)]
pub struct Dwan {
    spec: DwanSpec,
    layers: Vec<ConvLayer>,
}

impl Dwan {
    pub fn new(spec: DwanSpec) -> Result<Self> {
        let layers = layers(&spec)?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &DwanSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// He-normal weights (`std = sqrt(2 / (C kh kw))`) and zero biases,
    /// adjusted by the spec's [`InitScheme`].
    ///
    /// Samples are drawn in `f64` in parameter order, so `f32` and `f64`
    /// builds from one seed agree up to rounding. Zeroed layers still consume
    /// their draws, so both schemes share every other weight.
    pub fn init<T: Scalar>(&self, seed: u64) -> NetworkParameters<T> {
        let mut rng = seed::rng(seed::derive(seed, "init", 0));
        let mut entries = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
            let normal = Normal::new(0.0, num_traits::Float::sqrt(2.0 / fan_in)).expect("finite std");
            let mut w = Tensor::from_fn(&layer.weight_shape(), |_| T::from_f64(normal.sample(&mut rng)));
            let residual_out = matches!(layer.stage, Stage::Local { conv: 1, .. } | Stage::Global { conv: 1, .. });
            if residual_out && self.spec.init == InitScheme::HeZeroResidual {
                w = Tensor::zeros(&layer.weight_shape());
            }
            entries.push((format!("{}.weight", layer.name), w));
            entries.push((format!("{}.bias", layer.name), Tensor::zeros(&[layer.out_channels])));
        }
        NetworkParameters { entries }
    }

    /// Checks that `params` has exactly this architecture's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &NetworkParameters<T>) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameter tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (wn, w) = &params.entries[2 * i];
            let (bn, b) = &params.entries[2 * i + 1];
            if *wn != format!("{}.weight", layer.name) || *bn != format!("{}.bias", layer.name) {
                return Err(Error::UnknownParameter(wn.clone()));
            }
            w.expect_shape("parameter", &layer.weight_shape())?;
            b.expect_shape("parameter", &[layer.out_channels])?;
        }
        Ok(())
    }

    fn expect_single_channel<T: Scalar>(input: &Tensor<T>) -> Result<()> {
        let [_, c, _, _] = input.dims4("dwan input")?;
        if c != 1 {
            return Err(Error::ShapeMismatch {
                op: "dwan input channels",
                expected: vec![1],
                actual: vec![c],
            });
        }
        Ok(())
    }

    /// Inference: `[N,1,H,W] -> [N,1,H,W]` without recording a graph.
    ///
    /// Evaluates the same op sequence as [`Dwan::record`], so outputs are
    /// bit-identical to the recorded forward pass.
    pub fn forward<T: Scalar>(&self, params: &NetworkParameters<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Self::expect_single_channel(input)?;
        self.check_params(params)?;
        let conv = |i: usize, x: &Tensor<T>| -> Result<Tensor<T>> {
            conv2d(x, &params.entries[2 * i].1, &params.entries[2 * i + 1].1, self.layers[i].dilation)
        };
        let nb = self.spec.blocks_per_pathway;
        let head = conv(0, input)?;
        let pathway = |first: usize| -> Result<Tensor<T>> {
            let mut h = head.clone();
            for b in 0..nb {
                let t = ops::relu(&conv(first + 2 * b, &h)?);
                let t = conv(first + 2 * b + 1, &t)?;
                h = ops::add(&h, &t)?;
            }
            Ok(h)
        };
        let local = pathway(1)?;
        let global = pathway(1 + 2 * nb)?;
        let cat = ops::concat_channels(&local, &global)?;
        let fused = conv(1 + 4 * nb, &cat)?;
        let skip = conv(2 + 4 * nb, input)?;
        ops::add(&fused, &skip)
    }

    /// Records the forward pass into `graph`, borrowing the parameters.
    pub fn record<'a, T: Scalar>(
        &self,
        graph: &mut Graph<'a, T>,
        params: &'a NetworkParameters<T>,
        input: NodeId,
        params_require_grad: bool,
    ) -> Result<DwanNodes> {
        Self::expect_single_channel(graph.value(input)?)?;
        self.check_params(params)?;
        let ids: Vec<NodeId> = params
            .entries
            .iter()
            .map(|(_, t)| graph.leaf_ref(t, params_require_grad))
            .collect();
        let nb = self.spec.blocks_per_pathway;
        let layers = &self.layers;
        let conv = |g: &mut Graph<'a, T>, i: usize, x: NodeId| g.conv2d(x, ids[2 * i], ids[2 * i + 1], layers[i].dilation);

        let head = conv(graph, 0, input)?;
        let pathway = |g: &mut Graph<'a, T>, first: usize| -> Result<NodeId> {
            let mut h = head;
            for b in 0..nb {
                let t = conv(g, first + 2 * b, h)?;
                let t = g.relu(t)?;
                let t = conv(g, first + 2 * b + 1, t)?;
                h = g.add(h, t)?;
            }
            Ok(h)
        };
        let local = pathway(graph, 1)?;
        let global = pathway(graph, 1 + 2 * nb)?;
        let cat = graph.concat_channels(local, global)?;
        let fused = conv(graph, 1 + 4 * nb, cat)?;
        let skip = conv(graph, 2 + 4 * nb, input)?;
        let output = graph.add(fused, skip)?;
        Ok(DwanNodes {
            params: ids,
            head,
            local,
            global,
            output,
        })
    }

    /// Analytic receptive field (side length) of the full network.
    pub fn receptive_field(&self) -> usize {
        let r = |l: &ConvLayer| l.dilation * (l.kernel / 2);
        let head = r(&self.layers[0]);
        let path = |pred: fn(&Stage) -> bool| -> usize {
            self.layers.iter().filter(|l| pred(&l.stage)).map(r).sum()
        };
        let local = path(|s| matches!(s, Stage::Local { .. }));
        let global = path(|s| matches!(s, Stage::Global { .. }));
        let fuse = r(&self.layers[self.layers.len() - 2]);
        let skip = r(&self.layers[self.layers.len() - 1]);
        2 * (head + local.max(global) + fuse).max(skip) + 1
    }

    /// Structural audit read back from a recorded forward pass.
    pub fn audit<T: Scalar>(&self, params: &NetworkParameters<T>) -> Result<Audit> {
        let probe = Tensor::<T>::zeros(&[1, 1, 4, 4]);
        let mut graph = Graph::new();
        let x = graph.leaf(probe, false);
        self.record(&mut graph, params, x, false)?;

        let mut convs = Vec::new();
        let (mut adds, mut concats, mut relus) = (0, 0, 0);
        for op in graph.ops() {
            match op {
                Op::Conv2d { weight, dilation, .. } => {
                    let shape = graph.value(weight)?.shape();
                    convs.push((shape.to_vec(), dilation));
                }
                Op::Add(..) => adds += 1,
                Op::Concat(..) => concats += 1,
                Op::Relu(..) => relus += 1,
                _ => {}
            }
        }
        let mut rows = Vec::with_capacity(convs.len());
        let mut local_dil = Vec::new();
        let mut global_dil = Vec::new();
        for (layer, (shape, dilation)) in self.layers.iter().zip(&convs) {
            match layer.stage {
                Stage::Local { conv: 0, .. } => local_dil.push(*dilation),
                Stage::Global { conv: 0, .. } => global_dil.push(*dilation),
                _ => {}
            }
            rows.push(LayerRow {
                name: layer.name.clone(),
                in_channels: shape[1],
                out_channels: shape[0],
                kernel: shape[2],
                dilation: *dilation,
                scalar_params: shape.iter().product::<usize>() + shape[0],
            });
        }
        let weight_tensors = params.names().filter(|n| n.ends_with(".weight")).count();
        let bias_tensors = params.names().filter(|n| n.ends_with(".bias")).count();
        Ok(Audit {
            rows,
            weight_tensors,
            bias_tensors,
            scalar_params: params.scalar_count(),
            adds,
            concats,
            relus,
            local_block_dilations: local_dil,
            global_block_dilations: global_dil,
            receptive_field: self.receptive_field(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub scalar_params: usize,
}

/// What a recorded forward pass actually contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    pub rows: Vec<LayerRow>,
    pub weight_tensors: usize,
    pub bias_tensors: usize,
    pub scalar_params: usize,
    /// Residual adds plus the final output skip add.
    pub adds: usize,
    pub concats: usize,
    pub relus: usize,
    pub local_block_dilations: Vec<usize>,
    pub global_block_dilations: Vec<usize>,
    pub receptive_field: usize,
}

impl core::fmt::Display for Audit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "{:<22} {:>5} {:>5} {:>6} {:>8} {:>9}", "layer", "in", "out", "kernel", "dilation", "params")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<22} {:>5} {:>5} {:>4}x{:<1} {:>8} {:>9}",
                r.name, r.in_channels, r.out_channels, r.kernel, r.kernel, r.dilation, r.scalar_params
            )?;
        }
        writeln!(f, "weight tensors:         {}", self.weight_tensors)?;
        writeln!(f, "bias tensors:           {}", self.bias_tensors)?;
        writeln!(f, "scalar parameters:      {}", self.scalar_params)?;
        writeln!(f, "adds (residual+skip):   {}", self.adds)?;
        writeln!(f, "channel concats:        {}", self.concats)?;
        writeln!(f, "activations (ReLU):     {}", self.relus)?;
        writeln!(f, "local block dilations:  {:?}", self.local_block_dilations)?;
        writeln!(f, "global block dilations: {:?}", self.global_block_dilations)?;
        write!(f, "receptive field:        {}x{}", self.receptive_field, self.receptive_field)
    }
}
