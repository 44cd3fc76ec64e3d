//! Minimal deterministic neural-network engine: dense, 2D convolution,
//! max-pool, ReLU, with manual backpropagation and per-group gate
//! attachment. Gates multiply activations — a unit gate scales one
//! feature, a channel gate scales one feature map — which is equivalent
//! to zeroing the group's fan-out weights.

pub mod loss;
pub mod presets;

use ndarray::{Array1, Array2, Array4, ArrayD, Axis};

use crate::error::{Error, Result};
use crate::gates::{EstimatorSample, GateBank};
use crate::scalar::Scalar;

pub use loss::{loss, LossKind};
pub use presets::{build_preset, Preset};

// ---------------------------------------------------------------------------
// Shapes and batches
// ---------------------------------------------------------------------------

/// Per-sample tensor shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorShape {
    Flat(usize),
    /// Channels, height, width.
    Chw(usize, usize, usize),
}

impl TensorShape {
    pub fn elements(&self) -> usize {
        match *self {
            TensorShape::Flat(n) => n,
            TensorShape::Chw(c, h, w) => c * h * w,
        }
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            TensorShape::Flat(n) => write!(f, "[{n}]"),
            TensorShape::Chw(c, h, w) => write!(f, "[{c}x{h}x{w}]"),
        }
    }
}

/// A batch of activations (batch axis first).
#[derive(Debug, Clone)]
pub enum Batch<F: Scalar> {
    Flat(Array2<F>),
    Spatial(Array4<F>),
}

impl<F: Scalar> Batch<F> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Flat(a) => a.nrows(),
            Batch::Spatial(a) => a.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_shape(&self) -> TensorShape {
        match self {
            Batch::Flat(a) => TensorShape::Flat(a.ncols()),
            Batch::Spatial(a) => {
                let s = a.shape();
                TensorShape::Chw(s[1], s[2], s[3])
            }
        }
    }

    fn into_flat(self) -> Result<Array2<F>> {
        match self {
            Batch::Flat(a) => Ok(a),
            Batch::Spatial(_) => Err(Error::Contract(
                "expected flat activations, got spatial".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Layers and the network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Layer<F: Scalar> {
    /// Fully connected: weight is `in x out`, so row `i` holds unit `i`'s
    /// fan-out.
    Dense { weight: Array2<F>, bias: Array1<F> },
    /// Valid-padding stride-1 convolution: weight is
    /// `out_ch x in_ch x kh x kw`.
    Conv2d { weight: Array4<F>, bias: Array1<F> },
    /// Non-overlapping max pooling with a square window.
    MaxPool2d { size: usize },
    Relu,
    Flatten,
    /// Multiplies activations by the current mask of the next gated layer:
    /// one value per feature (flat input) or per channel (spatial input).
    Gate { groups: usize },
}

/// Reference from a gated layer to the weights its gates control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightRef {
    /// Gate `g` owns row `g` (the unit's fan-out) of this dense layer.
    DenseRows { layer: usize },
    /// Gate `g` owns filter `g` (its fan-in weights) of this conv layer.
    ConvFilters { layer: usize },
}

impl WeightRef {
    /// Index into the network's layer list of the owning tensor.
    pub fn layer(self) -> usize {
        match self {
            WeightRef::DenseRows { layer } => layer,
            WeightRef::ConvFilters { layer } => layer,
        }
    }
}

/// One gated layer's group structure.
#[derive(Debug, Clone, Copy)]
pub struct GateGroup {
    /// Index into `GatedNetwork::layers` of the gate layer itself.
    pub gate_pos: usize,
    pub count: usize,
    /// Weights per group (uniform within a gated layer).
    pub group_size: usize,
    pub weights: WeightRef,
}

#[derive(Debug, Clone)]
pub struct GatedNetwork<F: Scalar> {
    input_shape: TensorShape,
    layers: Vec<Layer<F>>,
    num_classes: usize,
    gate_counts: Vec<usize>,
}

impl<F: Scalar> GatedNetwork<F> {
    /// Validate the layer chain: shapes must connect, gate widths must
    /// match their position, and the final (classification) layer must be
    /// an ungated dense layer.
    pub fn new(input_shape: TensorShape, layers: Vec<Layer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        if !matches!(layers.last(), Some(Layer::Dense { .. })) {
            return Err(Error::Contract(
                "the output layer must be dense and is never gated".into(),
            ));
        }
        let mut shape = input_shape;
        let mut gate_counts = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            shape = infer_shape(layer, shape)
                .map_err(|e| Error::Contract(format!("layer {i}: {e}")))?;
            if let Layer::Gate { groups } = layer {
                gate_counts.push(*groups);
            }
        }
        let num_classes = match shape {
            TensorShape::Flat(n) => n,
            other => {
                return Err(Error::Contract(format!(
                    "network output must be flat logits, got {other}"
                )))
            }
        };
        Ok(GatedNetwork { input_shape, layers, num_classes, gate_counts })
    }

    pub fn input_shape(&self) -> TensorShape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    /// Gate count per gated layer, in network order.
    pub fn gate_counts(&self) -> &[usize] {
        &self.gate_counts
    }

    /// Group structure of every gated layer: which weights each gate owns.
    /// Channel gates own their producing conv's filters; unit gates own
    /// their fan-out rows in the next dense layer.
    pub fn gate_groups(&self) -> Result<Vec<GateGroup>> {
        let mut out = Vec::new();
        for (pos, layer) in self.layers.iter().enumerate() {
            let Layer::Gate { groups } = layer else { continue };
            // Spatial gates follow a conv; find it by scanning backwards.
            let prev_conv = self.layers[..pos].iter().rposition(|l| matches!(l, Layer::Conv2d { .. }));
            let next_flatten = self.layers[pos..].iter().position(|l| matches!(l, Layer::Flatten));
            let is_spatial = match (prev_conv, next_flatten) {
                (Some(_), Some(_)) => true,
                (Some(cp), None) => {
                    // Conv behind us but already flattened?
                    self.layers[cp..pos].iter().all(|l| !matches!(l, Layer::Flatten))
                }
                _ => false,
            };
            let (group_size, weights) = if is_spatial {
                let cp = prev_conv.expect("spatial gate follows a conv");
                let Layer::Conv2d { weight, .. } = &self.layers[cp] else { unreachable!() };
                let s = weight.shape();
                if s[0] != *groups {
                    return Err(Error::Contract(format!(
                        "gate layer at {pos} has {groups} groups but conv at {cp} has {} filters",
                        s[0]
                    )));
                }
                (s[1] * s[2] * s[3], WeightRef::ConvFilters { layer: cp })
            } else {
                let next_dense = self.layers[pos..]
                    .iter()
                    .position(|l| matches!(l, Layer::Dense { .. }))
                    .map(|off| pos + off)
                    .ok_or_else(|| {
                        Error::Contract(format!("gate layer at {pos} has no consuming dense layer"))
                    })?;
                let Layer::Dense { weight, .. } = &self.layers[next_dense] else { unreachable!() };
                if weight.nrows() != *groups {
                    return Err(Error::Contract(format!(
                        "gate layer at {pos} has {groups} groups but dense at {next_dense} takes {} inputs",
                        weight.nrows()
                    )));
                }
                (weight.ncols(), WeightRef::DenseRows { layer: next_dense })
            };
            out.push(GateGroup { gate_pos: pos, count: *groups, group_size, weights });
        }
        Ok(out)
    }

    /// All trainable tensors in a fixed order: each dense/conv layer
    /// contributes its weight then its bias.
    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                Layer::Conv2d { weight, bias } => {
                    out.push(weight.as_slice().expect("standard layout"));
                    out.push(bias.as_slice().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    out.push(weight.as_slice_mut().expect("standard layout"));
                    out.push(bias.as_slice_mut().expect("standard layout"));
                }
                Layer::Conv2d { weight, bias } => {
                    out.push(weight.as_slice_mut().expect("standard layout"));
                    out.push(bias.as_slice_mut().expect("standard layout"));
                }
                _ => {}
            }
        }
        out
    }

    /// Index into the `param_slices` order of a layer's weight tensor.
    pub fn weight_slot(&self, layer_pos: usize) -> Result<usize> {
        let mut slot = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let trainable = matches!(layer, Layer::Dense { .. } | Layer::Conv2d { .. });
            if i == layer_pos {
                return if trainable {
                    Ok(slot)
                } else {
                    Err(Error::Contract(format!("layer {layer_pos} has no weights")))
                };
            }
            if trainable {
                slot += 2;
            }
        }
        Err(Error::Contract(format!("no layer at index {layer_pos}")))
    }
}

fn infer_shape<F: Scalar>(layer: &Layer<F>, input: TensorShape) -> std::result::Result<TensorShape, String> {
    match layer {
        Layer::Dense { weight, .. } => match input {
            TensorShape::Flat(n) if n == weight.nrows() => Ok(TensorShape::Flat(weight.ncols())),
            other => Err(format!(
                "dense layer expects [{}] input, got {other}",
                weight.nrows()
            )),
        },
        Layer::Conv2d { weight, bias } => {
            let s = weight.shape();
            let (co, ci, kh, kw) = (s[0], s[1], s[2], s[3]);
            if bias.len() != co {
                return Err(format!("conv bias length {} != {co} filters", bias.len()));
            }
            match input {
                TensorShape::Chw(c, h, w) if c == ci && h >= kh && w >= kw => {
                    Ok(TensorShape::Chw(co, h - kh + 1, w - kw + 1))
                }
                other => Err(format!(
                    "conv layer expects [{ci}xH>={kh}xW>={kw}] input, got {other}"
                )),
            }
        }
        Layer::MaxPool2d { size } => {
            if *size == 0 {
                return Err("pool window must be positive".into());
            }
            match input {
                TensorShape::Chw(c, h, w) if h % size == 0 && w % size == 0 => {
                    Ok(TensorShape::Chw(c, h / size, w / size))
                }
                other => Err(format!("pool window {size} does not tile {other}")),
            }
        }
        Layer::Relu => Ok(input),
        Layer::Flatten => match input {
            TensorShape::Chw(c, h, w) => Ok(TensorShape::Flat(c * h * w)),
            other => Err(format!("flatten expects spatial input, got {other}")),
        },
        Layer::Gate { groups } => match input {
            TensorShape::Flat(n) if n == *groups => Ok(input),
            TensorShape::Chw(c, _, _) if c == *groups => Ok(input),
            other => Err(format!("gate layer with {groups} groups cannot gate {other}")),
        },
    }
}

// ---------------------------------------------------------------------------
// Mask assignment
// ---------------------------------------------------------------------------

/// Gate values per gated layer: binary during training, real in [0, 1]
/// when evaluating with the thresholded expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAssignment {
    layers: Vec<Vec<f64>>,
}

impl MaskAssignment {
    pub fn new(layers: Vec<Vec<f64>>) -> Result<Self> {
        for (l, vals) in layers.iter().enumerate() {
            if let Some(bad) = vals.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
                return Err(Error::Domain(format!(
                    "mask value {bad} in gated layer {l} is outside [0, 1]"
                )));
            }
        }
        Ok(MaskAssignment { layers })
    }

    /// Binary masks from a sampled mask vector, split per the bank's layers.
    pub fn from_bits(bits: &[bool], bank: &GateBank) -> Result<Self> {
        if bits.len() != bank.len() {
            return Err(Error::Contract(format!(
                "mask has {} bits, bank has {} gates",
                bits.len(),
                bank.len()
            )));
        }
        let layers = (0..bank.num_layers())
            .map(|l| bank.layer_range(l).map(|i| f64::from(u8::from(bits[i]))).collect())
            .collect();
        Ok(MaskAssignment { layers })
    }

    /// The primary (non-antithetic) mask of a sample.
    pub fn from_sample(sample: &EstimatorSample, bank: &GateBank) -> Result<Self> {
        Self::from_bits(&sample.z, bank)
    }

    /// Real-valued masks from per-gate values, split per the bank's layers.
    pub fn from_values(values: &[f64], bank: &GateBank) -> Result<Self> {
        if values.len() != bank.len() {
            return Err(Error::Contract(format!(
                "mask has {} values, bank has {} gates",
                values.len(),
                bank.len()
            )));
        }
        let layers = (0..bank.num_layers())
            .map(|l| bank.layer_range(l).map(|i| values[i]).collect())
            .collect();
        Self::new(layers)
    }

    pub fn all_ones(counts: &[usize]) -> Self {
        MaskAssignment { layers: counts.iter().map(|&c| vec![1.0; c]).collect() }
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    /// 0/1 mask marking which groups are active (value > 0).
    pub fn indicator(&self) -> MaskAssignment {
        MaskAssignment {
            layers: self
                .layers
                .iter()
                .map(|v| v.iter().map(|&x| f64::from(u8::from(x > 0.0))).collect())
                .collect(),
        }
    }

    pub(crate) fn check_against<F: Scalar>(&self, net: &GatedNetwork<F>) -> Result<()> {
        let counts = net.gate_counts();
        if self.layers.len() != counts.len() {
            return Err(Error::Contract(format!(
                "mask covers {} gated layers, network has {}",
                self.layers.len(),
                counts.len()
            )));
        }
        for (l, (vals, &want)) in self.layers.iter().zip(counts).enumerate() {
            if vals.len() != want {
                return Err(Error::Contract(format!(
                    "gated layer {l}: mask has {} values, layer has {want} groups",
                    vals.len()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// What each layer saves for its backward pass.
#[derive(Debug)]
enum Saved<F: Scalar> {
    Dense { input: Array2<F> },
    Conv { input: Array4<F> },
    Pool { in_dims: (usize, usize, usize, usize), argmax: Vec<u32> },
    Relu { input: Batch<F> },
    Flatten { in_dims: (usize, usize, usize, usize) },
    Gate,
}

/// Activations retained by [`forward`] for one specific (network, batch,
/// mask) triple; consumed by [`backward`].
#[derive(Debug)]
pub struct ForwardCache<F: Scalar> {
    saved: Vec<Saved<F>>,
    batch_size: usize,
}

/// Run the network on a batch under the given gate masks, returning logits
/// and the cache backward needs.
pub fn forward<F: Scalar>(
    net: &GatedNetwork<F>,
    batch: &Batch<F>,
    masks: &MaskAssignment,
) -> Result<(Array2<F>, ForwardCache<F>)> {
    masks.check_against(net)?;
    if batch.sample_shape() != net.input_shape() {
        return Err(Error::Contract(format!(
            "batch shape {} does not match network input {}",
            batch.sample_shape(),
            net.input_shape()
        )));
    }
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }

    let batch_size = batch.len();
    let mut saved = Vec::with_capacity(net.layers().len());
    let mut x = batch.clone();
    let mut gate_idx = 0usize;

    for layer in net.layers() {
        x = match layer {
            Layer::Dense { weight, bias } => {
                let input = x.into_flat()?;
                let mut y = input.dot(weight);
                y += bias;
                saved.push(Saved::Dense { input });
                Batch::Flat(y)
            }
            Layer::Conv2d { weight, bias } => {
                let Batch::Spatial(input) = x else {
                    return Err(Error::Contract("conv needs spatial input".into()));
                };
                let y = conv_forward(&input, weight, bias);
                saved.push(Saved::Conv { input });
                Batch::Spatial(y)
            }
            Layer::MaxPool2d { size } => {
                let Batch::Spatial(input) = x else {
                    return Err(Error::Contract("pool needs spatial input".into()));
                };
                let d = input.dim();
                let (y, argmax) = pool_forward(&input, *size);
                saved.push(Saved::Pool { in_dims: d, argmax });
                Batch::Spatial(y)
            }
            Layer::Relu => {
                let y = match &x {
                    Batch::Flat(a) => Batch::Flat(a.mapv(|v| v.max(F::zero()))),
                    Batch::Spatial(a) => Batch::Spatial(a.mapv(|v| v.max(F::zero()))),
                };
                saved.push(Saved::Relu { input: x });
                y
            }
            Layer::Flatten => {
                let Batch::Spatial(input) = x else {
                    return Err(Error::Contract("flatten needs spatial input".into()));
                };
                let d = input.dim();
                let flat = input
                    .into_shape_with_order((batch_size, d.1 * d.2 * d.3))
                    .expect("standard layout");
                saved.push(Saved::Flatten { in_dims: d });
                Batch::Flat(flat)
            }
            Layer::Gate { .. } => {
                let mask = &masks.layers()[gate_idx];
                gate_idx += 1;
                saved.push(Saved::Gate);
                apply_gate(x, mask)
            }
        };
    }

    let logits = x.into_flat().expect("validated output shape");
    Ok((logits, ForwardCache { saved, batch_size }))
}

fn apply_gate<F: Scalar>(x: Batch<F>, mask: &[f64]) -> Batch<F> {
    match x {
        Batch::Flat(mut a) => {
            let m: Array1<F> = mask.iter().map(|&v| F::from_f64(v)).collect();
            a *= &m;
            Batch::Flat(a)
        }
        Batch::Spatial(mut a) => {
            for (c, &v) in mask.iter().enumerate() {
                let vf = F::from_f64(v);
                a.index_axis_mut(Axis(1), c).mapv_inplace(|x| x * vf);
            }
            Batch::Spatial(a)
        }
    }
}

fn conv_forward<F: Scalar>(x: &Array4<F>, weight: &Array4<F>, bias: &Array1<F>) -> Array4<F> {
    let (b, ci, h, w) = x.dim();
    let (co, _, kh, kw) = weight.dim();
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let mut y = Array4::<F>::zeros((b, co, ho, wo));
    {
        let xs = x.as_slice().expect("standard layout");
        let ws = weight.as_slice().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        for bi in 0..b {
            for oc in 0..co {
                let ob0 = ((bi * co + oc) * ho) * wo;
                let bv = bias[oc];
                ys[ob0..ob0 + ho * wo].iter_mut().for_each(|v| *v = bv);
                for ic in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = ws[((oc * ci + ic) * kh + ky) * kw + kx];
                            for oy in 0..ho {
                                let ib = ((bi * ci + ic) * h + oy + ky) * w + kx;
                                let ob = ob0 + oy * wo;
                                let (xr, yr) = (&xs[ib..ib + wo], &mut ys[ob..ob + wo]);
                                for i in 0..wo {
                                    yr[i] = yr[i] + wv * xr[i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn pool_forward<F: Scalar>(x: &Array4<F>, size: usize) -> (Array4<F>, Vec<u32>) {
    let (b, c, h, w) = x.dim();
    let (ho, wo) = (h / size, w / size);
    let mut y = Array4::<F>::zeros((b, c, ho, wo));
    let mut argmax = vec![0u32; b * c * ho * wo];
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    for bi in 0..b {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = F::neg_infinity();
                    let mut best_at = 0u32;
                    for dy in 0..size {
                        let row = plane + (oy * size + dy) * w + ox * size;
                        for dx in 0..size {
                            let v = xs[row + dx];
                            if v > best {
                                best = v;
                                best_at = ((oy * size + dy) * w + ox * size + dx) as u32;
                            }
                        }
                    }
                    let o = ((bi * c + ci) * ho + oy) * wo + ox;
                    ys[o] = best;
                    argmax[o] = best_at;
                }
            }
        }
    }
    (y, argmax)
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Gradients for every trainable tensor, in [`GatedNetwork::param_slices`]
/// order (weight then bias per dense/conv layer).
#[derive(Debug, Clone)]
pub struct ParamGrads<F: Scalar> {
    pub tensors: Vec<ArrayD<F>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn slices(&self) -> Vec<&[F]> {
        self.tensors
            .iter()
            .map(|t| t.as_slice().expect("standard layout"))
            .collect()
    }
}

/// Backpropagate `dloss_dlogits` through the forward pass recorded in
/// `cache`. Masks are held fixed: the mask path contributes no gradient
/// of its own, it only scales what flows through.
pub fn backward<F: Scalar>(
    net: &GatedNetwork<F>,
    cache: &ForwardCache<F>,
    dloss_dlogits: &Array2<F>,
    masks: &MaskAssignment,
) -> Result<ParamGrads<F>> {
    masks.check_against(net)?;
    if cache.saved.len() != net.layers().len() {
        return Err(Error::Contract(format!(
            "cache covers {} layers, network has {}: cache is stale",
            cache.saved.len(),
            net.layers().len()
        )));
    }
    if dloss_dlogits.nrows() != cache.batch_size || dloss_dlogits.ncols() != net.num_classes() {
        return Err(Error::Contract(format!(
            "loss gradient is {}x{}, expected {}x{}",
            dloss_dlogits.nrows(),
            dloss_dlogits.ncols(),
            cache.batch_size,
            net.num_classes()
        )));
    }

    let mut tensors_rev: Vec<ArrayD<F>> = Vec::new();
    let mut delta = Batch::Flat(dloss_dlogits.clone());
    let mut gate_idx = net.gate_counts().len();

    for (layer, saved) in net.layers().iter().zip(&cache.saved).rev() {
        delta = match (layer, saved) {
            (Layer::Dense { weight, .. }, Saved::Dense { input }) => {
                let d = delta.into_flat()?;
                if input.nrows() != d.nrows() || input.ncols() != weight.nrows() {
                    return Err(Error::Contract("cached dense input is stale".into()));
                }
                let dw = input.t().dot(&d);
                let db = d.sum_axis(Axis(0));
                let dx = d.dot(&weight.t());
                tensors_rev.push(db.into_dyn());
                tensors_rev.push(dw.into_dyn());
                Batch::Flat(dx)
            }
            (Layer::Conv2d { weight, .. }, Saved::Conv { input }) => {
                let Batch::Spatial(d) = delta else {
                    return Err(Error::Contract("conv delta must be spatial".into()));
                };
                let (bi, ci, h, w) = input.dim();
                let (co, wci, kh, kw) = weight.dim();
                let expect = (bi, co, h - kh + 1, w - kw + 1);
                if ci != wci || d.dim() != expect {
                    return Err(Error::Contract("cached conv input is stale".into()));
                }
                let (dw, db, dx) = conv_backward(input, weight, &d);
                tensors_rev.push(db.into_dyn());
                tensors_rev.push(dw.into_dyn());
                Batch::Spatial(dx)
            }
            (Layer::MaxPool2d { size }, Saved::Pool { in_dims, argmax }) => {
                let Batch::Spatial(d) = delta else {
                    return Err(Error::Contract("pool delta must be spatial".into()));
                };
                let (b, c, h, w) = *in_dims;
                if d.dim() != (b, c, h / size, w / size) {
                    return Err(Error::Contract("cached pool shape is stale".into()));
                }
                let mut dx = Array4::<F>::zeros(*in_dims);
                let dxs = dx.as_slice_mut().expect("standard layout");
                let ds = d.as_slice().expect("standard layout");
                for (o, &src) in argmax.iter().enumerate() {
                    // o indexes the pooled tensor; argmax points into the
                    // input plane of the same (batch, channel).
                    let plane = o / ((h / size) * (w / size));
                    dxs[plane * h * w + src as usize] += ds[o];
                }
                Batch::Spatial(dx)
            }
            (Layer::Relu, Saved::Relu { input }) => match (&delta, input) {
                (Batch::Flat(d), Batch::Flat(x)) => {
                    if d.dim() != x.dim() {
                        return Err(Error::Contract("cached relu input is stale".into()));
                    }
                    let mut dx = d.clone();
                    dx.zip_mut_with(x, |dv, &xv| {
                        if xv <= F::zero() {
                            *dv = F::zero();
                        }
                    });
                    Batch::Flat(dx)
                }
                (Batch::Spatial(d), Batch::Spatial(x)) => {
                    if d.dim() != x.dim() {
                        return Err(Error::Contract("cached relu input is stale".into()));
                    }
                    let mut dx = d.clone();
                    dx.zip_mut_with(x, |dv, &xv| {
                        if xv <= F::zero() {
                            *dv = F::zero();
                        }
                    });
                    Batch::Spatial(dx)
                }
                _ => return Err(Error::Contract("cached relu rank is stale".into())),
            },
            (Layer::Flatten, Saved::Flatten { in_dims }) => {
                let d = delta.into_flat()?;
                let (b, c, h, w) = *in_dims;
                if d.nrows() != b || d.ncols() != c * h * w {
                    return Err(Error::Contract("cached flatten shape is stale".into()));
                }
                let dx = d.into_shape_with_order((b, c, h, w)).expect("standard layout");
                Batch::Spatial(dx)
            }
            (Layer::Gate { .. }, Saved::Gate) => {
                gate_idx -= 1;
                apply_gate(delta, &masks.layers()[gate_idx])
            }
            _ => return Err(Error::Contract("cache does not match network layers: stale".into())),
        };
    }

    tensors_rev.reverse();
    Ok(ParamGrads { tensors: tensors_rev })
}

fn conv_backward<F: Scalar>(
    x: &Array4<F>,
    weight: &Array4<F>,
    d: &Array4<F>,
) -> (Array4<F>, Array1<F>, Array4<F>) {
    let (b, ci, h, w) = x.dim();
    let (co, _, kh, kw) = weight.dim();
    let (ho, wo) = (h - kh + 1, w - kw + 1);

    let mut dw = Array4::<F>::zeros((co, ci, kh, kw));
    let mut db = Array1::<F>::zeros(co);
    let mut dx = Array4::<F>::zeros((b, ci, h, w));

    let xs = x.as_slice().expect("standard layout");
    let ws = weight.as_slice().expect("standard layout");
    let ds = d.as_slice().expect("standard layout");
    let dws = dw.as_slice_mut().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");

    for bi in 0..b {
        for oc in 0..co {
            let ob0 = ((bi * co + oc) * ho) * wo;
            let mut bsum = F::zero();
            ds[ob0..ob0 + ho * wo].iter().for_each(|&v| bsum += v);
            db[oc] += bsum;
            for ic in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((oc * ci + ic) * kh + ky) * kw + kx;
                        let wv = ws[widx];
                        let mut wacc = F::zero();
                        for oy in 0..ho {
                            let ib = ((bi * ci + ic) * h + oy + ky) * w + kx;
                            let ob = ob0 + oy * wo;
                            let dr = &ds[ob..ob + wo];
                            let xr = &xs[ib..ib + wo];
                            // dW accumulates the correlation of delta with
                            // the input window; dx scatters delta back
                            // through the weight.
                            let mut acc = F::zero();
                            for i in 0..wo {
                                acc += dr[i] * xr[i];
                            }
                            wacc += acc;
                            let dxr = &mut dxs[ib..ib + wo];
                            for i in 0..wo {
                                dxr[i] = dxr[i] + wv * dr[i];
                            }
                        }
                        dws[widx] += wacc;
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

// ---------------------------------------------------------------------------
