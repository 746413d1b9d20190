//! Network, posterior, weight-space box and robustness specification types.
//!
//! Every parameter of a network lives in a single flat index space shared by
//! forward evaluation, gradients, sampling and box construction: layers in
//! order, and within a layer the weights followed by the biases. Dense weights
//! are row-major with the output index outermost (`w[out][in]`); convolution
//! kernels are laid out `[out_ch][in_ch][ky][kx]`. Convolutions use no padding
//! and feature maps are flattened channel-major (`[ch][y][x]`).

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub bayesian: bool,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bayesian: bool,
    pub bias: bool,
}

impl Conv2dSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.in_ch,
            self.out_ch,
            self.in_h,
            self.in_w,
            self.kernel,
            self.stride,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "conv2d dimensions, kernel and stride must be positive".into(),
            ));
        }
        if self.kernel > self.in_h || self.kernel > self.in_w {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel {} larger than input {}x{}",
                self.kernel, self.in_h, self.in_w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense(DenseSpec),
    Conv2d(Conv2dSpec),
    Relu { dim: usize },
}

impl LayerSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            LayerSpec::Dense(d) => d.in_dim,
            LayerSpec::Conv2d(c) => c.in_ch * c.in_h * c.in_w,
            LayerSpec::Relu { dim } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            LayerSpec::Dense(d) => d.out_dim,
            LayerSpec::Conv2d(c) => c.out_ch * c.out_h() * c.out_w(),
            LayerSpec::Relu { dim } => *dim,
        }
    }

    pub fn weight_count(&self) -> usize {
        match self {
            LayerSpec::Dense(d) => d.in_dim * d.out_dim,
            LayerSpec::Conv2d(c) => c.out_ch * c.in_ch * c.kernel * c.kernel,
            LayerSpec::Relu { .. } => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match self {
            LayerSpec::Dense(d) if d.bias => d.out_dim,
            LayerSpec::Conv2d(c) if c.bias => c.out_ch,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn is_bayesian(&self) -> bool {
        match self {
            LayerSpec::Dense(d) => d.bayesian,
            LayerSpec::Conv2d(c) => c.bayesian,
            LayerSpec::Relu { .. } => false,
        }
    }
}

/// A layer placed in the flat parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Index of the layer's first parameter.
    pub offset: usize,
}

impl Layer {
    pub fn is_affine(&self) -> bool {
        !matches!(self.spec, LayerSpec::Relu { .. })
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.spec.param_count()
    }

    /// Calls `f(out, in, param)` for every scalar product term of an affine
    /// layer. Does nothing for ReLU.
    pub fn for_each_term(&self, mut f: impl FnMut(usize, usize, usize)) {
        match &self.spec {
            LayerSpec::Dense(d) => {
                for o in 0..d.out_dim {
                    let row = self.offset + o * d.in_dim;
                    for i in 0..d.in_dim {
                        f(o, i, row + i);
                    }
                }
            }
            LayerSpec::Conv2d(c) => {
                let (oh, ow, k) = (c.out_h(), c.out_w(), c.kernel);
                for oc in 0..c.out_ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let out = (oc * oh + oy) * ow + ox;
                            for ic in 0..c.in_ch {
                                for ky in 0..k {
                                    let iy = oy * c.stride + ky;
                                    for kx in 0..k {
                                        let ix = ox * c.stride + kx;
                                        let inp = (ic * c.in_h + iy) * c.in_w + ix;
                                        let p = self.offset + ((oc * c.in_ch + ic) * k + ky) * k + kx;
                                        f(out, inp, p);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu { .. } => {}
        }
    }

    /// Parameter index of the bias feeding output `out`, if the layer has biases.
    pub fn bias_param(&self, out: usize) -> Option<usize> {
        let base = self.offset + self.spec.weight_count();
        match &self.spec {
            LayerSpec::Dense(d) if d.bias => Some(base + out),
            LayerSpec::Conv2d(c) if c.bias => Some(base + out / (c.out_h() * c.out_w())),
            _ => None,
        }
    }
}

/// Diagonal Gaussian posterior `N(mean, std^2)` over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl PosteriorParams {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(dim_err("posterior std length", mean.len(), std.len()));
        }
        if let Some(d) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(format!("posterior mean[{d}] is not finite")));
        }
        if let Some(d) = std.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "posterior std[{d}] = {} must be finite and non-negative",
                std[d]
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_weights(&self) -> WeightVector {
        WeightVector(self.mean.clone())
    }
}

/// A concrete parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Draws `w ~ N(mean, std^2)` element-wise. Zero-std parameters return the mean exactly.
pub fn sample_weights<R: Rng + ?Sized>(posterior: &PosteriorParams, rng: &mut R) -> WeightVector {
    let values = posterior
        .mean
        .iter()
        .zip(&posterior.std)
        .map(|(&m, &s)| {
            let z: f64 = rng.sample(StandardNormal);
            if s == 0.0 {
                m
            } else {
                m + s * z
            }
        })
        .collect();
    WeightVector(values)
}

/// Axis-aligned orthotope `[lower, upper]` in parameter space. Boxes are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl WeightBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(dim_err("box upper length", lower.len(), upper.len()));
        }
        if let Some(d) = (0..lower.len()).find(|&d| !(lower[d] <= upper[d])) {
            return Err(Error::InvalidArgument(format!(
                "box lower[{d}] = {} exceeds upper[{d}] = {}",
                lower[d], upper[d]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn point(w: &[f64]) -> Self {
        Self {
            lower: w.to_vec(),
            upper: w.to_vec(),
        }
    }

    /// `[w - radius, w + radius]`.
    pub fn from_center(w: &[f64], radius: &[f64]) -> Result<Self> {
        Self::from_center_asymmetric(w, radius, radius)
    }

    /// `[w - below, w + above]`.
    pub fn from_center_asymmetric(w: &[f64], below: &[f64], above: &[f64]) -> Result<Self> {
        if below.len() != w.len() {
            return Err(dim_err("box radius length", w.len(), below.len()));
        }
        if above.len() != w.len() {
            return Err(dim_err("box radius length", w.len(), above.len()));
        }
        if let Some(d) = below
            .iter()
            .chain(above)
            .position(|r| !(r.is_finite() && *r >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "box radius entry {} must be finite and non-negative",
                d % w.len().max(1)
            )));
        }
        let lower = w.iter().zip(below).map(|(c, r)| c - r).collect();
        let upper = w.iter().zip(above).map(|(c, r)| c + r).collect();
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_point(&self, w: &[f64]) -> bool {
        w.len() == self.dim()
            && w
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }

    pub fn contains_box(&self, other: &WeightBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|d| self.lower[d] <= other.lower[d] && other.upper[d] <= self.upper[d])
    }

    /// Intersection of two closed boxes, or `None` if they do not meet.
    pub fn intersect(&self, other: &WeightBox) -> Option<WeightBox> {
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let l = self.lower[d].max(other.lower[d]);
            let u = self.upper[d].min(other.upper[d]);
            if l > u {
                return None;
            }
            lower.push(l);
            upper.push(u);
        }
        Some(WeightBox { lower, upper })
    }

    /// True when the open interiors overlap in every dimension.
    pub fn interiors_overlap(&self, other: &WeightBox) -> bool {
        (0..self.dim()).all(|d| {
            self.lower[d].max(other.lower[d]) < self.upper[d].min(other.upper[d])
        })
    }
}

/// Output half-space `{y : a.y >= b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    /// `a.y - b`; non-negative exactly when `y` satisfies the half-space.
    pub fn margin(&self, y: &[f64]) -> f64 {
        dot(&self.a, y) - self.b
    }
}

/// An l-infinity input ball around `center` and a conjunction of output half-spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub center: Vec<f64>,
    pub epsilon: f64,
    pub halfspaces: Vec<HalfSpace>,
    /// Optional input domain the ball is clipped to, e.g. `[0, 1]` for images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
}

impl RobustnessSpec {
    pub fn new(center: Vec<f64>, epsilon: f64, halfspaces: Vec<HalfSpace>) -> Result<Self> {
        let spec = Self {
            center,
            epsilon,
            halfspaces,
            clip: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_clip(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.clip = Some([lo, hi]);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must be finite and non-negative",
                self.epsilon
            )));
        }
        if self.halfspaces.is_empty() {
            return Err(Error::InvalidArgument("specification has no half-spaces".into()));
        }
        let n = self.halfspaces[0].a.len();
        for (k, h) in self.halfspaces.iter().enumerate() {
            if h.a.len() != n {
                return Err(dim_err(format!("half-space {k} length"), n, h.a.len()));
            }
            if h.a.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidArgument(format!("half-space {k} has a zero normal")));
            }
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo <= hi) {
                return Err(Error::InvalidArgument(format!("clip domain [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.halfspaces[0].a.len()
    }

    /// Checks the specification's input and output dimensions against a network.
    pub fn check_against(&self, net: &Network) -> Result<()> {
        if self.center.len() != net.input_dim() {
            return Err(dim_err("specification input", net.input_dim(), self.center.len()));
        }
        if self.output_dim() != net.output_dim() {
            return Err(dim_err("specification output", net.output_dim(), self.output_dim()));
        }
        Ok(())
    }
}

/// Robustness of class `label` against each target class: one half-space
/// `y_label - y_target >= 0` per target.
pub fn make_classification_spec(
    x: Vec<f64>,
    epsilon: f64,
    label: usize,
    targets: &[usize],
    num_classes: usize,
) -> Result<RobustnessSpec> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("target class list is empty".into()));
    }
    if label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside {num_classes} classes"
        )));
    }
    let mut halfspaces = Vec::with_capacity(targets.len());
    for &t in targets {
        if t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "target {t} outside {num_classes} classes"
            )));
        }
        if t == label {
            return Err(Error::InvalidArgument(format!("target {t} equals the label")));
        }
        let mut a = vec![0.0; num_classes];
        a[label] = 1.0;
        a[t] = -1.0;
        halfspaces.push(HalfSpace { a, b: 0.0 });
    }
    RobustnessSpec::new(x, epsilon, halfspaces)
}

/// Every class other than `label`.
pub fn all_other_classes(label: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes).filter(|&c| c != label).collect()
}

/// A layered network together with its posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    posterior: PosteriorParams,
}

impl Network {
    pub fn new(specs: Vec<LayerSpec>, posterior: PosteriorParams) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (k, spec) in specs.into_iter().enumerate() {
            match &spec {
                LayerSpec::Dense(d) if d.in_dim == 0 || d.out_dim == 0 => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {k}: dense dimensions must be positive"
                    )));
                }
                LayerSpec::Conv2d(c) => c.validate()?,
                LayerSpec::Relu { dim: 0 } => {
                    return Err(Error::InvalidArgument(format!("layer {k}: relu of width 0")));
                }
                _ => {}
            }
            if let Some(prev) = layers.last().map(|l: &Layer| l.spec) {
                if prev.output_dim() != spec.input_dim() {
                    return Err(dim_err(
                        format!("layer {k} input"),
                        prev.output_dim(),
                        spec.input_dim(),
                    ));
                }
            }
            let n = spec.param_count();
            layers.push(Layer { spec, offset });
            offset += n;
        }
        if posterior.len() != offset {
            return Err(dim_err("posterior length", offset, posterior.len()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if !layer.spec.is_bayesian()
                && posterior.std[layer.param_range()].iter().any(|&s| s != 0.0)
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} is deterministic but has non-zero std"
                )));
            }
        }
        Ok(Self { layers, posterior })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn posterior(&self) -> &PosteriorParams {
        &self.posterior
    }

    /// Total parameter count `n_w`.
    pub fn num_params(&self) -> usize {
        self.posterior.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub(crate) fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(dim_err("weight vector", self.num_params(), w.len()));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(dim_err("input vector", self.input_dim(), x.len()));
        }
        Ok(())
    }
}

/// Evaluates `f_w(x)`.
pub fn forward(net: &Network, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    net.check_weights(w)?;
    net.check_input(x)?;
    let mut acts = forward_trace(net, w, x);
    Ok(acts.pop().expect("trace holds the input"))
}

/// Activations before every layer plus the final output: `acts[0] = x`,
/// `acts[k + 1]` is the output of layer `k`. Shapes must already be checked.
pub(crate) fn forward_trace(net: &Network, w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    acts.push(x.to_vec());
    for layer in &net.layers {
        let input = acts.last().expect("non-empty");
        let out = match layer.spec {
            LayerSpec::Relu { .. } => input.iter().map(|&v| v.max(0.0)).collect(),
            _ => affine_forward(layer, w, input),
        };
        acts.push(out);
    }
    acts
}

fn affine_forward(layer: &Layer, w: &[f64], input: &[f64]) -> Vec<f64> {
    let n_out = layer.spec.output_dim();
    let mut out: Vec<f64> = (0..n_out)
        .map(|o| layer.bias_param(o).map_or(0.0, |p| w[p]))
        .collect();
    layer.for_each_term(|o, i, p| out[o] += w[p] * input[i]);
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest entry (first on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
