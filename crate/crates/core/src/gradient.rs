//! Reverse-mode gradients and the sign partition that steers gradient-guided expansion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, forward_trace, LayerSpec, Network, RobustnessSpec};

/// Gradient entries with magnitude at or below this are treated as exactly zero.
pub const ZERO_TOLERANCE: f64 = 1e-12;

/// Gradients of a scalar loss with respect to weights and input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub input: Vec<f64>,
}

/// Back-propagates `d loss / d output` through the network evaluated at
/// `(w, x)`. ReLU uses the subgradient 0 at 0.
pub fn backprop(net: &Network, w: &[f64], x: &[f64], grad_out: &[f64]) -> Result<Gradients> {
    net.check_weights(w)?;
    net.check_input(x)?;
    if grad_out.len() != net.output_dim() {
        return Err(crate::error::dim_err("output gradient", net.output_dim(), grad_out.len()));
    }
    let acts = forward_trace(net, w, x);
    let mut gw = vec![0.0; net.num_params()];
    let mut g = grad_out.to_vec();
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let input = &acts[k];
        match layer.spec {
            LayerSpec::Relu { .. } => {
                for (gi, &z) in g.iter_mut().zip(input) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            _ => {
                let mut g_in = vec![0.0; input.len()];
                for (o, &go) in g.iter().enumerate() {
                    if let Some(p) = layer.bias_param(o) {
                        gw[p] += go;
                    }
                }
                layer.for_each_term(|o, i, p| {
                    gw[p] += input[i] * g[o];
                    g_in[i] += w[p] * g[o];
                });
                g = g_in;
            }
        }
    }
    Ok(Gradients { weights: gw, input: g })
}

/// `d (a . f_w(x)) / d w`.
pub fn grad_margin(net: &Network, w: &[f64], x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    Ok(backprop(net, w, x, a)?.weights)
}

/// Index of the half-space with the smallest margin `a . f_w(x) - b` at the
/// specification's center; the binding constraint for gradient guidance.
pub fn binding_halfspace(net: &Network, w: &[f64], spec: &RobustnessSpec) -> Result<usize> {
    let y = crate::model::forward(net, w, &spec.center)?;
    let mut best = 0;
    let mut best_margin = f64::INFINITY;
    for (k, h) in spec.halfspaces.iter().enumerate() {
        let m = dot(&h.a, &y) - h.b;
        if m < best_margin {
            best_margin = m;
            best = k;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradSign {
    Negative,
    Zero,
    Positive,
}

/// Disjoint partition of parameter indices by gradient sign.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DimPartition {
    pub neg: Vec<usize>,
    pub pos: Vec<usize>,
    pub zero: Vec<usize>,
}

impl DimPartition {
    pub fn len(&self) -> usize {
        self.neg.len() + self.pos.len() + self.zero.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-dimension sign labels.
    pub fn signs(&self) -> Vec<GradSign> {
        let mut out = vec![GradSign::Zero; self.len()];
        for &d in &self.neg {
            out[d] = GradSign::Negative;
        }
        for &d in &self.pos {
            out[d] = GradSign::Positive;
        }
        out
    }
}

pub fn partition_dims(grad: &[f64]) -> DimPartition {
    partition_dims_with_tolerance(grad, ZERO_TOLERANCE)
}

pub fn partition_dims_with_tolerance(grad: &[f64], tol: f64) -> DimPartition {
    let mut part = DimPartition::default();
    for (d, &g) in grad.iter().enumerate() {
        if g.abs() <= tol {
            part.zero.push(d);
        } else if g > 0.0 {
            part.pos.push(d);
        } else {
            part.neg.push(d);
        }
    }
    part
}

/// Per-dimension expansion steps below (`minus`) and above (`plus`) the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionVectors {
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
}

impl ExpansionVectors {
    /// Uniform steps `lambda * sigma` on both sides.
    pub fn uniform(sigma: &[f64], lambda: f64) -> Self {
        let v: Vec<f64> = sigma.iter().map(|s| lambda * s).collect();
        Self {
            minus: v.clone(),
            plus: v,
        }
    }
}

/// `v+ = lambda sigma (1 + rho [d in pos or zero])`,
/// `v- = lambda sigma (1 + rho [d in neg or zero])`.
pub fn expansion_vectors(
    sigma: &[f64],
    lambda: f64,
    rho: f64,
    part: &DimPartition,
) -> Result<ExpansionVectors> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be positive")));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho {rho} must be non-negative")));
    }
    if part.len() != sigma.len() {
        return Err(crate::error::dim_err("partition size", sigma.len(), part.len()));
    }
    let signs = part.signs();
    let mut minus = Vec::with_capacity(sigma.len());
    let mut plus = Vec::with_capacity(sigma.len());
    for (s, sign) in sigma.iter().zip(signs) {
        let base = lambda * s;
        let boosted = base * (1.0 + rho);
        let (lo, hi) = match sign {
            GradSign::Negative => (boosted, base),
            GradSign::Positive => (base, boosted),
            GradSign::Zero => (boosted, boosted),
        };
        minus.push(lo);
        plus.push(hi);
    }
    Ok(ExpansionVectors { minus, plus })
}
