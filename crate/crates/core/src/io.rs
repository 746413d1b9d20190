//! JSON interchange format for networks and their posteriors.
//!
//! ```json
//! {"layers": [
//!   {"type": "dense", "in": 2, "out": 3, "bayesian": true,
//!    "w_mean": [[..], ..], "w_std": [[..], ..], "b_mean": [..], "b_std": [..]},
//!   {"type": "relu"},
//!   {"type": "conv2d", "in_ch": 1, "out_ch": 4, "in_h": 8, "in_w": 8,
//!    "kernel": 3, "stride": 2, "bayesian": false, "w_mean": [[[[..]]]], "b_mean": [..]}
//! ]}
//! ```
//!
//! Std arrays may be omitted for deterministic layers. A layer without
//! `b_mean` has no bias parameters. A leading `relu` needs an explicit `dim`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conv2dSpec, DenseSpec, LayerSpec, Network, PosteriorParams};

type Mat = Vec<Vec<f64>>;
type Tensor4 = Vec<Vec<Vec<Vec<f64>>>>;

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LayerEntry {
    Dense {
        #[serde(rename = "in")]
        in_dim: usize,
        #[serde(rename = "out")]
        out_dim: usize,
        #[serde(default)]
        bayesian: bool,
        w_mean: Mat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_std: Option<Mat>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_std: Option<Vec<f64>>,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        bayesian: bool,
        w_mean: Tensor4,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_std: Option<Tensor4>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_std: Option<Vec<f64>>,
    },
    Relu {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    parse_network(&text)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, network_to_json(net)?)?;
    Ok(())
}

pub fn parse_network(text: &str) -> Result<Network> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let mut specs = Vec::with_capacity(file.layers.len());
    let mut mean = Vec::new();
    let mut std = Vec::new();
    let mut width: Option<usize> = None;
    for (k, entry) in file.layers.into_iter().enumerate() {
        let spec = match entry {
            LayerEntry::Dense { in_dim, out_dim, bayesian, w_mean, w_std, b_mean, b_std } => {
                flatten_mat(k, "w_mean", &w_mean, out_dim, in_dim, &mut mean)?;
                match &w_std {
                    Some(s) => flatten_mat(k, "w_std", s, out_dim, in_dim, &mut std)?,
                    None => zero_std(k, bayesian, out_dim * in_dim, &mut std)?,
                }
                let bias = push_bias(k, b_mean, b_std, out_dim, &mut mean, &mut std)?;
                LayerSpec::Dense(DenseSpec { in_dim, out_dim, bayesian, bias })
            }
            LayerEntry::Conv2d { in_ch, out_ch, in_h, in_w, kernel, stride, bayesian, w_mean, w_std, b_mean, b_std } => {
                let n = out_ch * in_ch * kernel * kernel;
                flatten_t4(k, "w_mean", &w_mean, [out_ch, in_ch, kernel, kernel], &mut mean)?;
                match &w_std {
                    Some(s) => flatten_t4(k, "w_std", s, [out_ch, in_ch, kernel, kernel], &mut std)?,
                    None => zero_std(k, bayesian, n, &mut std)?,
                }
                let bias = push_bias(k, b_mean, b_std, out_ch, &mut mean, &mut std)?;
                LayerSpec::Conv2d(Conv2dSpec { in_ch, out_ch, in_h, in_w, kernel, stride, bayesian, bias })
            }
            LayerEntry::Relu { dim } => {
                let dim = match (dim, width) {
                    (Some(d), _) => d,
                    (None, Some(w)) => w,
                    (None, None) => {
                        return Err(Error::Format(format!(
                            "layer {k}: leading relu needs an explicit \"dim\""
                        )))
                    }
                };
                LayerSpec::Relu { dim }
            }
        };
        if let LayerSpec::Conv2d(c) = &spec {
            if c.kernel == 0 || c.stride == 0 || c.kernel > c.in_h || c.kernel > c.in_w {
                return Err(Error::Format(format!("layer {k}: invalid conv2d geometry")));
            }
        }
        width = Some(spec.output_dim());
        specs.push(spec);
    }
    let posterior = PosteriorParams::new(mean, std).map_err(|e| Error::Format(e.to_string()))?;
    Network::new(specs, posterior).map_err(|e| Error::Format(e.to_string()))
}

pub fn network_to_json(net: &Network) -> Result<String> {
    let mean = net.posterior().mean();
    let std = net.posterior().std();
    let mut layers = Vec::with_capacity(net.layers().len());
    for (k, layer) in net.layers().iter().enumerate() {
        let o = layer.offset;
        let nw = layer.spec.weight_count();
        let nb = layer.spec.bias_count();
        let weights = o..o + nw;
        let biases = o + nw..o + nw + nb;
        let entry = match layer.spec {
            LayerSpec::Dense(d) => LayerEntry::Dense {
                in_dim: d.in_dim,
                out_dim: d.out_dim,
                bayesian: d.bayesian,
                w_mean: to_mat(&mean[weights.clone()], d.in_dim),
                w_std: d.bayesian.then(|| to_mat(&std[weights], d.in_dim)),
                b_mean: d.bias.then(|| mean[biases.clone()].to_vec()),
                b_std: (d.bias && d.bayesian).then(|| std[biases].to_vec()),
            },
            LayerSpec::Conv2d(c) => {
                let shape = [c.out_ch, c.in_ch, c.kernel, c.kernel];
                LayerEntry::Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    in_h: c.in_h,
                    in_w: c.in_w,
                    kernel: c.kernel,
                    stride: c.stride,
                    bayesian: c.bayesian,
                    w_mean: to_t4(&mean[weights.clone()], shape),
                    w_std: c.bayesian.then(|| to_t4(&std[weights], shape)),
                    b_mean: c.bias.then(|| mean[biases.clone()].to_vec()),
                    b_std: (c.bias && c.bayesian).then(|| std[biases].to_vec()),
                }
            }
            LayerSpec::Relu { dim } => LayerEntry::Relu {
                dim: (k == 0).then_some(dim),
            },
        };
        layers.push(entry);
    }
    Ok(serde_json::to_string(&NetworkFile { layers })?)
}

fn flatten_mat(k: usize, name: &str, m: &Mat, rows: usize, cols: usize, out: &mut Vec<f64>) -> Result<()> {
    if m.len() != rows {
        return Err(Error::Format(format!(
            "layer {k}: {name} has {} rows, expected {rows}",
            m.len()
        )));
    }
    for (r, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Format(format!(
                "layer {k}: {name} row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(())
}

fn flatten_t4(k: usize, name: &str, t: &Tensor4, shape: [usize; 4], out: &mut Vec<f64>) -> Result<()> {
    let bad = |depth: usize, got: usize| {
        Error::Format(format!(
            "layer {k}: {name} axis {depth} has length {got}, expected {}",
            shape[depth]
        ))
    };
    if t.len() != shape[0] {
        return Err(bad(0, t.len()));
    }
    for a in t {
        if a.len() != shape[1] {
            return Err(bad(1, a.len()));
        }
        for b in a {
            if b.len() != shape[2] {
                return Err(bad(2, b.len()));
            }
            for c in b {
                if c.len() != shape[3] {
                    return Err(bad(3, c.len()));
                }
                out.extend_from_slice(c);
            }
        }
    }
    Ok(())
}

fn zero_std(k: usize, bayesian: bool, n: usize, std: &mut Vec<f64>) -> Result<()> {
    if bayesian {
        return Err(Error::Format(format!("layer {k}: bayesian layer is missing w_std")));
    }
    std.extend(std::iter::repeat_n(0.0, n));
    Ok(())
}

fn push_bias(
    k: usize,
    b_mean: Option<Vec<f64>>,
    b_std: Option<Vec<f64>>,
    n: usize,
    mean: &mut Vec<f64>,
    std: &mut Vec<f64>,
) -> Result<bool> {
    let Some(b) = b_mean else {
        if b_std.is_some() {
            return Err(Error::Format(format!("layer {k}: b_std given without b_mean")));
        }
        return Ok(false);
    };
    if b.len() != n {
        return Err(Error::Format(format!(
            "layer {k}: b_mean has {} entries, expected {n}",
            b.len()
        )));
    }
    mean.extend_from_slice(&b);
    match b_std {
        Some(s) if s.len() != n => Err(Error::Format(format!(
            "layer {k}: b_std has {} entries, expected {n}",
            s.len()
        ))),
        Some(s) => {
            std.extend_from_slice(&s);
            Ok(true)
        }
        None => {
            std.extend(std::iter::repeat_n(0.0, n));
            Ok(true)
        }
    }
}

fn to_mat(flat: &[f64], cols: usize) -> Mat {
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn to_t4(flat: &[f64], shape: [usize; 4]) -> Tensor4 {
    let [_, b, c, d] = shape;
    flat.chunks(b * c * d)
        .map(|x| x.chunks(c * d).map(|y| y.chunks(d).map(<[f64]>::to_vec).collect()).collect())
        .collect()
}
