//! Small reference networks used by tests, the acceptance suite and the CLI fixtures.

use rand::Rng;

use crate::model::{DenseSpec, HalfSpace, LayerSpec, Network, PosteriorParams, RobustnessSpec};

/// `f(x) = ReLU(w2 * ReLU(w1 * x))` with `w1, w2 ~ N(0, 1)` and no biases.
pub fn two_weight_chain() -> Network {
    let dense = LayerSpec::Dense(DenseSpec {
        in_dim: 1,
        out_dim: 1,
        bayesian: true,
        bias: false,
    });
    let relu = LayerSpec::Relu { dim: 1 };
    Network::new(
        vec![dense, relu, dense, relu],
        PosteriorParams::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("valid posterior"),
    )
    .expect("valid network")
}

/// Input `X = {1}` and output constraint `y <= 1`, encoded as `-y >= -1`.
pub fn two_weight_spec() -> RobustnessSpec {
    RobustnessSpec::new(vec![1.0], 0.0, vec![HalfSpace { a: vec![-1.0], b: -1.0 }])
        .expect("valid spec")
}

/// Fully connected ReLU network with Bayesian layers. `dims` lists layer
/// widths from input to output; there is no activation after the last layer.
/// Means are `U(-1, 1) * sqrt(2 / fan_in)`; stds are `sigma * U(0.5, 1.5)`.
pub fn random_dense_net<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], sigma: f64) -> Network {
    assert!(dims.len() >= 2, "need input and output widths");
    let mut specs = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (k, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        specs.push(LayerSpec::Dense(DenseSpec {
            in_dim: fan_in,
            out_dim: fan_out,
            bayesian: true,
            bias: true,
        }));
        let scale = (2.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out + fan_out {
            mean.push(rng.random_range(-1.0..1.0) * scale);
            std.push(sigma * rng.random_range(0.5..1.5));
        }
        if k + 2 < dims.len() {
            specs.push(LayerSpec::Relu { dim: fan_out });
        }
    }
    Network::new(specs, PosteriorParams::new(mean, std).expect("valid posterior"))
        .expect("valid network")
}
