//! Sound output bounds for a network whose weights range over a [`WeightBox`]
//! and whose input ranges over a box.
//!
//! Two modes share one interface:
//!
//! - **IBP**: interval arithmetic. Each scalar product `w * h` with both factors
//!   interval-valued takes the min and max over the four endpoint products.
//! - **LBP**: affine lower/upper bounds in the input variables, carried layer
//!   by layer. Interval weights are resolved against the sign of the incoming
//!   activation interval, ReLU uses the triangle relaxation, and every layer's
//!   concrete bounds are intersected with the interval bounds so LBP is never
//!   looser than IBP.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::model::{Layer, LayerSpec, Network, RobustnessSpec, WeightBox};

/// Element-wise interval `[lower, upper]` over a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundBox {
    pub fn point(x: &[f64]) -> Self {
        Self {
            lower: x.to_vec(),
            upper: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.dim()
            && y
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// True when `self` lies inside `outer` element-wise.
    pub fn is_within(&self, outer: &BoundBox) -> bool {
        (0..self.dim()).all(|i| outer.lower[i] <= self.lower[i] && self.upper[i] <= outer.upper[i])
    }

    /// Lower bound of `a.y` over the box.
    pub fn linear_lower(&self, a: &[f64]) -> f64 {
        a.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&c, (&l, &u))| if c >= 0.0 { c * l } else { c * u })
            .sum()
    }
}

/// Input box of a specification: `[x - eps, x + eps]`, clipped to the
/// specification's input domain when one is declared.
pub fn input_box(spec: &RobustnessSpec) -> BoundBox {
    let (lo, hi) = match spec.clip {
        Some([lo, hi]) => (lo, hi),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    BoundBox {
        lower: spec.center.iter().map(|x| (x - spec.epsilon).clamp(lo, hi)).collect(),
        upper: spec.center.iter().map(|x| (x + spec.epsilon).clamp(lo, hi)).collect(),
    }
}

/// Exact range of the product of two intervals.
#[inline]
pub fn interval_mul(al: f64, au: f64, bl: f64, bu: f64) -> (f64, f64) {
    if al == au && bl == bu {
        let p = al * bl;
        return (p, p);
    }
    let c = [al * bl, al * bu, au * bl, au * bu];
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn ibp_affine(layer: &Layer, wbox: &WeightBox, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n_out = layer.spec.output_dim();
    let mut lo = vec![0.0; n_out];
    let mut hi = vec![0.0; n_out];
    for o in 0..n_out {
        if let Some(p) = layer.bias_param(o) {
            lo[o] = wbox.lower[p];
            hi[o] = wbox.upper[p];
        }
    }
    layer.for_each_term(|o, i, p| {
        let (l, u) = interval_mul(wbox.lower[p], wbox.upper[p], lower[i], upper[i]);
        lo[o] += l;
        hi[o] += u;
    });
    (lo, hi)
}

/// Interval bound propagation.
pub fn ibp_bounds(net: &Network, wbox: &WeightBox, ibox: &BoundBox) -> BoundBox {
    let mut lower = ibox.lower.clone();
    let mut upper = ibox.upper.clone();
    for layer in net.layers() {
        match layer.spec {
            LayerSpec::Relu { .. } => {
                lower.iter_mut().for_each(|v| *v = v.max(0.0));
                upper.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            _ => {
                let (l, u) = ibp_affine(layer, wbox, &lower, &upper);
                lower = l;
                upper = u;
            }
        }
    }
    BoundBox { lower, upper }
}

/// Affine bounds `row[..n] . x + row[n]` for every neuron of a layer.
enum Symbolic {
    /// The layer input is the network input itself.
    Identity,
    Rows { lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>> },
}

fn concretize(row: &[f64], ibox: &BoundBox, lower: bool) -> f64 {
    let n = ibox.dim();
    let mut acc = row[n];
    for i in 0..n {
        let c = row[i];
        if c == 0.0 {
            continue;
        }
        acc += if (c > 0.0) == lower { c * ibox.lower[i] } else { c * ibox.upper[i] };
    }
    acc
}

#[inline]
fn axpy(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Linear coefficient and constant offset bounding `w * h` from below (or
/// above) for `w in [wl, wu]`, using only the concrete range `[hl, hu]` of `h`.
#[inline]
fn product_relaxation(wl: f64, wu: f64, hl: f64, hu: f64, lower: bool) -> (f64, f64) {
    let spread = wu - wl;
    match (hl >= 0.0, hu <= 0.0, lower) {
        (true, _, true) => (wl, 0.0),
        (true, _, false) => (wu, 0.0),
        (_, true, true) => (wu, 0.0),
        (_, true, false) => (wl, 0.0),
        // h straddles zero: McCormick with the cheaper anchor.
        (false, false, true) => {
            if -hl <= hu {
                (wl, spread * hl)
            } else {
                (wu, -spread * hu)
            }
        }
        (false, false, false) => {
            if -hl <= hu {
                (wu, -spread * hl)
            } else {
                (wl, spread * hu)
            }
        }
    }
}

/// Linear bound propagation.
pub fn lbp_bounds(net: &Network, wbox: &WeightBox, ibox: &BoundBox) -> BoundBox {
    let n = ibox.dim();
    let mut sym = Symbolic::Identity;
    let mut lower = ibox.lower.clone();
    let mut upper = ibox.upper.clone();
    for layer in net.layers() {
        match layer.spec {
            LayerSpec::Relu { .. } => {
                let (mut lrows, mut urows) = match sym {
                    Symbolic::Identity => identity_rows(n),
                    Symbolic::Rows { lower, upper } => (lower, upper),
                };
                for k in 0..lower.len() {
                    let (l, u) = (lower[k], upper[k]);
                    if u <= 0.0 {
                        lrows[k].iter_mut().for_each(|v| *v = 0.0);
                        urows[k].iter_mut().for_each(|v| *v = 0.0);
                        lower[k] = 0.0;
                        upper[k] = 0.0;
                    } else if l < 0.0 {
                        let slope = u / (u - l);
                        urows[k].iter_mut().for_each(|v| *v *= slope);
                        urows[k][n] -= slope * l;
                        if u < -l {
                            lrows[k].iter_mut().for_each(|v| *v = 0.0);
                        }
                        lower[k] = 0.0;
                    }
                }
                sym = Symbolic::Rows { lower: lrows, upper: urows };
            }
            _ => {
                let n_out = layer.spec.output_dim();
                let mut lrows = vec![vec![0.0; n + 1]; n_out];
                let mut urows = vec![vec![0.0; n + 1]; n_out];
                for o in 0..n_out {
                    if let Some(p) = layer.bias_param(o) {
                        lrows[o][n] = wbox.lower[p];
                        urows[o][n] = wbox.upper[p];
                    }
                }
                layer.for_each_term(|o, i, p| {
                    let (wl, wu) = (wbox.lower[p], wbox.upper[p]);
                    let (hl, hu) = (lower[i], upper[i]);
                    let (cl, off_l) = product_relaxation(wl, wu, hl, hu, true);
                    let (cu, off_u) = product_relaxation(wl, wu, hl, hu, false);
                    lrows[o][n] += off_l;
                    urows[o][n] += off_u;
                    match &sym {
                        Symbolic::Identity => {
                            lrows[o][i] += cl;
                            urows[o][i] += cu;
                        }
                        Symbolic::Rows { lower: li, upper: ui } => {
                            if cl != 0.0 {
                                axpy(&mut lrows[o], cl, if cl > 0.0 { &li[i] } else { &ui[i] });
                            }
                            if cu != 0.0 {
                                axpy(&mut urows[o], cu, if cu > 0.0 { &ui[i] } else { &li[i] });
                            }
                        }
                    }
                });
                let (ibp_lo, ibp_hi) = ibp_affine(layer, wbox, &lower, &upper);
                lower = (0..n_out)
                    .map(|o| concretize(&lrows[o], ibox, true).max(ibp_lo[o]))
                    .collect();
                upper = (0..n_out)
                    .map(|o| concretize(&urows[o], ibox, false).min(ibp_hi[o]))
                    .collect();
                sym = Symbolic::Rows { lower: lrows, upper: urows };
            }
        }
    }
    BoundBox { lower, upper }
}

fn identity_rows(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![0.0; n + 1];
            r[i] = 1.0;
            r
        })
        .collect();
    (rows.clone(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierMode {
    #[default]
    Ibp,
    Lbp,
}

impl std::str::FromStr for VerifierMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ibp" => Ok(Self::Ibp),
            "lbp" => Ok(Self::Lbp),
            other => Err(format!("unknown verifier '{other}' (expected ibp or lbp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Safe,
    Unknown,
}

/// Bound-propagation verifier with a monotone, thread-safe call counter.
#[derive(Debug, Default)]
pub struct Verifier {
    mode: VerifierMode,
    calls: AtomicU64,
}

impl Verifier {
    pub fn new(mode: VerifierMode) -> Self {
        Self {
            mode,
            calls: AtomicU64::new(0),
        }
    }

    pub fn mode(&self) -> VerifierMode {
        self.mode
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn bounds(&self, net: &Network, wbox: &WeightBox, ibox: &BoundBox) -> BoundBox {
        match self.mode {
            VerifierMode::Ibp => ibp_bounds(net, wbox, ibox),
            VerifierMode::Lbp => lbp_bounds(net, wbox, ibox),
        }
    }

    /// `Safe` iff every half-space's lower bound over the propagated output box
    /// meets its threshold. Counts as exactly one call.
    pub fn verify_box(&self, net: &Network, wbox: &WeightBox, spec: &RobustnessSpec) -> Verdict {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let out = self.bounds(net, wbox, &input_box(spec));
        let safe = spec
            .halfspaces
            .iter()
            .all(|h| out.linear_lower(&h.a) >= h.b);
        if safe {
            Verdict::Safe
        } else {
            Verdict::Unknown
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, HalfSpace};
    use crate::toy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(r: f64) -> WeightBox {
        WeightBox::new(vec![-r, -r], vec![r, r]).unwrap()
    }

    #[test]
    fn input_box_cases() {
        let s = RobustnessSpec::new(vec![0.5], 0.0, vec![HalfSpace { a: vec![1.0], b: 0.0 }]).unwrap();
        assert_eq!(input_box(&s), BoundBox::point(&[0.5]));
        let s = RobustnessSpec::new(vec![0.2, 0.8], 0.1, vec![HalfSpace { a: vec![1.0], b: 0.0 }])
            .unwrap()
            .with_clip(0.0, 1.0)
            .unwrap();
        let b = input_box(&s);
        for (got, want) in b.lower.iter().zip([0.1, 0.7]).chain(b.upper.iter().zip([0.3, 0.9])) {
            assert!((got - want).abs() < 1e-15);
        }
        let s = RobustnessSpec::new(vec![0.05], 0.1, vec![HalfSpace { a: vec![1.0], b: 0.0 }])
            .unwrap()
            .with_clip(0.0, 1.0)
            .unwrap();
        assert_eq!(input_box(&s).lower, vec![0.0]);
        assert_eq!(input_box(&toy::two_weight_spec()), BoundBox::point(&[1.0]));
    }

    #[test]
    fn two_weight_chain_intervals() {
        let net = toy::two_weight_chain();
        let x = BoundBox::point(&[1.0]);
        let b1 = ibp_bounds(&net, &square(1.0), &x);
        assert_eq!((b1.lower[0], b1.upper[0]), (0.0, 1.0));
        let b2 = ibp_bounds(&net, &square(2.0), &x);
        assert_eq!(b2.upper[0], 4.0);
        let l1 = lbp_bounds(&net, &square(1.0), &x);
        assert!(l1.is_within(&b1));
        let b3 = ibp_bounds(&net, &square(1.5), &x);
        assert_eq!(b3.upper[0], 2.25);
    }

    #[test]
    fn two_weight_chain_enclosure_by_sampling() {
        let net = toy::two_weight_chain();
        let x = BoundBox::point(&[1.0]);
        let b = ibp_bounds(&net, &square(1.0), &x);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1_000_000 {
            let w = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let y = forward(&net, &w, &[1.0]).unwrap();
            assert!(b.contains(&y));
        }
    }

    #[test]
    fn verdicts_on_two_weight_chain() {
        let net = toy::two_weight_chain();
        let spec = toy::two_weight_spec();
        for mode in [VerifierMode::Ibp, VerifierMode::Lbp] {
            let v = Verifier::new(mode);
            assert_eq!(v.verify_box(&net, &square(1.0), &spec), Verdict::Safe);
            assert_eq!(v.verify_box(&net, &square(2.0), &spec), Verdict::Unknown);
            assert_eq!(v.verify_box(&net, &WeightBox::point(&[2.0, 2.0]), &spec), Verdict::Unknown);
            assert_eq!(v.calls(), 3);
        }
    }

    #[test]
    fn one_call_per_verification_regardless_of_halfspaces() {
        let net = toy::random_dense_net(&mut ChaCha8Rng::seed_from_u64(3), &[3, 6, 4], 0.05);
        let spec = crate::model::make_classification_spec(vec![0.1; 3], 0.01, 0, &[1, 2, 3], 4).unwrap();
        let v = Verifier::new(VerifierMode::Lbp);
        v.verify_box(&net, &WeightBox::point(net.posterior().mean()), &spec);
        assert_eq!(v.calls(), 1);
    }

    #[test]
    fn degenerate_boxes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let net = toy::random_dense_net(&mut rng, &[4, 8, 8, 3], 0.1);
            let w = crate::model::sample_weights(net.posterior(), &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = forward(&net, &w, &x).unwrap();
            let wb = WeightBox::point(&w);
            let xb = BoundBox::point(&x);
            for b in [ibp_bounds(&net, &wb, &xb), lbp_bounds(&net, &wb, &xb)] {
                for k in 0..3 {
                    assert!((b.lower[k] - y[k]).abs() < 1e-12 && (b.upper[k] - y[k]).abs() < 1e-12);
                }
            }
            assert_eq!(ibp_bounds(&net, &wb, &xb), BoundBox::point(&y));
        }
    }

    #[test]
    fn interval_product_is_exact() {
        assert_eq!(interval_mul(-1.0, 2.0, -3.0, 4.0), (-6.0, 8.0));
        assert_eq!(interval_mul(1.0, 2.0, 3.0, 4.0), (3.0, 8.0));
        assert_eq!(interval_mul(-2.0, -1.0, 3.0, 4.0), (-8.0, -3.0));
    }

    #[test]
    fn relaxation_is_sound_on_a_grid() {
        for &(wl, wu, hl, hu) in &[(-1.0, 2.0, -3.0, 1.0), (0.5, 1.5, -0.1, 4.0), (-2.0, -1.0, -1.0, 1.0), (1.0, 1.0, -2.0, 2.0)] {
            let (cl, ol) = product_relaxation(wl, wu, hl, hu, true);
            let (cu, ou) = product_relaxation(wl, wu, hl, hu, false);
            for a in 0..=20 {
                for b in 0..=20 {
                    let w = wl + (wu - wl) * a as f64 / 20.0;
                    let h = hl + (hu - hl) * b as f64 / 20.0;
                    assert!(cl * h + ol <= w * h + 1e-12);
                    assert!(w * h <= cu * h + ou + 1e-12);
                }
            }
        }
    }
}
