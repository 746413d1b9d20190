//! Deterministic JSON form of a certificate. Wall-clock timings are kept out
//! so that reruns with the same seed serialize to identical bytes.

use serde::{Deserialize, Serialize};

use crate::certify::{Certificate, CertifyParams, Method};
use crate::model::WeightBox;
use crate::probmass::MassResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub method: Method,
    pub p_safe: f64,
    pub mass: MassResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_estimate: Option<MassResult>,
    pub lbp_calls: u64,
    pub budget_truncated: bool,
    pub seed: u64,
    pub params: CertifyParams,
    /// Largest verified multiplier per processed draw.
    pub iterations: Vec<u32>,
    pub skipped_draws: Vec<usize>,
    pub boxes: Vec<WeightBox>,
}

impl From<&Certificate> for CertificateReport {
    fn from(c: &Certificate) -> Self {
        Self {
            method: c.method,
            p_safe: c.p_safe,
            mass: c.mass.clone(),
            mc_estimate: c.mc_estimate.clone(),
            lbp_calls: c.lbp_calls,
            budget_truncated: c.budget_truncated,
            seed: c.params.seed,
            params: c.params.clone(),
            iterations: c.iterations(),
            skipped_draws: c.draws.iter().filter(|d| d.skipped).map(|d| d.index).collect(),
            boxes: c.boxes.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify_pie;
    use crate::toy;

    #[test]
    fn reports_are_byte_stable() {
        let net = toy::two_weight_chain();
        let spec = toy::two_weight_spec();
        let params = CertifyParams {
            samples: 5,
            seed: 3,
            ..Default::default()
        };
        let a = serde_json::to_string(&CertificateReport::from(&certify_pie(&net, &spec, &params).unwrap())).unwrap();
        let b = serde_json::to_string(&CertificateReport::from(&certify_pie(&net, &spec, &params).unwrap())).unwrap();
        assert_eq!(a, b);
        let back: CertificateReport = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
        assert!(!a.contains("timings"));
    }
}
