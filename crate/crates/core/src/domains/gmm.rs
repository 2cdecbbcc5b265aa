//! Two-dimensional Gaussian-mixture concept world with a closed-form
//! conditional denoiser.
//!
//! Under the forward process `x_t = sqrt(ab)*x0 + sqrt(1-ab)*eps`, each
//! isotropic component `N(mu_k, var_k I)` diffuses to
//! `N(sqrt(ab)*mu_k, (ab*var_k + 1 - ab) I)`, so the posterior mean of the
//! clean sample — and from it the exact noise prediction — is available in
//! closed form. This is the verification oracle the sampler and blending
//! tests are anchored to.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Variance floor guarding the sigma^2 -> 0 limit.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct GmmComponent {
    pub mean: [f64; 2],
    /// Isotropic variance (sigma^2).
    pub variance: f64,
}

/// Which prior the conditional oracle is restricted to.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    Concept(&'a str),
    /// The unrestricted mixture.
    All,
}

#[derive(Clone, Debug)]
pub struct GmmDomain {
    components: Vec<GmmComponent>,
    weights: Vec<f64>,
    concept_map: BTreeMap<String, Vec<usize>>,
}

impl GmmDomain {
    pub fn new(
        components: Vec<GmmComponent>,
        weights: Vec<f64>,
        concept_map: BTreeMap<String, Vec<usize>>,
    ) -> Result<GmmDomain> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::Config(format!(
                "component/weight count mismatch: {} vs {}",
                components.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights must sum to 1, got {total}")));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("negative mixture weight".into()));
        }
        let components: Vec<GmmComponent> = components
            .into_iter()
            .map(|c| GmmComponent {
                mean: c.mean,
                variance: c.variance.max(VARIANCE_FLOOR),
            })
            .collect();
        for (concept, idxs) in &concept_map {
            if idxs.is_empty() {
                return Err(Error::Config(format!("concept {concept} maps to no components")));
            }
            if idxs.iter().any(|&i| i >= components.len()) {
                return Err(Error::Config(format!(
                    "concept {concept} references an out-of-range component"
                )));
            }
        }
        Ok(GmmDomain { components, weights, concept_map })
    }

    /// The default experiment world: three well-separated isotropic
    /// components at (-4,0), (4,0) and (0,4) with variance 0.25, one per
    /// concept "A", "B", "C".
    pub fn default_world() -> GmmDomain {
        let components = vec![
            GmmComponent { mean: [-4.0, 0.0], variance: 0.25 },
            GmmComponent { mean: [4.0, 0.0], variance: 0.25 },
            GmmComponent { mean: [0.0, 4.0], variance: 0.25 },
        ];
        let weights = vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let mut map = BTreeMap::new();
        map.insert("A".to_owned(), vec![0]);
        map.insert("B".to_owned(), vec![1]);
        map.insert("C".to_owned(), vec![2]);
        GmmDomain::new(components, weights, map).expect("default world is valid")
    }

    /// Concept ids in lexicographic order.
    pub fn concepts(&self) -> Vec<&str> {
        self.concept_map.keys().map(String::as_str).collect()
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Renormalized `(weight, component index)` prior for a conditioning.
    pub fn restricted_prior(&self, cond: Conditioning<'_>) -> Result<Vec<(f64, usize)>> {
        match cond {
            Conditioning::All => Ok(self
                .weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (w, i))
                .collect()),
            Conditioning::Concept(id) => {
                let idxs = self
                    .concept_map
                    .get(id)
                    .ok_or_else(|| Error::Lookup(format!("unknown concept {id:?}")))?;
                let total: f64 = idxs.iter().map(|&i| self.weights[i]).sum();
                Ok(idxs.iter().map(|&i| (self.weights[i] / total, i)).collect())
            }
        }
    }

    /// One draw from the concept-restricted mixture.
    /// Consumes one uniform (component pick) and two Gaussians.
    pub fn sample_point(&self, concept: &str, stream: &mut RngStream) -> Result<[f64; 2]> {
        let prior = self.restricted_prior(Conditioning::Concept(concept))?;
        let u = stream.next_uniform();
        let mut acc = 0.0;
        let mut chosen = prior[prior.len() - 1].1;
        for &(w, idx) in &prior {
            acc += w;
            if u < acc {
                chosen = idx;
                break;
            }
        }
        let c = &self.components[chosen];
        let sd = c.variance.sqrt();
        Ok([
            c.mean[0] + sd * stream.next_gaussian(),
            c.mean[1] + sd * stream.next_gaussian(),
        ])
    }

    /// `n` draws from the concept-restricted mixture.
    pub fn sample_concept_data(
        &self,
        concept: &str,
        n: usize,
        stream: &mut RngStream,
    ) -> Result<Vec<[f64; 2]>> {
        if n == 0 {
            return Err(Error::Contract("sample_concept_data requires n >= 1".into()));
        }
        (0..n).map(|_| self.sample_point(concept, stream)).collect()
    }

    /// Exact `E[x0 | x_t]` under the restricted prior, alpha_bar in (0, 1].
    ///
    /// Responsibilities are formed in log space; each component contributes
    /// its linear posterior mean
    /// `mu_k + (sqrt(ab)*var_k / (ab*var_k + 1 - ab)) (x_t - sqrt(ab)*mu_k)`.
    pub fn analytic_x0_expectation(
        &self,
        cond: Conditioning<'_>,
        x_t: [f64; 2],
        alpha_bar: f64,
    ) -> Result<[f64; 2]> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(Error::Contract(format!(
                "alpha_bar must lie in (0, 1], got {alpha_bar}"
            )));
        }
        let prior = self.restricted_prior(cond)?;
        Ok(self.posterior_mean_weighted(&prior, x_t, alpha_bar))
    }

    /// Posterior mean under an arbitrary weighted component prior.
    /// Used directly by the oracle denoiser, where blended embeddings induce
    /// weights across concepts.
    pub fn posterior_mean_weighted(
        &self,
        prior: &[(f64, usize)],
        x_t: [f64; 2],
        alpha_bar: f64,
    ) -> [f64; 2] {
        let sqrt_ab = alpha_bar.sqrt();
        let mut log_resp = Vec::with_capacity(prior.len());
        for &(w, idx) in prior {
            let c = &self.components[idx];
            let diffused_var = alpha_bar * c.variance + (1.0 - alpha_bar);
            let dx = x_t[0] - sqrt_ab * c.mean[0];
            let dy = x_t[1] - sqrt_ab * c.mean[1];
            let log_w = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            log_resp.push(
                log_w - diffused_var.ln() - (dx * dx + dy * dy) / (2.0 * diffused_var),
            );
        }
        let max_log = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut out = [0.0f64; 2];
        for (lr, &(_, idx)) in log_resp.iter().zip(prior) {
            let r = (lr - max_log).exp();
            if r == 0.0 {
                continue;
            }
            let c = &self.components[idx];
            let diffused_var = alpha_bar * c.variance + (1.0 - alpha_bar);
            let gain = sqrt_ab * c.variance / diffused_var;
            out[0] += r * (c.mean[0] + gain * (x_t[0] - sqrt_ab * c.mean[0]));
            out[1] += r * (c.mean[1] + gain * (x_t[1] - sqrt_ab * c.mean[1]));
            total += r;
        }
        [out[0] / total, out[1] / total]
    }

    /// Exact noise prediction `(x_t - sqrt(ab) E[x0|x_t]) / sqrt(1-ab)`,
    /// alpha_bar strictly inside (0, 1).
    pub fn analytic_eps(
        &self,
        cond: Conditioning<'_>,
        x_t: [f64; 2],
        alpha_bar: f64,
    ) -> Result<[f64; 2]> {
        if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
            return Err(Error::Contract(format!(
                "analytic_eps needs alpha_bar in (0, 1), got {alpha_bar}"
            )));
        }
        let x0 = self.analytic_x0_expectation(cond, x_t, alpha_bar)?;
        let sqrt_ab = alpha_bar.sqrt();
        let denom = (1.0 - alpha_bar).sqrt();
        Ok([
            (x_t[0] - sqrt_ab * x0[0]) / denom,
            (x_t[1] - sqrt_ab * x0[1]) / denom,
        ])
    }

    /// Log density of a clean point under the concept-restricted mixture.
    pub fn concept_loglik(&self, concept: &str, x0: [f64; 2]) -> Result<f64> {
        let prior = self.restricted_prior(Conditioning::Concept(concept))?;
        let mut terms = Vec::with_capacity(prior.len());
        for &(w, idx) in &prior {
            let c = &self.components[idx];
            let dx = x0[0] - c.mean[0];
            let dy = x0[1] - c.mean[1];
            let log_w = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            terms.push(
                log_w
                    - (2.0 * std::f64::consts::PI * c.variance).ln()
                    - (dx * dx + dy * dy) / (2.0 * c.variance),
            );
        }
        let max_log = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - max_log).exp()).sum();
        Ok(max_log + sum.ln())
    }

    /// Nearest concept by Euclidean distance to the closest component mean,
    /// with margin `(d2 - d1) / d2` over the two smallest distances.
    /// Ties resolve to the lexicographically smallest concept.
    pub fn nearest_concept(&self, x: [f64; 2]) -> (String, f64) {
        let mut best: Option<(&str, f64)> = None;
        let mut second = f64::INFINITY;
        for (concept, idxs) in &self.concept_map {
            let d = idxs
                .iter()
                .map(|&i| {
                    let c = &self.components[i];
                    ((x[0] - c.mean[0]).powi(2) + (x[1] - c.mean[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            match best {
                None => best = Some((concept, d)),
                Some((_, d1)) if d < d1 => {
                    second = d1;
                    best = Some((concept, d));
                }
                Some(_) => {
                    if d < second {
                        second = d;
                    }
                }
            }
        }
        let (concept, d1) = best.expect("concept map is nonempty");
        let margin = if second > 0.0 && second.is_finite() {
            (second - d1) / second
        } else {
            0.0
        };
        (concept.to_owned(), margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn single_component_sample_mean() {
        let domain = GmmDomain::default_world();
        let mut stream = derive_stream(1, "gmm-sample").unwrap();
        let pts = domain.sample_concept_data("A", 100_000, &mut stream).unwrap();
        let n = pts.len() as f64;
        let mean_x: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let mean_y: f64 = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        // sd 0.5, n = 1e5 -> 3 sigma of the mean ~ 0.0047 < 0.01
        assert!((mean_x + 4.0).abs() < 0.01, "mean_x {mean_x}");
        assert!(mean_y.abs() < 0.01, "mean_y {mean_y}");
    }

    #[test]
    fn two_component_concept_occupancy() {
        let components = vec![
            GmmComponent { mean: [-4.0, 0.0], variance: 0.25 },
            GmmComponent { mean: [4.0, 0.0], variance: 0.25 },
        ];
        let mut map = BTreeMap::new();
        map.insert("both".to_owned(), vec![0, 1]);
        let domain = GmmDomain::new(components, vec![0.5, 0.5], map).unwrap();
        let mut stream = derive_stream(2, "occupancy").unwrap();
        let pts = domain.sample_concept_data("both", 100_000, &mut stream).unwrap();
        let left = pts.iter().filter(|p| p[0] < 0.0).count() as f64 / pts.len() as f64;
        assert!((left - 0.5).abs() < 0.01, "left occupancy {left}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let domain = GmmDomain::default_world();
        let mut s1 = derive_stream(3, "repro").unwrap();
        let mut s2 = derive_stream(3, "repro").unwrap();
        assert_eq!(
            domain.sample_point("B", &mut s1).unwrap(),
            domain.sample_point("B", &mut s2).unwrap()
        );
    }

    #[test]
    fn unknown_concept_is_lookup_error() {
        let domain = GmmDomain::default_world();
        let mut stream = derive_stream(4, "x").unwrap();
        assert!(matches!(
            domain.sample_concept_data("Z", 1, &mut stream),
            Err(Error::Lookup(_))
        ));
    }

    #[test]
    fn x0_expectation_identity_at_alpha_bar_one() {
        let domain = GmmDomain::default_world();
        let x_t = [1.25, -0.5];
        let e = domain
            .analytic_x0_expectation(Conditioning::All, x_t, 1.0)
            .unwrap();
        assert!((e[0] - x_t[0]).abs() < 1e-12 && (e[1] - x_t[1]).abs() < 1e-12);
    }

    #[test]
    fn far_point_responsibility_saturates() {
        let domain = GmmDomain::default_world();
        let ab = 0.5f64;
        let x_t = [-3.0, 0.1];
        // Responsibility of component A (log-space ratio against B and C).
        let sqrt_ab = ab.sqrt();
        let mut log_terms = Vec::new();
        for c in domain.components() {
            let dv = ab * c.variance + 1.0 - ab;
            let d2 = (x_t[0] - sqrt_ab * c.mean[0]).powi(2) + (x_t[1] - sqrt_ab * c.mean[1]).powi(2);
            log_terms.push(-dv.ln() - d2 / (2.0 * dv));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_terms.iter().map(|t| (t - max).exp()).collect();
        let r_a = weights[0] / weights.iter().sum::<f64>();
        assert!(r_a >= 0.999, "responsibility of A is {r_a}");
        // The full-mixture posterior mean then agrees with the A-only one up
        // to the residual responsibility mass.
        let full = domain
            .analytic_x0_expectation(Conditioning::All, x_t, ab)
            .unwrap();
        let only_a = domain
            .analytic_x0_expectation(Conditioning::Concept("A"), x_t, ab)
            .unwrap();
        assert!((full[0] - only_a[0]).abs() < 1e-4 && (full[1] - only_a[1]).abs() < 1e-4);
    }

    #[test]
    fn eps_consistency_identity() {
        let domain = GmmDomain::default_world();
        let mut stream = derive_stream(5, "eps-id").unwrap();
        for _ in 0..50 {
            let x_t = [4.0 * stream.next_gaussian(), 4.0 * stream.next_gaussian()];
            let ab = 0.05 + 0.9 * stream.next_uniform();
            let x0 = domain
                .analytic_x0_expectation(Conditioning::All, x_t, ab)
                .unwrap();
            let eps = domain.analytic_eps(Conditioning::All, x_t, ab).unwrap();
            for d in 0..2 {
                let recon = ab.sqrt() * x0[d] + (1.0 - ab).sqrt() * eps[d];
                assert!((recon - x_t[d]).abs() < 1e-6, "reconstruction off: {recon} vs {}", x_t[d]);
            }
        }
    }

    #[test]
    fn eps_rejects_alpha_bar_one() {
        let domain = GmmDomain::default_world();
        assert!(matches!(
            domain.analytic_eps(Conditioning::All, [0.0, 0.0], 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn eps_vanishes_in_zero_variance_limit() {
        let components = vec![GmmComponent { mean: [2.0, -1.0], variance: 0.0 }];
        let mut map = BTreeMap::new();
        map.insert("pt".to_owned(), vec![0]);
        let domain = GmmDomain::new(components, vec![1.0], map).unwrap();
        let ab = 0.37f64;
        let x_t = [ab.sqrt() * 2.0, ab.sqrt() * -1.0];
        let eps = domain
            .analytic_eps(Conditioning::Concept("pt"), x_t, ab)
            .unwrap();
        assert!(eps[0].abs() < 1e-6 && eps[1].abs() < 1e-6, "{eps:?}");
    }

    #[test]
    fn loglik_at_component_mean() {
        let domain = GmmDomain::default_world();
        let ll = domain.concept_loglik("A", [-4.0, 0.0]).unwrap();
        let expected = (1.0 / (2.0 * std::f64::consts::PI * 0.25)).ln();
        assert!((ll - expected).abs() < 1e-12, "{ll} vs {expected}");
        // monotone falloff for the single-component concept
        let farther = domain.concept_loglik("A", [-2.0, 0.0]).unwrap();
        assert!(farther < ll);
    }

    #[test]
    fn loglik_matches_brute_force_sum() {
        let components = vec![
            GmmComponent { mean: [0.0, 0.0], variance: 0.5 },
            GmmComponent { mean: [1.0, 2.0], variance: 1.5 },
        ];
        let mut map = BTreeMap::new();
        map.insert("m".to_owned(), vec![0, 1]);
        let domain = GmmDomain::new(components.clone(), vec![0.3, 0.7], map).unwrap();
        let x = [0.4, 0.9];
        let brute: f64 = [(0.3, &components[0]), (0.7, &components[1])]
            .iter()
            .map(|(w, c)| {
                let d2 = (x[0] - c.mean[0]).powi(2) + (x[1] - c.mean[1]).powi(2);
                w / (2.0 * std::f64::consts::PI * c.variance) * (-d2 / (2.0 * c.variance)).exp()
            })
            .sum();
        let ll = domain.concept_loglik("m", x).unwrap();
        assert!((ll - brute.ln()).abs() < 1e-10);
    }

    #[test]
    fn nearest_concept_margins() {
        let domain = GmmDomain::default_world();
        let (c, margin) = domain.nearest_concept([-4.0, 0.0]);
        assert_eq!(c, "A");
        assert!(margin > 0.9);
        // Equidistant between A and B: tie goes to "A", margin 0.
        let (c, margin) = domain.nearest_concept([0.0, 0.0]);
        assert_eq!(c, "A");
        let d_ab = 4.0f64;
        let d_c = 4.0f64;
        assert!((d_ab - d_c).abs() < 1e-12);
        assert!(margin.abs() < 1e-12);
    }
}
