//! Closed-form uncertainty measures for Dirichlet-distributed class
//! probabilities, plus subjective-logic belief assignment.
//!
//! A categorical prediction with concentration α = e + 1 (evidence e ≥ 0)
//! carries two kinds of uncertainty: the expected entropy of the sampled
//! categorical (data uncertainty) and the spread of the Dirichlet itself
//! (distributional uncertainty, the mutual information). Everything here is
//! a pure function of α; nothing samples and nothing differentiates.

use crate::numcore::special::digamma;

/// Concentration parameters of a Dirichlet over C classes.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

/// Belief masses and uncertainty mass of a subjective-logic opinion.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefAssignment {
    pub belief: Vec<f64>,
    pub uncertainty_mass: f64,
}

/// Every confidence/uncertainty measure computed for one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyReport {
    pub max_prob: f64,
    pub predictive_entropy: f64,
    pub expected_entropy: f64,
    pub mutual_information: f64,
    pub max_alpha: f64,
    pub alpha0: f64,
}

/// Score kinds where larger always means more confident.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfidenceKind {
    MaxProb,
    MaxAlpha,
    Alpha0,
    NegExpectedEntropy,
}

impl ConfidenceKind {
    pub fn parse(s: &str) -> Option<ConfidenceKind> {
        match s {
            "max-prob" => Some(ConfidenceKind::MaxProb),
            "max-alpha" => Some(ConfidenceKind::MaxAlpha),
            "alpha0" => Some(ConfidenceKind::Alpha0),
            "neg-expected-entropy" => Some(ConfidenceKind::NegExpectedEntropy),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConfidenceKind::MaxProb => "max-prob",
            ConfidenceKind::MaxAlpha => "max-alpha",
            ConfidenceKind::Alpha0 => "alpha0",
            ConfidenceKind::NegExpectedEntropy => "neg-expected-entropy",
        }
    }
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> DirichletParams {
        assert!(alpha.len() >= 2, "need at least two classes, got {}", alpha.len());
        assert!(alpha.iter().all(|&a| a > 0.0), "concentrations must be positive: {alpha:?}");
        DirichletParams { alpha }
    }

    /// α = e + 1 from nonnegative evidence.
    pub fn from_evidence(evidence: &[f64]) -> DirichletParams {
        assert!(evidence.iter().all(|&e| e >= 0.0), "evidence must be nonnegative: {evidence:?}");
        DirichletParams::new(evidence.iter().map(|e| e + 1.0).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// E[p]: α_i / α₀.
    pub fn expected_probability(&self) -> Vec<f64> {
        let a0 = self.alpha0();
        self.alpha.iter().map(|a| a / a0).collect()
    }

    /// Entropy of the mean categorical: −Σ (α_i/α₀) ln(α_i/α₀).
    pub fn predictive_entropy(&self) -> f64 {
        let a0 = self.alpha0();
        -self.alpha.iter().map(|a| plogp(a / a0)).sum::<f64>()
    }

    /// Mean entropy of sampled categoricals:
    /// −Σ (α_i/α₀)(ψ(α_i+1) − ψ(α₀+1)).
    pub fn expected_entropy(&self) -> f64 {
        let a0 = self.alpha0();
        let d0 = digamma(a0 + 1.0);
        -self.alpha.iter().map(|&a| (a / a0) * (digamma(a + 1.0) - d0)).sum::<f64>()
    }

    /// Distributional uncertainty, computed in one pass as
    /// −Σ (α_i/α₀)[ln(α_i/α₀) − ψ(α_i+1) + ψ(α₀+1)].
    ///
    /// Mathematically identical to `predictive_entropy() − expected_entropy()`;
    /// the two routes are cross-checked in tests.
    pub fn mutual_information(&self) -> f64 {
        let a0 = self.alpha0();
        let d0 = digamma(a0 + 1.0);
        -self
            .alpha
            .iter()
            .map(|&a| {
                let r = (a / a0).max(1e-300);
                (a / a0) * (r.ln() - digamma(a + 1.0) + d0)
            })
            .sum::<f64>()
    }

    pub fn max_prob(&self) -> f64 {
        let a0 = self.alpha0();
        self.alpha.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a / a0))
    }

    pub fn max_alpha(&self) -> f64 {
        self.alpha.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a))
    }

    pub fn report(&self) -> UncertaintyReport {
        UncertaintyReport {
            max_prob: self.max_prob(),
            predictive_entropy: self.predictive_entropy(),
            expected_entropy: self.expected_entropy(),
            mutual_information: self.mutual_information(),
            max_alpha: self.max_alpha(),
            alpha0: self.alpha0(),
        }
    }

    pub fn confidence_score(&self, kind: ConfidenceKind) -> f64 {
        match kind {
            ConfidenceKind::MaxProb => self.max_prob(),
            ConfidenceKind::MaxAlpha => self.max_alpha(),
            ConfidenceKind::Alpha0 => self.alpha0(),
            ConfidenceKind::NegExpectedEntropy => -self.expected_entropy(),
        }
    }
}

fn plogp(p: f64) -> f64 {
    let p = p.max(1e-300);
    p * p.ln()
}

/// Subjective-logic opinion from evidence: b_i = e_i / (Σe + C), u = C / (Σe + C).
pub fn belief_assignment(evidence: &[f64]) -> BeliefAssignment {
    assert!(evidence.iter().all(|&e| e >= 0.0), "evidence must be nonnegative: {evidence:?}");
    let c = evidence.len() as f64;
    let denom = evidence.iter().sum::<f64>() + c;
    BeliefAssignment {
        belief: evidence.iter().map(|e| e / denom).collect(),
        uncertainty_mass: c / denom,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn expected_probability_ratios() {
        assert_eq!(DirichletParams::new(vec![1.0, 1.0]).expected_probability(), vec![0.5, 0.5]);
        assert_eq!(DirichletParams::new(vec![3.0, 1.0]).expected_probability(), vec![0.75, 0.25]);
        assert_eq!(DirichletParams::new(vec![2.0, 3.0]).expected_probability(), vec![0.4, 0.6]);
    }

    #[test]
    fn predictive_entropy_known_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!(close(DirichletParams::new(vec![1.0, 1.0]).predictive_entropy(), ln2, 1e-12));
        for c in [0.5, 2.0, 77.0] {
            assert!(close(DirichletParams::new(vec![c, c]).predictive_entropy(), ln2, 1e-12));
        }
        // H(0.75) for α = [3,1]
        assert!(close(DirichletParams::new(vec![3.0, 1.0]).predictive_entropy(), 0.5623351446188083, 1e-12));
    }

    #[test]
    fn expected_entropy_exact_points() {
        assert!(close(DirichletParams::new(vec![1.0, 1.0]).expected_entropy(), 0.5, 1e-12));
        assert!(close(DirichletParams::new(vec![2.0, 2.0]).expected_entropy(), 7.0 / 12.0, 1e-12));
        // mpmath 50-digit references
        assert!(close(DirichletParams::new(vec![3.0, 2.0]).expected_entropy(), 0.58333333333333333, 1e-12));
        assert!(close(DirichletParams::new(vec![0.7, 2.3]).expected_entropy(), 0.41409258934894188, 1e-12));
        assert!(close(
            DirichletParams::new(vec![2.5, 1.5, 3.5, 0.5]).expected_entropy(),
            1.0541515039770335,
            1e-12
        ));
    }

    #[test]
    fn mutual_information_known_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!(close(DirichletParams::new(vec![1.0, 1.0]).mutual_information(), ln2 - 0.5, 1e-12));
        assert!(close(DirichletParams::new(vec![2.0, 2.0]).mutual_information(), ln2 - 7.0 / 12.0, 1e-12));
        assert!(DirichletParams::new(vec![1000.0, 1000.0]).mutual_information() < 1e-3);
        assert!(close(DirichletParams::new(vec![5.0, 1.0, 1.0]).mutual_information(), 0.12012116398333685, 1e-12));
    }

    #[test]
    fn expected_entropy_matches_monte_carlo() {
        // α = [5,3], 1e5 Dirichlet draws via normalized Gamma samples.
        use rand::distr::Distribution;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        let g5 = rand_distr::Gamma::<f64>::new(5.0, 1.0).unwrap();
        let g3 = rand_distr::Gamma::<f64>::new(3.0, 1.0).unwrap();
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (x, y) = (g5.sample(&mut rng), g3.sample(&mut rng));
            let p = x / (x + y);
            acc -= p * p.ln() + (1.0 - p) * (1.0 - p).ln();
        }
        let mc = acc / n as f64;
        let closed = DirichletParams::new(vec![5.0, 3.0]).expected_entropy();
        assert!(close(mc, closed, 1e-2), "mc {mc} vs closed {closed}");
    }

    #[test]
    fn belief_assignment_examples() {
        let b = belief_assignment(&[0.0, 0.0]);
        assert_eq!(b.belief, vec![0.0, 0.0]);
        assert_eq!(b.uncertainty_mass, 1.0);
        let b = belief_assignment(&[2.0, 0.0]);
        assert_eq!(b.belief, vec![0.5, 0.0]);
        assert_eq!(b.uncertainty_mass, 0.5);
        let b = belief_assignment(&[8.0, 0.0]);
        assert_eq!(b.belief, vec![0.8, 0.0]);
        assert!(close(b.uncertainty_mass, 0.2, 1e-15));
    }

    #[test]
    fn belief_consistent_with_params_from_evidence() {
        let e = [3.5, 0.2, 1.1];
        let b = belief_assignment(&e);
        let d = DirichletParams::from_evidence(&e);
        assert!(close(b.uncertainty_mass, 3.0 / d.alpha0(), 1e-12));
        for i in 0..3 {
            assert!(close(b.belief[i], (d.alpha()[i] - 1.0) / d.alpha0(), 1e-12));
        }
    }

    #[test]
    fn confidence_score_kinds() {
        let d = DirichletParams::new(vec![3.0, 1.0]);
        assert_eq!(d.confidence_score(ConfidenceKind::MaxAlpha), 3.0);
        assert_eq!(d.confidence_score(ConfidenceKind::Alpha0), 4.0);
        assert_eq!(d.confidence_score(ConfidenceKind::MaxProb), 0.75);
        let u = DirichletParams::new(vec![1.0, 1.0]);
        assert!(close(u.confidence_score(ConfidenceKind::NegExpectedEntropy), -0.5, 1e-12));
    }

    #[test]
    fn mi_scaling_monotonicity() {
        // Fixed direction, growing strength: MI strictly decreases.
        let dir = [0.3, 0.45, 0.25];
        let mut last = f64::INFINITY;
        for s in [3.0, 6.0, 12.0, 30.0, 100.0, 400.0] {
            let mi = DirichletParams::new(dir.iter().map(|d| d * s).collect()).mutual_information();
            assert!(mi < last, "MI not decreasing at strength {s}");
            last = mi;
        }
    }

    proptest! {
        #[test]
        fn belief_masses_sum_to_one(e in proptest::collection::vec(0.0f64..50.0, 2..6)) {
            let b = belief_assignment(&e);
            let total = b.uncertainty_mass + b.belief.iter().sum::<f64>();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn entropy_ordering_for_evidence_alphas(a in proptest::collection::vec(1.0f64..50.0, 2..6)) {
            let lnc = (a.len() as f64).ln();
            let d = DirichletParams::new(a);
            let pred = d.predictive_entropy();
            let exp = d.expected_entropy();
            prop_assert!(exp >= 0.0);
            prop_assert!(pred >= exp - 1e-10);
            prop_assert!(pred <= lnc + 1e-10);
            prop_assert!(d.mutual_information() >= -1e-12);
        }

        #[test]
        fn mi_two_routes_agree(a in proptest::collection::vec(0.1f64..80.0, 2..6)) {
            let d = DirichletParams::new(a);
            let direct = d.mutual_information();
            let diff = d.predictive_entropy() - d.expected_entropy();
            prop_assert!((direct - diff).abs() < 1e-10);
        }
    }
}
