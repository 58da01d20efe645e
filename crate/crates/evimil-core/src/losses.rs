//! The objective stack: Fisher-scaled squared-error bag loss with its log-det
//! and KL regularizers, the evidence regularizer on the ground-truth class,
//! and the weakly-supervised instance loss with its three positive-bag
//! aggregation strategies.
//!
//! Every term exists in two forms. The graph builders (`*_rows`,
//! [`mirel_loss`], [`total_objective`]) operate on tape [`Var`]s holding one
//! Dirichlet parameter row per instance and are what training differentiates.
//! The plain-value functions ([`iedl_mse_term`], [`red_loss`], ...) wrap the
//! same builders on a throwaway tape so there is a single source of truth.

use crate::dirichlet::DirichletParams;
use crate::error::{Error, Result};
use crate::milmodel::{BagGraph, InstanceGraph};
use crate::numcore::{lgamma, Array, Tape, Var};

/// Positive-bag aggregation strategy for the instance loss.
///
/// `Naive` treats every instance of a positive bag as positive and averages.
/// `WeightedLoss` averages the same per-instance losses under the normalized
/// instance weights. `WeightedEvidence` first blends the instance evidence
/// under those weights and applies the loss once to the blend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Strategy {
    Naive,
    WeightedLoss,
    #[default]
    WeightedEvidence,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "naive" => Some(Strategy::Naive),
            "weighted-loss" => Some(Strategy::WeightedLoss),
            "weighted-evidence" => Some(Strategy::WeightedEvidence),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::WeightedLoss => "weighted-loss",
            Strategy::WeightedEvidence => "weighted-evidence",
        }
    }
}

/// Knobs of the combined objective.
#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Weight of the subtracted log-det term.
    pub lambda1: f64,
    /// Epochs over which the KL weight ramps from 0 to 1.
    pub lambda2_warmup_epochs: f64,
    pub strategy: Strategy,
    /// Apply the evidence regularizer to bag and instance outputs.
    pub use_red: bool,
    /// Clamp floor for the regularized evidence log.
    pub red_epsilon: f64,
    /// Route the instance loss only into the residual head, leaving the
    /// encoder to the bag loss.
    pub freeze_psi_in_instance_loss: bool,
}

impl Default for LossConfig {
    fn default() -> LossConfig {
        LossConfig {
            lambda1: 0.01,
            lambda2_warmup_epochs: 10.0,
            strategy: Strategy::default(),
            use_red: true,
            red_epsilon: 1e-8,
            freeze_psi_in_instance_loss: false,
        }
    }
}

impl LossConfig {
    /// KL weight for a given epoch: ramps linearly, capped at 1.
    pub fn lambda2(&self, epoch: usize) -> f64 {
        (epoch as f64 / self.lambda2_warmup_epochs).min(1.0)
    }
}

/// Per-instance positive-class weights `w` and their normalization `w_bar`.
///
/// Held as plain values: the weights never carry gradient, so blending with
/// them cannot leak instance-loss gradient into the pooled branch they were
/// read from.
#[derive(Clone, Debug)]
pub struct InstanceWeights {
    pub w: Vec<f64>,
    pub w_bar: Vec<f64>,
}

impl InstanceWeights {
    /// Normalize raw weights to sum 1; an all-zero vector falls back to
    /// uniform so downstream blends stay defined.
    pub fn new(w: Vec<f64>) -> InstanceWeights {
        assert!(!w.is_empty(), "need at least one instance");
        assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)), "weights must lie in [0,1]: {w:?}");
        let total: f64 = w.iter().sum();
        let w_bar = if total == 0.0 {
            vec![1.0 / w.len() as f64; w.len()]
        } else {
            w.iter().map(|x| x / total).collect()
        };
        InstanceWeights { w, w_bar }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Expected positive-class probability of each instance under its
/// pooled-head Dirichlet, normalized across the bag.
pub fn instance_weights(alpha_t: &[DirichletParams], positive_class: usize) -> InstanceWeights {
    assert!(!alpha_t.is_empty(), "need at least one instance");
    let w = alpha_t
        .iter()
        .map(|d| {
            assert!(positive_class < d.num_classes(), "positive class out of range");
            d.alpha()[positive_class] / d.alpha0()
        })
        .collect();
    InstanceWeights::new(w)
}

/// One-hot label row.
pub fn one_hot(num_classes: usize, class: usize) -> Vec<f64> {
    assert!(class < num_classes, "class {class} out of range for {num_classes} classes");
    let mut y = vec![0.0; num_classes];
    y[class] = 1.0;
    y
}

fn one_hot_rows(rows: usize, num_classes: usize, class: usize) -> Array {
    let row = one_hot(num_classes, class);
    Array::from_vec(&[rows, num_classes], row.repeat(rows))
}

fn assert_one_hot(y: &[f64]) {
    assert!(
        y.iter().all(|&v| v == 0.0 || v == 1.0) && y.iter().sum::<f64>() == 1.0,
        "label must be one-hot: {y:?}"
    );
}

/// Row sums as a column for broadcasting.
fn row_sums<'t>(alpha: Var<'t>) -> Var<'t> {
    let rows = alpha.shape()[0];
    alpha.sum_axis(1).reshape(&[rows, 1])
}

/// Fisher-scaled squared-error term per row: the Brier score of the expected
/// probabilities plus their Dirichlet variance, each class weighted by the
/// local Fisher information ψ′(α_i).
pub fn mse_term_rows<'t>(tape: &'t Tape, alpha: Var<'t>, y: &Array) -> Var<'t> {
    assert_eq!(alpha.shape(), y.shape().to_vec(), "labels must match alpha rows");
    let a0 = row_sums(alpha);
    let p = alpha.div(a0);
    let err = tape.leaf(y.clone()).sub(p).square();
    let var = alpha
        .scale(-1.0)
        .add(a0)
        .mul(alpha)
        .div(a0.square().mul(a0.add_scalar(1.0)));
    err.add(var).mul(alpha.trigamma()).sum_axis(1)
}

/// Log-determinant of the Fisher information per row:
/// Σ ln ψ′(α_i) + ln(1 − Σ ψ′(α_0)/ψ′(α_i)).
///
/// The inner log argument is positive for every valid parameter row with at
/// least two classes; if an upstream bug ever feeds a corrupted row the log
/// goes NaN and training reports a non-finite loss rather than aborting.
pub fn fim_term_rows<'t>(_tape: &'t Tape, alpha: Var<'t>) -> Var<'t> {
    let tri = alpha.trigamma();
    let direct = tri.log().sum_axis(1);
    let ratio = tri.recip().mul(row_sums(alpha).trigamma());
    let inner = ratio.sum_axis(1).scale(-1.0).add_scalar(1.0);
    direct.add(inner.log())
}

/// KL divergence to the flat Dirichlet per row, after masking the
/// ground-truth class to 1: α̂ = α ⊙ (1−y) + y.
pub fn kl_term_rows<'t>(tape: &'t Tape, alpha: Var<'t>, y: &Array) -> Var<'t> {
    assert_eq!(alpha.shape(), y.shape().to_vec(), "labels must match alpha rows");
    let num_classes = y.cols();
    let keep = y.map(|v| 1.0 - v);
    let ahat = alpha.mul(tape.leaf(keep)).add(tape.leaf(y.clone()));
    let s = row_sums(ahat);
    let rows = ahat.shape()[0];
    let whole = s.lgamma().reshape(&[rows]);
    let parts = ahat.lgamma().sum_axis(1);
    let tilt = ahat
        .add_scalar(-1.0)
        .mul(ahat.digamma().sub(s.digamma()))
        .sum_axis(1);
    whole.sub(parts).add(tilt).add_scalar(-lgamma(num_classes as f64))
}

/// Combined per-row loss: mse − λ1·fim + λ2·kl.
pub fn iedl_rows<'t>(
    tape: &'t Tape,
    alpha: Var<'t>,
    y: &Array,
    lambda1: f64,
    lambda2: f64,
) -> Var<'t> {
    let mse = mse_term_rows(tape, alpha, y);
    let fim = fim_term_rows(tape, alpha);
    let kl = kl_term_rows(tape, alpha, y);
    mse.sub(fim.scale(lambda1)).add(kl.scale(lambda2))
}

/// Evidence regularizer per row: −(C/α_0)·ln(max(α_gt − 1, ε)). Pulls up the
/// ground-truth evidence, fading as total evidence accumulates. Where the
/// clamp is active the row contributes no gradient.
pub fn red_rows<'t>(tape: &'t Tape, alpha: Var<'t>, gt_class: usize, epsilon: f64) -> Var<'t> {
    let shape = alpha.shape();
    let (rows, num_classes) = (shape[0], shape[1]);
    let picked = one_hot_rows(rows, num_classes, gt_class);
    let evidence = alpha.mul(tape.leaf(picked)).sum_axis(1).add_scalar(-1.0);
    let mask = evidence.value().map(|v| if v > epsilon { 1.0 } else { 0.0 });
    let floor = tape.leaf(Array::full(&[rows], epsilon));
    let clamped = evidence.select(&mask, floor);
    clamped
        .log()
        .div(alpha.sum_axis(1))
        .scale(-(num_classes as f64))
}

/// Instance loss over one bag. `alpha` holds one parameter row per instance;
/// negative bags push every row toward the negative class, positive bags
/// follow the configured strategy. Weights enter as plain values.
pub fn mirel_loss<'t>(
    tape: &'t Tape,
    alpha: Var<'t>,
    weights: &InstanceWeights,
    bag_label: usize,
    strategy: Strategy,
    lambda1: f64,
    lambda2: f64,
) -> Var<'t> {
    let shape = alpha.shape();
    let (k, num_classes) = (shape[0], shape[1]);
    assert_eq!(num_classes, 2, "instance supervision is binary");
    assert!(bag_label < 2, "bag label must be 0 or 1");
    assert_eq!(weights.len(), k, "one weight per instance");
    if bag_label == 0 {
        let y = one_hot_rows(k, num_classes, 0);
        return iedl_rows(tape, alpha, &y, lambda1, lambda2).mean();
    }
    let y = one_hot_rows(k, num_classes, 1);
    match strategy {
        Strategy::Naive => iedl_rows(tape, alpha, &y, lambda1, lambda2).mean(),
        Strategy::WeightedLoss => {
            let w = tape.leaf(Array::vector(weights.w_bar.clone()));
            iedl_rows(tape, alpha, &y, lambda1, lambda2).mul(w).sum()
        }
        Strategy::WeightedEvidence => {
            let w = tape.leaf(Array::from_vec(&[1, k], weights.w_bar.clone()));
            let blended = w.matmul(alpha.add_scalar(-1.0)).add_scalar(1.0);
            let y_row = one_hot_rows(1, num_classes, 1);
            iedl_rows(tape, blended, &y_row, lambda1, lambda2).sum()
        }
    }
}

/// Full objective for one bag: bag loss on the pooled output, instance loss
/// on the residual outputs, and optionally the evidence regularizer on both
/// (instance side averaged). The KL weight follows the warm-up schedule.
pub fn total_objective<'t>(
    tape: &'t Tape,
    bag_alpha: Var<'t>,
    alpha_ins: Var<'t>,
    weights: &InstanceWeights,
    bag_label: usize,
    config: &LossConfig,
    epoch: usize,
) -> Var<'t> {
    let num_classes = bag_alpha.shape()[1];
    let lambda2 = config.lambda2(epoch);
    let y_bag = one_hot_rows(1, num_classes, bag_label);
    let bag_term = iedl_rows(tape, bag_alpha, &y_bag, config.lambda1, lambda2).sum();
    let ins_term = mirel_loss(
        tape,
        alpha_ins,
        weights,
        bag_label,
        config.strategy,
        config.lambda1,
        lambda2,
    );
    let mut total = bag_term.add(ins_term);
    if config.use_red {
        let bag_red = red_rows(tape, bag_alpha, bag_label, config.red_epsilon).sum();
        let ins_red = red_rows(tape, alpha_ins, bag_label, config.red_epsilon).mean();
        total = total.add(bag_red).add(ins_red);
    }
    total
}

/// [`total_objective`] wired to a model's bag and instance graphs.
pub fn total_objective_for<'t>(
    tape: &'t Tape,
    bag: &BagGraph<'t>,
    instances: &InstanceGraph<'t>,
    weights: &InstanceWeights,
    bag_label: usize,
    config: &LossConfig,
    epoch: usize,
) -> Var<'t> {
    total_objective(
        tape,
        bag.bag_alpha,
        instances.alpha_ins,
        weights,
        bag_label,
        config,
        epoch,
    )
}

fn alpha_row(d: &DirichletParams) -> Array {
    Array::from_vec(&[1, d.num_classes()], d.alpha().to_vec())
}

fn alpha_rows(ds: &[DirichletParams]) -> Array {
    assert!(!ds.is_empty(), "need at least one row");
    let c = ds[0].num_classes();
    let mut data = Vec::with_capacity(ds.len() * c);
    for d in ds {
        assert_eq!(d.num_classes(), c, "rows must agree on class count");
        data.extend_from_slice(d.alpha());
    }
    Array::from_vec(&[ds.len(), c], data)
}

fn label_row(y: &[f64]) -> Array {
    assert_one_hot(y);
    Array::from_vec(&[1, y.len()], y.to_vec())
}

/// Fisher-scaled squared-error term of a single Dirichlet against a one-hot
/// label.
pub fn iedl_mse_term(alpha: &DirichletParams, y: &[f64]) -> f64 {
    assert_eq!(alpha.num_classes(), y.len(), "label length must match classes");
    let tape = Tape::new();
    let a = tape.leaf(alpha_row(alpha));
    mse_term_rows(&tape, a, &label_row(y)).item()
}

/// Log-determinant of the Fisher information of a single Dirichlet.
pub fn iedl_fim_term(alpha: &DirichletParams) -> Result<f64> {
    let tape = Tape::new();
    let a = tape.leaf(alpha_row(alpha));
    let out = fim_term_rows(&tape, a).item();
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Numeric(format!(
            "log-det argument collapsed for alpha {:?}",
            alpha.alpha()
        )))
    }
}

/// KL to the flat Dirichlet after masking the labelled class to 1.
pub fn kl_to_uniform(alpha: &DirichletParams, y: &[f64]) -> f64 {
    assert_eq!(alpha.num_classes(), y.len(), "label length must match classes");
    let tape = Tape::new();
    let a = tape.leaf(alpha_row(alpha));
    kl_term_rows(&tape, a, &label_row(y)).item()
}

/// Combined single-Dirichlet loss: mse − λ1·fim + λ2·kl.
pub fn iedl_loss(alpha: &DirichletParams, y: &[f64], lambda1: f64, lambda2: f64) -> f64 {
    assert_eq!(alpha.num_classes(), y.len(), "label length must match classes");
    let tape = Tape::new();
    let a = tape.leaf(alpha_row(alpha));
    iedl_rows(&tape, a, &label_row(y), lambda1, lambda2).item()
}

/// Evidence regularizer of a single Dirichlet for a ground-truth class.
pub fn red_loss(alpha: &DirichletParams, gt_class: usize, epsilon: f64) -> f64 {
    assert!(gt_class < alpha.num_classes(), "class out of range");
    let tape = Tape::new();
    let a = tape.leaf(alpha_row(alpha));
    red_rows(&tape, a, gt_class, epsilon).item()
}

/// Instance loss over plain per-instance Dirichlets.
pub fn mirel_instance_loss(
    alpha_ins: &[DirichletParams],
    weights: &InstanceWeights,
    bag_label: usize,
    strategy: Strategy,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let tape = Tape::new();
    let a = tape.leaf(alpha_rows(alpha_ins));
    mirel_loss(&tape, a, weights, bag_label, strategy, lambda1, lambda2).item()
}

/// Full objective over plain bag and instance Dirichlets.
pub fn total_objective_value(
    bag_alpha: &DirichletParams,
    alpha_ins: &[DirichletParams],
    weights: &InstanceWeights,
    bag_label: usize,
    config: &LossConfig,
    epoch: usize,
) -> f64 {
    let tape = Tape::new();
    let bag = tape.leaf(alpha_row(bag_alpha));
    let ins = tape.leaf(alpha_rows(alpha_ins));
    total_objective(&tape, bag, ins, weights, bag_label, config, epoch).item()
}
