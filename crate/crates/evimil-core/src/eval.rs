//! Evaluation of uncertainty estimates: ranking metrics (AUROC), confidence
//! and OOD detection scores, rank correlation for mixture sweeps, and
//! histogram export for distribution plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::BagDataset;
use crate::dirichlet::{ConfidenceKind, DirichletParams};
use crate::error::{Error, Result};
use crate::milmodel::{bag_evidence, instance_estimates, predict, MilParams, Pooling, ResidualForm};
use crate::training::POSITIVE_CLASS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Bag,
    Instance,
}

/// One evaluation pass over a test set. OOD entries are keyed by the name of
/// the OOD source so a report can carry several.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub samples: usize,
    pub accuracy: f64,
    /// AUROC of the positive-class score against ground truth, carried next
    /// to plain accuracy for class-imbalanced sets.
    pub label_auroc: Option<f64>,
    pub conf_measure: String,
    pub conf_auroc: Option<f64>,
    pub ood_measure: String,
    pub ood_auroc: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = unit(self.accuracy)
            && self.label_auroc.is_none_or(unit)
            && self.conf_auroc.is_none_or(unit)
            && self.ood_auroc.values().all(|&v| unit(v));
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("evaluation metric outside [0, 1]".into()))
        }
    }
}

/// Mixture proportions evaluated by the OOD-ratio sweep.
pub const SWEEP_RATIOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Ranks starting at 1, ties replaced by the mean rank of their group.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counted half. Rank-based, so any strictly increasing rescoring leaves the
/// result unchanged.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_finite(scores, "score")?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("single-class input".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let total = (n_pos * n_neg) as f64;
    // Evaluate the smaller tail and reflect, so the same scores under
    // complementary labelings sum to exactly one.
    if 2.0 * u <= total {
        Ok(u / total)
    } else {
        Ok(1.0 - (total - u) / total)
    }
}

/// AUROC of a confidence measure against prediction correctness: does the
/// chosen score rank correct predictions above mistakes?
pub fn confidence_eval(
    alphas: &[DirichletParams],
    predictions: &[usize],
    truths: &[usize],
    measure: ConfidenceKind,
) -> Result<f64> {
    if alphas.len() != predictions.len() || alphas.len() != truths.len() {
        return Err(Error::Config("alphas, predictions and truths must align".into()));
    }
    let correct: Vec<bool> = predictions.iter().zip(truths).map(|(p, t)| p == t).collect();
    let hits = correct.iter().filter(|&&c| c).count();
    if hits == 0 || hits == correct.len() {
        return Err(Error::Data("degenerate correctness vector".into()));
    }
    let scores: Vec<f64> = alphas.iter().map(|a| a.confidence_score(measure)).collect();
    auroc(&scores, &correct)
}

/// AUROC of a confidence measure for separating in-distribution from OOD
/// predictions; in-distribution is the positive class and is expected to
/// score higher.
pub fn ood_eval(
    id_alphas: &[DirichletParams],
    ood_alphas: &[DirichletParams],
    measure: ConfidenceKind,
) -> Result<f64> {
    if id_alphas.is_empty() || ood_alphas.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let scores: Vec<f64> = id_alphas
        .iter()
        .chain(ood_alphas)
        .map(|a| a.confidence_score(measure))
        .collect();
    let labels: Vec<bool> = id_alphas
        .iter()
        .map(|_| true)
        .chain(ood_alphas.iter().map(|_| false))
        .collect();
    auroc(&scores, &labels)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config("need two aligned sequences of length >= 2".into()));
    }
    check_finite(xs, "value")?;
    check_finite(ys, "value")?;
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Data("constant sequence has no rank correlation".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Equal-width histogram over `[min, max]` of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` boundaries; first is the data minimum, last the maximum.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::Data("cannot histogram an empty set".into()));
    }
    check_finite(values, "value")?;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| min + span * (i as f64 / bins as f64))
        .collect();
    edges[0] = min;
    edges[bins] = max;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = if span == 0.0 {
            0
        } else {
            (((v - min) / span * bins as f64) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_low,edge_high,count\n");
        for (i, &c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], c).unwrap();
        }
        out
    }
}

pub fn histogram_export(values: &[f64], bins: usize, path: &Path) -> Result<Histogram> {
    let h = histogram(values, bins)?;
    fs::write(path, h.to_csv())?;
    Ok(h)
}

/// Two histograms over one shared set of edges spanning both samples, so the
/// distributions can be plotted on a common axis.
pub fn aligned_histograms(a: &[f64], b: &[f64], bins: usize) -> Result<(Histogram, Histogram)> {
    let union: Vec<f64> = a.iter().chain(b).copied().collect();
    let edges = histogram(&union, bins)?.edges;
    let count = |values: &[f64]| {
        let min = edges[0];
        let max = edges[bins];
        let span = max - min;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let idx = if span == 0.0 {
                0
            } else {
                (((v - min) / span * bins as f64) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        Histogram { edges: edges.clone(), counts }
    };
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("cannot histogram an empty set".into()));
    }
    Ok((count(a), count(b)))
}

/// Dirichlet outputs with hard predictions and ground truth for one
/// evaluation set, pooled in dataset order.
#[derive(Clone, Debug)]
pub struct ScoredSet {
    pub alphas: Vec<DirichletParams>,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
}

impl ScoredSet {
    pub fn accuracy(&self) -> f64 {
        let hits = self
            .predictions
            .iter()
            .zip(&self.truths)
            .filter(|(p, t)| p == t)
            .count();
        hits as f64 / self.predictions.len() as f64
    }

    /// Expected probability of the positive class, one score per sample.
    pub fn positive_scores(&self) -> Vec<f64> {
        self.alphas
            .iter()
            .map(|a| a.expected_probability()[POSITIVE_CLASS])
            .collect()
    }

    pub fn measure_scores(&self, measure: ConfidenceKind) -> Vec<f64> {
        self.alphas.iter().map(|a| a.confidence_score(measure)).collect()
    }

    /// AUROC of the positive-class probability against ground truth.
    pub fn label_auroc(&self) -> Result<f64> {
        let labels: Vec<bool> = self.truths.iter().map(|&t| t == POSITIVE_CLASS).collect();
        auroc(&self.positive_scores(), &labels)
    }

    pub fn conf_auroc(&self, measure: ConfidenceKind) -> Result<f64> {
        confidence_eval(&self.alphas, &self.predictions, &self.truths, measure)
    }
}

/// Which per-instance scorer an instance-level evaluation reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Attention weight of the pooling operator, the classical proxy.
    AttentionProxy,
    /// Bag head applied to a single embedding.
    T,
    /// T corrected by the learned instance residual.
    R,
}

impl Estimator {
    pub fn parse(s: &str) -> Option<Estimator> {
        match s {
            "attention" => Some(Estimator::AttentionProxy),
            "t" => Some(Estimator::T),
            "r" => Some(Estimator::R),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::AttentionProxy => "attention",
            Estimator::T => "t",
            Estimator::R => "r",
        }
    }
}

/// Bag-level outputs over a dataset.
pub fn bag_scores(params: &MilParams, data: &BagDataset, pooling: Pooling) -> ScoredSet {
    let mut out = ScoredSet { alphas: Vec::new(), predictions: Vec::new(), truths: Vec::new() };
    for bag in &data.bags {
        let fwd = bag_evidence(params, &bag.features, pooling);
        let (label, _) = predict(&fwd.bag_alpha);
        out.alphas.push(fwd.bag_alpha);
        out.predictions.push(label);
        out.truths.push(bag.bag_label as usize);
    }
    out
}

/// Instance-level outputs pooled across all bags of a dataset.
pub fn instance_scores(
    params: &MilParams,
    data: &BagDataset,
    form: ResidualForm,
    estimator: Estimator,
) -> Result<ScoredSet> {
    if estimator == Estimator::AttentionProxy {
        return Err(Error::Config("attention proxy has no Dirichlet output".into()));
    }
    let mut out = ScoredSet { alphas: Vec::new(), predictions: Vec::new(), truths: Vec::new() };
    for bag in &data.bags {
        let fwd = instance_estimates(params, &bag.features, form);
        let alphas = match estimator {
            Estimator::T => fwd.alpha_t,
            Estimator::R => fwd.alpha_ins,
            Estimator::AttentionProxy => unreachable!(),
        };
        for (alpha, &label) in alphas.into_iter().zip(bag.instance_labels_for_eval()) {
            let (pred, _) = predict(&alpha);
            out.alphas.push(alpha);
            out.predictions.push(pred);
            out.truths.push(label as usize);
        }
    }
    Ok(out)
}

/// Attention weights as instance scores, pooled across bags. Predictions
/// call an instance positive when its weight exceeds the uniform level 1/K
/// of its bag.
#[derive(Clone, Debug)]
pub struct ProxyScores {
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
}

impl ProxyScores {
    pub fn accuracy(&self) -> f64 {
        let hits = self
            .predictions
            .iter()
            .zip(&self.truths)
            .filter(|(p, t)| p == t)
            .count();
        hits as f64 / self.predictions.len() as f64
    }

    pub fn label_auroc(&self) -> Result<f64> {
        let labels: Vec<bool> = self.truths.iter().map(|&t| t == POSITIVE_CLASS).collect();
        auroc(&self.scores, &labels)
    }
}

pub fn attention_proxy_scores(params: &MilParams, data: &BagDataset) -> Result<ProxyScores> {
    let mut out = ProxyScores { scores: Vec::new(), predictions: Vec::new(), truths: Vec::new() };
    for bag in &data.bags {
        let fwd = bag_evidence(params, &bag.features, Pooling::Attention);
        let weights = fwd
            .attention_weights
            .ok_or_else(|| Error::Data("pooling produced no attention weights".into()))?;
        let uniform = 1.0 / bag.len() as f64;
        for (w, &label) in weights.into_iter().zip(bag.instance_labels_for_eval()) {
            out.scores.push(w);
            out.predictions.push(usize::from(w > uniform));
            out.truths.push(label as usize);
        }
    }
    Ok(out)
}
