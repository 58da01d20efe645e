//! `eval`: score a trained run on the held-out split. Emits a bag-level
//! report, instance-level reports for the attention proxy and both
//! instance estimators, per-measure histograms (ID against OOD when an OOD
//! source is configured), and the OOD-ratio sweep table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use evimil_core::data::{make_ood_mixture, BagDataset, InstancePool};
use evimil_core::dirichlet::DirichletParams;
use evimil_core::error::{Error, Result};
use evimil_core::eval::{
    aligned_histograms, attention_proxy_scores, bag_scores, histogram_export, instance_scores,
    ood_eval, spearman, Estimator, EvalReport, Level, ScoredSet,
};
use evimil_core::milmodel::{checkpoint, instance_estimates, MilParams, Pooling};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, OodSource};

fn write_json(path: &Path, report: &EvalReport) -> Result<()> {
    report.validate()?;
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// A metric that degenerates on this evaluation set (for example every
/// prediction correct) is reported as absent rather than failing the run.
fn metric_or_note(value: Result<f64>, what: &str) -> Option<f64> {
    match value {
        Ok(v) => Some(v),
        Err(e) => {
            eprintln!("note: {what} not computable: {e}");
            None
        }
    }
}

/// OOD instance alphas under one estimator; the mixture bags hold the OOD
/// material in bag-shaped groups.
fn ood_instance_alphas(
    params: &MilParams,
    mixture: &BagDataset,
    cfg: &ExperimentConfig,
    estimator: Estimator,
) -> Vec<DirichletParams> {
    let mut out = Vec::new();
    for bag in &mixture.bags {
        let fwd = instance_estimates(params, &bag.features, cfg.model.residual_form);
        out.extend(match estimator {
            Estimator::T => fwd.alpha_t,
            _ => fwd.alpha_ins,
        });
    }
    out
}

fn export_histograms(
    dir: &Path,
    prefix: &str,
    id_scores: &[f64],
    ood: Option<(&str, &[f64])>,
    bins: usize,
) -> Result<()> {
    match ood {
        Some((name, ood_scores)) => {
            let (hi, ho) = aligned_histograms(id_scores, ood_scores, bins)?;
            fs::write(dir.join(format!("{prefix}_id.csv")), hi.to_csv())?;
            fs::write(dir.join(format!("{prefix}_{name}.csv")), ho.to_csv())?;
        }
        None => {
            histogram_export(id_scores, bins, &dir.join(format!("{prefix}.csv")))?;
        }
    }
    Ok(())
}

fn instance_report(
    cfg: &ExperimentConfig,
    scores: &ScoredSet,
    ood_alphas: Option<(&str, &[DirichletParams])>,
) -> EvalReport {
    let mut ood_auroc = BTreeMap::new();
    if let Some((name, alphas)) = ood_alphas {
        if let Some(v) = metric_or_note(
            ood_eval(&scores.alphas, alphas, cfg.eval.ood_measure),
            "instance OOD AUROC",
        ) {
            ood_auroc.insert(name.to_string(), v);
        }
    }
    EvalReport {
        level: Level::Instance,
        samples: scores.alphas.len(),
        accuracy: scores.accuracy(),
        label_auroc: metric_or_note(scores.label_auroc(), "instance label AUROC"),
        conf_measure: cfg.eval.conf_measure.name().into(),
        conf_auroc: metric_or_note(scores.conf_auroc(cfg.eval.conf_measure), "instance Conf. AUROC"),
        ood_measure: cfg.eval.ood_measure.name().into(),
        ood_auroc,
    }
}

pub fn run(cfg: &ExperimentConfig, run_dir: Option<PathBuf>) -> Result<()> {
    let dir = run_dir.unwrap_or_else(|| cfg.out.clone());
    let params = checkpoint::load(&dir.join("model.evim"))?;
    let split = pipeline::eval_split(cfg);
    let data = pipeline::load_split(cfg, split)?;
    if data.manifest.dim != params.arch.input_dim {
        return Err(Error::Config(format!(
            "model expects {}-dim instances, cache '{}' has {}",
            params.arch.input_dim, data.manifest.source, data.manifest.dim
        )));
    }

    let ood = pipeline::ood_source(cfg)?;
    let ood_seed = cfg.stream_seed("ood");
    let ood_name = cfg.eval.ood_name.as_str();
    // Full replacement turns the in-distribution bags into OOD bags of the
    // same shape.
    let ood_bags = match &ood {
        OodSource::Pool(pool) => Some(make_ood_mixture(&data, pool, 1.0, ood_seed)?),
        OodSource::Disabled => None,
    };

    // bag level
    let id_bags = bag_scores(&params, &data, cfg.model.pooling);
    let ood_bag_scores = ood_bags
        .as_ref()
        .map(|mix| bag_scores(&params, mix, cfg.model.pooling));
    let mut bag_ood = BTreeMap::new();
    if let Some(os) = &ood_bag_scores {
        if let Some(v) = metric_or_note(
            ood_eval(&id_bags.alphas, &os.alphas, cfg.eval.ood_measure),
            "bag OOD AUROC",
        ) {
            bag_ood.insert(ood_name.to_string(), v);
        }
    }
    let bag_report = EvalReport {
        level: Level::Bag,
        samples: id_bags.alphas.len(),
        accuracy: id_bags.accuracy(),
        label_auroc: metric_or_note(id_bags.label_auroc(), "bag label AUROC"),
        conf_measure: cfg.eval.conf_measure.name().into(),
        conf_auroc: metric_or_note(id_bags.conf_auroc(cfg.eval.conf_measure), "bag Conf. AUROC"),
        ood_measure: cfg.eval.ood_measure.name().into(),
        ood_auroc: bag_ood,
    };
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report_bag.json"), &bag_report)?;
    println!(
        "bag: accuracy {:.4}, conf {:?}, ood {:?}",
        bag_report.accuracy, bag_report.conf_auroc, bag_report.ood_auroc
    );

    for &measure in &cfg.eval.hist_measures {
        let id_vals = id_bags.measure_scores(measure);
        let ood_vals = ood_bag_scores.as_ref().map(|s| s.measure_scores(measure));
        export_histograms(
            &dir,
            &format!("hist_bag_{}", measure.name()),
            &id_vals,
            ood_vals.as_deref().map(|v| (ood_name, v)),
            cfg.eval.hist_bins,
        )?;
    }

    // instance level, both Dirichlet estimators
    for estimator in [Estimator::T, Estimator::R] {
        let scores = instance_scores(&params, &data, cfg.model.residual_form, estimator)?;
        let ood_alphas = ood_bags
            .as_ref()
            .map(|mix| ood_instance_alphas(&params, mix, cfg, estimator));
        let report = instance_report(
            cfg,
            &scores,
            ood_alphas.as_deref().map(|a| (ood_name, a)),
        );
        write_json(&dir.join(format!("report_instance_{}.json", estimator.name())), &report)?;
        println!(
            "instance/{}: accuracy {:.4}, conf {:?}, ood {:?}",
            estimator.name(),
            report.accuracy,
            report.conf_auroc,
            report.ood_auroc
        );

        for &measure in &cfg.eval.hist_measures {
            let id_vals = scores.measure_scores(measure);
            let ood_vals = ood_alphas
                .as_ref()
                .map(|a| a.iter().map(|d| d.confidence_score(measure)).collect::<Vec<_>>());
            export_histograms(
                &dir,
                &format!("hist_instance_{}_{}", estimator.name(), measure.name()),
                &id_vals,
                ood_vals.as_deref().map(|v| (ood_name, v)),
                cfg.eval.hist_bins,
            )?;
        }
    }

    // the classical attention proxy, when the pooling provides it
    if cfg.model.pooling == Pooling::Attention {
        let proxy = attention_proxy_scores(&params, &data)?;
        let report = EvalReport {
            level: Level::Instance,
            samples: proxy.scores.len(),
            accuracy: proxy.accuracy(),
            label_auroc: metric_or_note(proxy.label_auroc(), "attention-proxy label AUROC"),
            conf_measure: "attention-weight".into(),
            conf_auroc: None,
            ood_measure: cfg.eval.ood_measure.name().into(),
            ood_auroc: BTreeMap::new(),
        };
        write_json(&dir.join("report_instance_attention.json"), &report)?;
        println!(
            "instance/attention: accuracy {:.4}, label auroc {:?}",
            report.accuracy, report.label_auroc
        );
    }

    // mixture sweep: mean bag confidence per replacement ratio
    if let (OodSource::Pool(pool), false) = (&ood, cfg.eval.ratios.is_empty()) {
        sweep_ratios(cfg, &params, &data, pool, ood_seed, &dir)?;
    }

    Ok(())
}

fn sweep_ratios(
    cfg: &ExperimentConfig,
    params: &MilParams,
    data: &BagDataset,
    pool: &InstancePool,
    ood_seed: u64,
    dir: &Path,
) -> Result<()> {
    let mut csv = String::from("ratio,mean_confidence\n");
    let mut means = Vec::with_capacity(cfg.eval.ratios.len());
    for &ratio in &cfg.eval.ratios {
        let mix = make_ood_mixture(data, pool, ratio, ood_seed)?;
        let scores = bag_scores(params, &mix, cfg.model.pooling);
        let vals = scores.measure_scores(cfg.eval.sweep_measure);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        csv.push_str(&format!("{ratio},{mean}\n"));
        means.push(mean);
    }
    fs::write(dir.join("ood_sweep.csv"), csv)?;
    match spearman(&cfg.eval.ratios, &means) {
        Ok(rho) => println!(
            "ood-ratio sweep ({}): spearman {:.4}",
            cfg.eval.sweep_measure.name(),
            rho
        ),
        Err(e) => eprintln!("note: sweep correlation not computable: {e}"),
    }
    Ok(())
}
