//! `report`: summarize a finished run directory in one place, on stdout and
//! as summary.json.

use std::fs;
use std::path::Path;

use evimil_core::error::Result;
use evimil_core::eval::EvalReport;
use evimil_core::training::EpochRecord;
use serde_json::json;

pub fn run(dir: &Path) -> Result<()> {
    let config = fs::read_to_string(dir.join("config.resolved"))?;
    let mut picked = Vec::new();
    for line in config.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if matches!(
                key,
                "dataset.kind" | "model.pooling" | "loss.strategy" | "run.seed" | "train.lr"
            ) {
                picked.push(format!("{key}={value}"));
            }
        }
    }
    println!("run {} ({})", dir.display(), picked.join(", "));

    let history = fs::read_to_string(dir.join("history.jsonl"))?;
    let epochs: Vec<EpochRecord> = history
        .lines()
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    let mut summary = json!({ "config": config, "epochs": epochs.len() });
    if let Some(best) = epochs
        .iter()
        .min_by(|a, b| a.criterion.partial_cmp(&b.criterion).expect("finite criteria"))
    {
        println!(
            "epochs {}; best epoch {}: criterion {:.4}, val loss {:.4}, val accuracy {:.4}",
            epochs.len(),
            best.epoch,
            best.criterion,
            best.val_loss,
            1.0 - best.val_error
        );
        summary["best_epoch"] = json!(best.epoch);
        summary["best_criterion"] = json!(best.criterion);
        summary["best_val_accuracy"] = json!(1.0 - best.val_error);
    }

    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("report_") && n.ends_with(".json"))
        .collect();
    names.sort();
    let mut reports = serde_json::Map::new();
    for name in names {
        let report: EvalReport = serde_json::from_slice(&fs::read(dir.join(&name))?)?;
        let label = name.trim_start_matches("report_").trim_end_matches(".json");
        let oods: Vec<String> = report
            .ood_auroc
            .iter()
            .map(|(k, v)| format!("{k} {v:.4}"))
            .collect();
        println!(
            "{label}: accuracy {:.4}, conf {} -> {}, ood [{}]",
            report.accuracy,
            report.conf_measure,
            report
                .conf_auroc
                .map_or("n/a".into(), |v| format!("{v:.4}")),
            oods.join(", ")
        );
        reports.insert(label.to_string(), serde_json::to_value(&report)?);
    }
    summary["reports"] = reports.into();

    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(())
}
