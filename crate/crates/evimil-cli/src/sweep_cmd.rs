//! `sweep`: train one run per (grid value, seed) pair and aggregate the
//! best-epoch validation metrics per grid value. Cells run on a small
//! thread pool and share nothing; a failed cell is counted and skipped.

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use evimil_core::error::{Error, Result};
use evimil_core::milmodel::MilParams;
use evimil_core::training::train;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::pipeline;

struct RunOutcome {
    cell: usize,
    ok: Option<(f64, f64)>,
    error: Option<String>,
}

fn run_cell(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let (train_set, val_set) = pipeline::build_in_memory(cfg)?;
    let arch = cfg.architecture(train_set.manifest.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed("init"));
    let params = MilParams::init(arch, &mut rng);
    let (_, history) = train(params, &train_set, &val_set, &cfg.train_config(cfg.stream_seed("train")))?;
    let best = history
        .epochs
        .iter()
        .min_by(|a, b| a.criterion.partial_cmp(&b.criterion).expect("finite criteria"))
        .expect("at least one epoch");
    Ok((1.0 - best.val_error, best.val_loss))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run(base: &ExperimentConfig, seeds: &[u64], key: &str, values: &[String]) -> Result<()> {
    if seeds.is_empty() || values.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one grid value".into()));
    }
    // resolve every cell config up front so bad grid values fail before any
    // training starts
    let mut jobs = Vec::new();
    for (cell, value) in values.iter().enumerate() {
        for &seed in seeds {
            let overrides = vec![
                (key.to_string(), value.clone()),
                ("run.seed".to_string(), seed.to_string()),
            ];
            jobs.push((cell, base.with_overrides(&overrides)?));
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (cell, cfg) = &jobs[i];
                let outcome = match run_cell(cfg) {
                    Ok(metrics) => RunOutcome { cell: *cell, ok: Some(metrics), error: None },
                    Err(e) => RunOutcome { cell: *cell, ok: None, error: Some(e.to_string()) },
                };
                outcomes.lock().expect("no poisoned worker").push(outcome);
            });
        }
    });
    let outcomes = outcomes.into_inner().expect("workers done");

    let mut csv = String::from(
        "key,value,seeds,failures,val_accuracy_mean,val_accuracy_sd,val_loss_mean,val_loss_sd\n",
    );
    for (cell, value) in values.iter().enumerate() {
        let mut accs = Vec::new();
        let mut losses = Vec::new();
        let mut failures = 0;
        for o in outcomes.iter().filter(|o| o.cell == cell) {
            match o.ok {
                Some((acc, loss)) => {
                    accs.push(acc);
                    losses.push(loss);
                }
                None => {
                    failures += 1;
                    eprintln!(
                        "cell {key}={value} failed: {}",
                        o.error.as_deref().unwrap_or("unknown")
                    );
                }
            }
        }
        let (am, asd) = if accs.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&accs) };
        let (lm, lsd) = if losses.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&losses) };
        csv.push_str(&format!("{key},{value},{},{failures},{am},{asd},{lm},{lsd}\n", seeds.len()));
        println!(
            "{key}={value}: val accuracy {:.4} ± {:.4}, val loss {:.4} ± {:.4}, failures {failures}/{}",
            am,
            asd,
            lm,
            lsd,
            seeds.len()
        );
    }
    fs::create_dir_all(&base.out)?;
    let path = base.out.join("sweep_summary.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}
