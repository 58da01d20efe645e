//! `train`: fit a model on the cached train/val splits and write a
//! self-describing run directory: resolved config, checkpoint, history.

use std::fs;
use std::time::Instant;

use evimil_core::data::Split;
use evimil_core::error::{Error, Result};
use evimil_core::milmodel::{checkpoint, MilParams};
use evimil_core::training::train;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::pipeline;

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let train_set = pipeline::load_split(cfg, Split::Train)?;
    let val_set = pipeline::load_split(cfg, Split::Val)?;
    if train_set.manifest.dim != val_set.manifest.dim {
        return Err(Error::Config(format!(
            "train cache is {}-dimensional but val cache is {}",
            train_set.manifest.dim, val_set.manifest.dim
        )));
    }

    let arch = cfg.architecture(train_set.manifest.dim);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.stream_seed("init"));
    let params = MilParams::init(arch, &mut init_rng);
    let train_cfg = cfg.train_config(cfg.stream_seed("train"));

    let started = Instant::now();
    let (best, history) = train(params, &train_set, &val_set, &train_cfg)?;
    let elapsed = started.elapsed();

    fs::create_dir_all(&cfg.out)?;
    cfg.write_snapshot(&cfg.out.join("config.resolved"))?;
    checkpoint::save(&best, &cfg.out.join("model.evim"))?;
    fs::write(cfg.out.join("history.jsonl"), history.to_jsonl())?;

    let best_epoch = history
        .epochs
        .iter()
        .min_by(|a, b| a.criterion.partial_cmp(&b.criterion).expect("finite criteria"))
        .expect("at least one epoch");
    println!(
        "trained {} epochs in {:.1}s; best epoch {} (criterion {:.4}, val accuracy {:.4}); run dir {}",
        history.stop_epoch,
        elapsed.as_secs_f64(),
        best_epoch.epoch,
        best_epoch.criterion,
        1.0 - best_epoch.val_error,
        cfg.out.display()
    );
    Ok(())
}
