//! Plumbing shared by the subcommands: pools, cache paths, in-memory
//! dataset construction, and OOD source resolution.

use std::path::Path;

use evimil_core::data::{
    far_field_grid, generate_bags, load_dataset, load_idx, synth2d_pool, BagDataset, InstancePool,
    Manifest, Split,
};
use evimil_core::error::{Error, Result};

use crate::config::{DatasetKind, ExperimentConfig};

pub const FAR_FIELD_RADIUS: f64 = 4.0;
pub const FAR_FIELD_EXTENT: f64 = 6.0;
pub const FAR_FIELD_STEP: f64 = 0.5;

pub fn synth_pool(cfg: &ExperimentConfig) -> InstancePool {
    synth2d_pool(cfg.stream_seed("data/pool"))
        .with_positive_class(cfg.dataset.positive_class)
}

/// MNIST-style pool for one split: train files for train/val bags, the test
/// files for test bags.
pub fn idx_pool(cfg: &ExperimentConfig, split: Split) -> Result<InstancePool> {
    let (images, labels) = idx_file_names(split);
    let pool = load_idx(&cfg.dataset.dir.join(images), &cfg.dataset.dir.join(labels))?;
    Ok(pool.with_positive_class(cfg.dataset.positive_class).with_split(split))
}

pub fn idx_file_names(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        _ => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    }
}

pub fn split_count(cfg: &ExperimentConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.dataset.n_train,
        Split::Val => cfg.dataset.n_val,
        Split::Test => cfg.dataset.n_test,
    }
}

pub fn split_seed(cfg: &ExperimentConfig, split: Split) -> u64 {
    cfg.stream_seed(&format!("data/{}", split.name()))
}

/// What a cache generated from this config must look like.
pub fn expected_manifest(
    cfg: &ExperimentConfig,
    split: Split,
    source: &str,
    dim: usize,
) -> Manifest {
    Manifest {
        n_bags: split_count(cfg, split),
        seed: split_seed(cfg, split),
        mean_len: cfg.dataset.mean_len,
        sd_len: cfg.dataset.sd_len,
        source: source.to_string(),
        split,
        dim,
    }
}

/// Manifest of an existing cache, or None when there is no readable cache.
pub fn cached_manifest(base: &Path) -> Option<Manifest> {
    let bytes = std::fs::read(base.with_extension("json")).ok()?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    serde_json::from_value(value.get("manifest")?.clone()).ok()
}

pub fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<BagDataset> {
    let base = cfg.split_base(split.name());
    if !base.with_extension("json").exists() {
        return Err(Error::Data(format!(
            "dataset cache missing: {} (run gen-data first)",
            base.display()
        )));
    }
    load_dataset(&base)
}

/// Split evaluated by `eval`: the test split when one is configured,
/// otherwise validation.
pub fn eval_split(cfg: &ExperimentConfig) -> Split {
    let has_test = match cfg.dataset.kind {
        DatasetKind::Custom => !cfg.dataset.test.is_empty(),
        _ => cfg.dataset.n_test > 0,
    };
    if has_test {
        Split::Test
    } else {
        Split::Val
    }
}

/// Train and validation sets built without touching caches; used by sweeps,
/// where every cell may change the data seed.
pub fn build_in_memory(cfg: &ExperimentConfig) -> Result<(BagDataset, BagDataset)> {
    match cfg.dataset.kind {
        DatasetKind::Synth2d => {
            let pool = synth_pool(cfg);
            let train = generate_bags(
                &pool,
                cfg.dataset.n_train,
                cfg.dataset.mean_len,
                cfg.dataset.sd_len,
                split_seed(cfg, Split::Train),
            )?;
            let pool = pool.with_split(Split::Val);
            let val = generate_bags(
                &pool,
                cfg.dataset.n_val,
                cfg.dataset.mean_len,
                cfg.dataset.sd_len,
                split_seed(cfg, Split::Val),
            )?;
            Ok((train, val))
        }
        DatasetKind::MnistBags => {
            let pool = idx_pool(cfg, Split::Train)?;
            let train = generate_bags(
                &pool,
                cfg.dataset.n_train,
                cfg.dataset.mean_len,
                cfg.dataset.sd_len,
                split_seed(cfg, Split::Train),
            )?;
            let pool = pool.with_split(Split::Val);
            let val = generate_bags(
                &pool,
                cfg.dataset.n_val,
                cfg.dataset.mean_len,
                cfg.dataset.sd_len,
                split_seed(cfg, Split::Val),
            )?;
            Ok((train, val))
        }
        DatasetKind::Custom => Ok((load_split(cfg, Split::Train)?, load_split(cfg, Split::Val)?)),
    }
}

/// Where out-of-distribution material comes from.
pub enum OodSource {
    Disabled,
    /// Replacement pool of instances (for mixtures and instance-level OOD).
    Pool(InstancePool),
}

pub fn ood_source(cfg: &ExperimentConfig) -> Result<OodSource> {
    if cfg.eval.ood_name == "none" || cfg.eval.ood_name.is_empty() {
        return Ok(OodSource::Disabled);
    }
    if !cfg.eval.ood_images.is_empty() {
        let images = cfg.data_file(&cfg.eval.ood_images);
        let labels = cfg.data_file(&cfg.eval.ood_labels);
        if !images.exists() || !labels.exists() {
            return Err(Error::Data(format!(
                "missing OOD source '{}': {} / {}",
                cfg.eval.ood_name,
                images.display(),
                labels.display()
            )));
        }
        return Ok(OodSource::Pool(load_idx(&images, &labels)?));
    }
    if cfg.dataset.kind == DatasetKind::Synth2d {
        let grid = far_field_grid(FAR_FIELD_RADIUS, FAR_FIELD_EXTENT, FAR_FIELD_STEP);
        let n = grid.rows();
        return Ok(OodSource::Pool(InstancePool::new(
            grid,
            vec![0; n],
            0,
            Split::Test,
            "far-field-grid",
        )));
    }
    Err(Error::Data(format!(
        "missing OOD source '{}': set eval.ood_images/eval.ood_labels or eval.ood_name=none",
        cfg.eval.ood_name
    )))
}
