//! `gen-data`: write bag caches for the configured dataset. Idempotent: a
//! cache whose manifest matches the requested generation is left alone.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use evimil_core::data::{generate_bags, save_dataset, InstancePool, Split};
use evimil_core::error::{Error, Result};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::pipeline;

/// Feature dimension straight from an IDX header, without reading the data.
fn idx_dim(path: &Path) -> Result<usize> {
    let mut head = [0u8; 16];
    File::open(path)?.read_exact(&mut head)?;
    let rows = u32::from_be_bytes([head[8], head[9], head[10], head[11]]) as usize;
    let cols = u32::from_be_bytes([head[12], head[13], head[14], head[15]]) as usize;
    Ok(rows * cols)
}

fn source_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into())
}

/// Generate one split unless a matching cache already exists. The pool is
/// built lazily so cache hits never touch the source data.
fn gen_split(
    cfg: &ExperimentConfig,
    split: Split,
    source: &str,
    dim: usize,
    pool: &mut Option<InstancePool>,
    build: impl FnOnce() -> Result<InstancePool>,
) -> Result<()> {
    let n = pipeline::split_count(cfg, split);
    if n == 0 {
        return Ok(());
    }
    let base = cfg.split_base(split.name());
    let expected = pipeline::expected_manifest(cfg, split, source, dim);
    if pipeline::cached_manifest(&base).is_some_and(|m| m == expected) {
        println!("cache hit: {}", base.display());
        return Ok(());
    }
    if pool.is_none() {
        *pool = Some(build()?);
    }
    let p = pool.take().expect("just built").with_split(split);
    let dataset =
        generate_bags(&p, n, cfg.dataset.mean_len, cfg.dataset.sd_len, pipeline::split_seed(cfg, split))?;
    *pool = Some(p);
    save_dataset(&dataset, &base)?;
    println!("wrote {} bags to {}", dataset.len(), base.display());
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.dataset.dir)?;
    match cfg.dataset.kind {
        DatasetKind::Custom => Err(Error::Config(
            "dataset.kind=custom points at existing caches; nothing to generate".into(),
        )),
        DatasetKind::Synth2d => {
            let mut pool = None;
            for split in [Split::Train, Split::Val, Split::Test] {
                gen_split(cfg, split, "synth2d", 2, &mut pool, || Ok(pipeline::synth_pool(cfg)))?;
            }
            Ok(())
        }
        DatasetKind::MnistBags => {
            let (train_images, _) = pipeline::idx_file_names(Split::Train);
            let train_path = cfg.dataset.dir.join(train_images);
            let train_source = source_name(&train_path);
            let mut pool = None;
            for split in [Split::Train, Split::Val] {
                let dim = idx_dim(&train_path)?;
                gen_split(cfg, split, &train_source, dim, &mut pool, || {
                    pipeline::idx_pool(cfg, Split::Train)
                })?;
            }
            if cfg.dataset.n_test > 0 {
                let (test_images, _) = pipeline::idx_file_names(Split::Test);
                let test_path = cfg.dataset.dir.join(test_images);
                let dim = idx_dim(&test_path)?;
                let mut pool = None;
                gen_split(cfg, Split::Test, &source_name(&test_path), dim, &mut pool, || {
                    pipeline::idx_pool(cfg, Split::Test)
                })?;
            }
            Ok(())
        }
    }
}
