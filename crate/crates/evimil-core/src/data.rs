//! Instance pools, bag synthesis, the 2-D cluster benchmark, IDX ingestion,
//! out-of-distribution mixtures, and the on-disk dataset cache.
//!
//! Bags carry per-instance labels for evaluation only. The field is private;
//! training code consumes [`TrainBag`] views, which expose features and the
//! bag label and nothing else, so instance supervision cannot leak into a
//! loss without going through the loudly named eval accessor.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Array;

pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A flat pool of labelled instances bags are drawn from.
#[derive(Clone, Debug)]
pub struct InstancePool {
    pub features: Array,
    pub class_labels: Vec<u32>,
    pub positive_class: u32,
    pub split: Split,
    /// Human-readable identity recorded in dataset manifests.
    pub source: String,
}

impl InstancePool {
    pub fn new(
        features: Array,
        class_labels: Vec<u32>,
        positive_class: u32,
        split: Split,
        source: impl Into<String>,
    ) -> InstancePool {
        assert_eq!(features.rows(), class_labels.len(), "one label per instance");
        InstancePool { features, class_labels, positive_class, split, source: source.into() }
    }

    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_split(mut self, split: Split) -> InstancePool {
        self.split = split;
        self
    }

    pub fn with_positive_class(mut self, positive_class: u32) -> InstancePool {
        self.positive_class = positive_class;
        self
    }

    fn partition_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut positive = Vec::new();
        let mut other = Vec::new();
        for (i, &c) in self.class_labels.iter().enumerate() {
            if c == self.positive_class {
                positive.push(i);
            } else {
                other.push(i);
            }
        }
        (positive, other)
    }
}

/// One bag: an unordered set of instances under a single binary label.
#[derive(Clone, Debug)]
pub struct BagSample {
    pub features: Array,
    pub bag_label: u8,
    /// Per-instance ground truth, for evaluation only.
    instance_labels: Vec<u8>,
    /// The U(0,1) ratio the positive-instance count was drawn from
    /// (0 for negative bags). Generation metadata, never a model input.
    pub positive_ratio: f64,
}

impl BagSample {
    pub fn new(
        features: Array,
        bag_label: u8,
        instance_labels: Vec<u8>,
        positive_ratio: f64,
    ) -> BagSample {
        assert_eq!(features.rows(), instance_labels.len(), "one label per instance");
        let max = instance_labels.iter().copied().max().unwrap_or(0);
        assert_eq!(bag_label, max, "bag label must equal the instance-label max");
        BagSample { features, bag_label, instance_labels, positive_ratio }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instance ground truth. Evaluation only; keep out of loss code.
    pub fn instance_labels_for_eval(&self) -> &[u8] {
        &self.instance_labels
    }

    /// What training is allowed to see.
    pub fn train_view(&self) -> TrainBag<'_> {
        TrainBag { features: &self.features, bag_label: self.bag_label }
    }
}

/// Label-erased view of a bag: features plus the bag label.
#[derive(Clone, Copy, Debug)]
pub struct TrainBag<'a> {
    pub features: &'a Array,
    pub bag_label: u8,
}

/// Generation parameters and provenance; enough to regenerate bit-identically
/// together with the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_bags: usize,
    pub seed: u64,
    pub mean_len: f64,
    pub sd_len: f64,
    pub source: String,
    pub split: Split,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct BagDataset {
    pub bags: Vec<BagSample>,
    pub manifest: Manifest,
}

impl BagDataset {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }
}

/// RNG for one bag, derived so generation can shard by bag index.
fn bag_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index as u64)
}

/// Draw MIL bags from a pool: alternating positive/negative labels, lengths
/// from a clamped rounded normal, positive counts from a uniform ratio.
/// Within a bag instances are distinct; across bags the pool is reused.
pub fn generate_bags(
    pool: &InstancePool,
    n_bags: usize,
    mean_len: f64,
    sd_len: f64,
    seed: u64,
) -> Result<BagDataset> {
    let (positive_idx, other_idx) = pool.partition_indices();
    if positive_idx.is_empty() || other_idx.is_empty() {
        return Err(Error::Data(format!(
            "pool '{}' needs both positive-class and other instances",
            pool.source
        )));
    }
    let length_dist = Normal::new(mean_len, sd_len)
        .map_err(|e| Error::Config(format!("bad bag-length parameters: {e}")))?;
    let dim = pool.dim();
    let mut bags = Vec::with_capacity(n_bags);
    for i in 0..n_bags {
        let mut rng = bag_rng(seed, i);
        let k = (length_dist.sample(&mut rng).round() as i64).max(1) as usize;
        let positive = i % 2 == 0;
        let (ratio, n_pos) = if positive {
            let ratio: f64 = rng.random();
            let n_pos = ((ratio * k as f64).round() as usize).clamp(1, k);
            (ratio, n_pos)
        } else {
            (0.0, 0)
        };
        let n_other = k - n_pos;
        if n_pos > positive_idx.len() || n_other > other_idx.len() {
            return Err(Error::Data(format!(
                "bag {i} wants {n_pos}+{n_other} instances but pool '{}' has {}+{}",
                pool.source,
                positive_idx.len(),
                other_idx.len()
            )));
        }
        let mut chosen = Vec::with_capacity(k);
        let mut labels = Vec::with_capacity(k);
        for j in index::sample(&mut rng, positive_idx.len(), n_pos) {
            chosen.push(positive_idx[j]);
            labels.push(1u8);
        }
        for j in index::sample(&mut rng, other_idx.len(), n_other) {
            chosen.push(other_idx[j]);
            labels.push(0u8);
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut data = Vec::with_capacity(k * dim);
        let mut shuffled_labels = Vec::with_capacity(k);
        for &p in &order {
            data.extend_from_slice(pool.features.row(chosen[p]));
            shuffled_labels.push(labels[p]);
        }
        bags.push(BagSample::new(
            Array::from_vec(&[k, dim], data),
            u8::from(positive),
            shuffled_labels,
            ratio,
        ));
    }
    Ok(BagDataset {
        bags,
        manifest: Manifest {
            n_bags,
            seed,
            mean_len,
            sd_len,
            source: pool.source.clone(),
            split: pool.split,
            dim,
        },
    })
}

/// Three isotropic Gaussian clusters in the plane, 1000 points each; the
/// top cluster is the class of interest.
/// Cluster centers of the synthetic pool; the first is the class of
/// interest.
pub const SYNTH2D_CENTROIDS: [(f64, f64); 3] = [(0.0, 1.5), (-1.5, -0.5), (1.5, -0.5)];

pub fn synth2d_pool(seed: u64) -> InstancePool {
    const POINTS_PER_CLUSTER: usize = 1000;
    let sigma = 0.1f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("constant parameters");
    let mut data = Vec::with_capacity(3 * POINTS_PER_CLUSTER * 2);
    let mut labels = Vec::with_capacity(3 * POINTS_PER_CLUSTER);
    for (class, &(cx, cy)) in SYNTH2D_CENTROIDS.iter().enumerate() {
        for _ in 0..POINTS_PER_CLUSTER {
            data.push(cx + normal.sample(&mut rng));
            data.push(cy + normal.sample(&mut rng));
            labels.push(class as u32);
        }
    }
    InstancePool::new(
        Array::from_vec(&[3 * POINTS_PER_CLUSTER, 2], data),
        labels,
        0,
        Split::Train,
        "synth2d",
    )
}

/// Probe points far from the synthetic clusters: a uniform grid over
/// `[-extent, extent]^2` keeping only points with `|x| >= radius`.
pub fn far_field_grid(radius: f64, extent: f64, step: f64) -> Array {
    assert!(step > 0.0 && extent > 0.0, "need a positive grid");
    let mut data = Vec::new();
    let mut n = 0;
    let steps = (2.0 * extent / step).round() as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let x = -extent + i as f64 * step;
            let y = -extent + j as f64 * step;
            if x.hypot(y) >= radius {
                data.push(x);
                data.push(y);
                n += 1;
            }
        }
    }
    Array::from_vec(&[n, 2], data)
}

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!("{what}: truncated header")));
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

/// Load an image/label pair in IDX format; pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<InstancePool> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = read_be_u32(&images, 0, "images")?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let count = read_be_u32(&images, 4, "images")? as usize;
    let rows = read_be_u32(&images, 8, "images")? as usize;
    let cols = read_be_u32(&images, 12, "images")? as usize;
    let dim = rows * cols;
    if images.len() != 16 + count * dim {
        return Err(Error::Format(format!(
            "images: expected {} data bytes, found {}",
            count * dim,
            images.len().saturating_sub(16)
        )));
    }

    let magic = read_be_u32(&labels, 0, "labels")?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let label_count = read_be_u32(&labels, 4, "labels")? as usize;
    if labels.len() != 8 + label_count {
        return Err(Error::Format(format!(
            "labels: expected {label_count} data bytes, found {}",
            labels.len().saturating_sub(8)
        )));
    }
    if label_count != count {
        return Err(Error::Format(format!(
            "count mismatch: {count} images vs {label_count} labels"
        )));
    }

    let data: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let class_labels: Vec<u32> = labels[8..].iter().map(|&b| b as u32).collect();
    let source = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(InstancePool::new(
        Array::from_vec(&[count, dim], data),
        class_labels,
        0,
        Split::Train,
        source,
    ))
}

/// Replace a fixed fraction of each bag's instances with draws from another
/// pool. Replaced positions lose their positive mark and the bag label is
/// recomputed, so the label invariant stays true; uncertainty evaluation on
/// mixtures never reads labels anyway.
pub fn make_ood_mixture(
    id_bags: &BagDataset,
    ood_pool: &InstancePool,
    ratio: f64,
    seed: u64,
) -> Result<BagDataset> {
    assert!((0.0..=1.0).contains(&ratio), "ratio must lie in [0,1]");
    if ood_pool.is_empty() {
        return Err(Error::Data("replacement pool is empty".into()));
    }
    if ood_pool.dim() != id_bags.manifest.dim {
        return Err(Error::Data(format!(
            "dimension mismatch: bags are {}, pool '{}' is {}",
            id_bags.manifest.dim,
            ood_pool.source,
            ood_pool.dim()
        )));
    }
    let dim = id_bags.manifest.dim;
    let mut bags = Vec::with_capacity(id_bags.bags.len());
    for (i, bag) in id_bags.bags.iter().enumerate() {
        let k = bag.len();
        let m = (ratio * k as f64).floor() as usize;
        if m == 0 {
            bags.push(bag.clone());
            continue;
        }
        if m > ood_pool.len() {
            return Err(Error::Data(format!(
                "bag {i} wants {m} replacements but pool '{}' has {}",
                ood_pool.source,
                ood_pool.len()
            )));
        }
        let mut rng = bag_rng(seed, i);
        let positions = index::sample(&mut rng, k, m);
        let sources = index::sample(&mut rng, ood_pool.len(), m);
        let mut features = bag.features.clone();
        let mut labels = bag.instance_labels.to_vec();
        for (pos, src) in positions.iter().zip(sources.iter()) {
            let row = ood_pool.features.row(src);
            for c in 0..dim {
                features.set(pos, c, row[c]);
            }
            labels[pos] = 0;
        }
        let label = labels.iter().copied().max().unwrap_or(0);
        bags.push(BagSample::new(features, label, labels, bag.positive_ratio));
    }
    Ok(BagDataset {
        bags,
        manifest: Manifest {
            source: format!(
                "{} | {:.2} replaced from {}",
                id_bags.manifest.source, ratio, ood_pool.source
            ),
            seed,
            ..id_bags.manifest.clone()
        },
    })
}

/// Sidecar index written next to the feature blob.
#[derive(Serialize, Deserialize)]
struct CacheIndex {
    version: u32,
    manifest: Manifest,
    bag_labels: Vec<u8>,
    instance_labels: Vec<Vec<u8>>,
    positive_ratios: Vec<f64>,
    lengths: Vec<usize>,
    /// Byte offset of each bag's features inside the blob.
    offsets: Vec<u64>,
}

/// Write `<base>.json` and `<base>.blob`. Features are stored as raw
/// little-endian f64 bit patterns, so a round trip is bit-exact.
pub fn save_dataset(dataset: &BagDataset, base: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut offsets = Vec::with_capacity(dataset.bags.len());
    let mut lengths = Vec::with_capacity(dataset.bags.len());
    for bag in &dataset.bags {
        offsets.push(blob.len() as u64);
        lengths.push(bag.len());
        for &v in bag.features.as_slice() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = CacheIndex {
        version: CACHE_VERSION,
        manifest: dataset.manifest.clone(),
        bag_labels: dataset.bags.iter().map(|b| b.bag_label).collect(),
        instance_labels: dataset.bags.iter().map(|b| b.instance_labels.clone()).collect(),
        positive_ratios: dataset.bags.iter().map(|b| b.positive_ratio).collect(),
        lengths,
        offsets,
    };
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(base.with_extension("json"), serde_json::to_vec_pretty(&index)?)?;
    fs::write(base.with_extension("blob"), blob)?;
    Ok(())
}

pub fn load_dataset(base: &Path) -> Result<BagDataset> {
    let index: CacheIndex = serde_json::from_slice(&fs::read(base.with_extension("json"))?)?;
    if index.version != CACHE_VERSION {
        return Err(Error::Format(format!(
            "cache version {} unsupported (expected {CACHE_VERSION})",
            index.version
        )));
    }
    let n = index.lengths.len();
    if index.bag_labels.len() != n
        || index.instance_labels.len() != n
        || index.positive_ratios.len() != n
        || index.offsets.len() != n
    {
        return Err(Error::Format("cache index tables disagree on bag count".into()));
    }
    let blob = fs::read(base.with_extension("blob"))?;
    let dim = index.manifest.dim;
    let mut bags = Vec::with_capacity(n);
    for i in 0..n {
        let k = index.lengths[i];
        let start = index.offsets[i] as usize;
        let end = start + k * dim * 8;
        if end > blob.len() {
            return Err(Error::Format(format!("blob truncated at bag {i}")));
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        bags.push(BagSample::new(
            Array::from_vec(&[k, dim], data),
            index.bag_labels[i],
            index.instance_labels[i].clone(),
            index.positive_ratios[i],
        ));
    }
    Ok(BagDataset { bags, manifest: index.manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pool(n_pos: usize, n_other: usize, offset: f64) -> InstancePool {
        let n = n_pos + n_other;
        let mut data = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            data.push(offset + i as f64);
            data.push(offset - i as f64);
            labels.push(u32::from(i >= n_pos));
        }
        InstancePool::new(Array::from_vec(&[n, 2], data), labels, 0, Split::Train, "tiny")
    }

    #[test]
    fn synth_pool_layout() {
        let pool = synth2d_pool(7);
        assert_eq!(pool.len(), 3000);
        assert_eq!(pool.dim(), 2);
        assert_eq!(pool.positive_class, 0);
        for class in 0..3u32 {
            let count = pool.class_labels.iter().filter(|&&c| c == class).count();
            assert_eq!(count, 1000);
        }
    }

    #[test]
    fn synth_pool_cluster_statistics() {
        let pool = synth2d_pool(42);
        let centroids = [(0.0, 1.5), (-1.5, -0.5), (1.5, -0.5)];
        for (class, &(cx, cy)) in centroids.iter().enumerate() {
            let rows: Vec<&[f64]> = (0..pool.len())
                .filter(|&i| pool.class_labels[i] == class as u32)
                .map(|i| pool.features.row(i))
                .collect();
            let n = rows.len() as f64;
            let mx = rows.iter().map(|r| r[0]).sum::<f64>() / n;
            let my = rows.iter().map(|r| r[1]).sum::<f64>() / n;
            // 3 standard errors of the mean at σ² = 0.1.
            let tol = 3.0 * (0.1f64 / n).sqrt();
            assert!((mx - cx).abs() < tol, "class {class} x-centroid {mx} vs {cx}");
            assert!((my - cy).abs() < tol, "class {class} y-centroid {my} vs {cy}");
            for axis in 0..2 {
                let mean = if axis == 0 { mx } else { my };
                let var = rows.iter().map(|r| (r[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                assert!((var - 0.1).abs() < 0.02, "class {class} axis {axis} variance {var}");
            }
        }
    }

    #[test]
    fn synth_pool_deterministic() {
        let a = synth2d_pool(3);
        let b = synth2d_pool(3);
        assert_eq!(a.features.as_slice(), b.features.as_slice());
        assert!(synth2d_pool(4).features.as_slice() != a.features.as_slice());
    }

    #[test]
    fn bags_balanced_and_consistent() {
        let pool = synth2d_pool(1);
        let ds = generate_bags(&pool, 500, 10.0, 2.0, 99).unwrap();
        assert_eq!(ds.len(), 500);
        let positives = ds.bags.iter().filter(|b| b.bag_label == 1).count();
        assert_eq!(positives, 250);
        for bag in &ds.bags {
            assert!(bag.len() >= 1);
            let max = bag.instance_labels_for_eval().iter().copied().max().unwrap();
            assert_eq!(bag.bag_label, max);
            if bag.bag_label == 1 {
                assert!(bag.instance_labels_for_eval().contains(&1));
                assert!((0.0..1.0).contains(&bag.positive_ratio));
            } else {
                assert!(bag.instance_labels_for_eval().iter().all(|&y| y == 0));
                assert_eq!(bag.positive_ratio, 0.0);
            }
        }
    }

    #[test]
    fn bags_deterministic_per_seed() {
        let pool = synth2d_pool(1);
        let a = generate_bags(&pool, 40, 10.0, 2.0, 5).unwrap();
        let b = generate_bags(&pool, 40, 10.0, 2.0, 5).unwrap();
        for (x, y) in a.bags.iter().zip(&b.bags) {
            assert_eq!(x.features.as_slice(), y.features.as_slice());
            assert_eq!(x.instance_labels, y.instance_labels);
        }
        let c = generate_bags(&pool, 40, 10.0, 2.0, 6).unwrap();
        assert!(a.bags[0].features.as_slice() != c.bags[0].features.as_slice());
    }

    #[test]
    fn bags_have_distinct_instances_within() {
        let pool = synth2d_pool(2);
        let ds = generate_bags(&pool, 200, 10.0, 2.0, 7).unwrap();
        for bag in &ds.bags {
            for i in 0..bag.len() {
                for j in (i + 1)..bag.len() {
                    assert!(bag.features.row(i) != bag.features.row(j), "duplicate instance");
                }
            }
        }
    }

    #[test]
    fn bag_length_statistics() {
        let pool = synth2d_pool(3);
        let ds = generate_bags(&pool, 10_000, 10.0, 2.0, 11).unwrap();
        let lens: Vec<f64> = ds.bags.iter().map(|b| b.len() as f64).collect();
        let n = lens.len() as f64;
        let mean = lens.iter().sum::<f64>() / n;
        let sd = (lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 10.0).abs() < 0.1, "mean length {mean}");
        assert!((sd - 2.0).abs() < 0.1, "length sd {sd}");
    }

    #[test]
    fn drawn_ratios_are_uniform() {
        let pool = synth2d_pool(4);
        let ds = generate_bags(&pool, 10_000, 10.0, 2.0, 13).unwrap();
        let mut ratios: Vec<f64> = ds
            .bags
            .iter()
            .filter(|b| b.bag_label == 1)
            .map(|b| b.positive_ratio)
            .collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = ratios.len() as f64;
        let mut ks = 0.0f64;
        for (i, r) in ratios.iter().enumerate() {
            ks = ks.max(((i + 1) as f64 / n - r).abs());
            ks = ks.max((r - i as f64 / n).abs());
        }
        assert!(ks < 0.05, "Kolmogorov-Smirnov statistic {ks}");
    }

    #[test]
    fn oversized_bag_reports_pool_exhaustion() {
        let pool = tiny_pool(3, 3, 0.0);
        let err = generate_bags(&pool, 4, 50.0, 0.1, 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err:?}");
    }

    #[test]
    fn single_class_pool_rejected() {
        let mut pool = tiny_pool(3, 3, 0.0);
        pool.class_labels = vec![0; 6];
        assert!(generate_bags(&pool, 2, 5.0, 1.0, 1).is_err());
    }

    #[test]
    fn idx_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("imgs");
        let labels = dir.path().join("lbls");

        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 51, 102, 153, 204, 255, 0, 255]);
        fs::write(&images, &img).unwrap();

        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[9, 3]);
        fs::write(&labels, &lbl).unwrap();

        let pool = load_idx(&images, &labels).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.dim(), 4);
        assert_eq!(pool.class_labels, vec![9, 3]);
        assert_eq!(pool.features.at(0, 1), 51.0 / 255.0);
        assert_eq!(pool.features.at(1, 1), 1.0);

        let mut bad = img.clone();
        bad[3] = 0x42;
        fs::write(&images, &bad).unwrap();
        assert!(matches!(load_idx(&images, &labels), Err(Error::Format(_))));

        fs::write(&images, &img[..img.len() - 2]).unwrap();
        assert!(load_idx(&images, &labels).is_err());

        fs::write(&images, &img).unwrap();
        let mut short = lbl.clone();
        short[7] = 1;
        short.truncate(9);
        fs::write(&labels, &short).unwrap();
        assert!(matches!(load_idx(&images, &labels), Err(Error::Format(_))));
    }

    #[test]
    fn mixture_ratio_zero_is_identity() {
        let pool = tiny_pool(20, 20, 0.0);
        let ood = tiny_pool(1, 39, 1000.0);
        let ds = generate_bags(&pool, 10, 6.0, 1.0, 3).unwrap();
        let mixed = make_ood_mixture(&ds, &ood, 0.0, 17).unwrap();
        for (a, b) in ds.bags.iter().zip(&mixed.bags) {
            assert_eq!(a.features.as_slice(), b.features.as_slice());
            assert_eq!(a.bag_label, b.bag_label);
        }
    }

    #[test]
    fn mixture_ratio_one_replaces_everything() {
        let pool = tiny_pool(20, 20, 0.0);
        let ood = tiny_pool(1, 59, 1000.0);
        let ds = generate_bags(&pool, 10, 6.0, 1.0, 3).unwrap();
        let mixed = make_ood_mixture(&ds, &ood, 1.0, 17).unwrap();
        for bag in &mixed.bags {
            assert_eq!(bag.bag_label, 0, "fully replaced bags lose their positives");
            for i in 0..bag.len() {
                assert!(bag.features.row(i)[0] >= 999.0, "instance not from the OOD pool");
            }
        }
    }

    #[test]
    fn mixture_replaces_exact_floor_count() {
        let pool = tiny_pool(30, 30, 0.0);
        let ood = tiny_pool(1, 49, 1000.0);
        let ds = generate_bags(&pool, 6, 10.0, 0.1, 5).unwrap();
        let mixed = make_ood_mixture(&ds, &ood, 0.5, 23).unwrap();
        for (orig, bag) in ds.bags.iter().zip(&mixed.bags) {
            let replaced = (0..bag.len())
                .filter(|&i| bag.features.row(i)[0] >= 999.0)
                .count();
            assert_eq!(replaced, bag.len() / 2, "bag of {}", bag.len());
            let max = bag.instance_labels_for_eval().iter().copied().max().unwrap();
            assert_eq!(bag.bag_label, max);
            assert_eq!(orig.len(), bag.len());
        }
        let again = make_ood_mixture(&ds, &ood, 0.5, 23).unwrap();
        for (a, b) in mixed.bags.iter().zip(&again.bags) {
            assert_eq!(a.features.as_slice(), b.features.as_slice());
        }
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("cache/bags");
        let pool = synth2d_pool(9);
        let ds = generate_bags(&pool, 30, 10.0, 2.0, 21).unwrap();
        save_dataset(&ds, &base).unwrap();
        let back = load_dataset(&base).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.bags.iter().zip(&back.bags) {
            let bits_a: Vec<u64> = a.features.as_slice().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.features.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
            assert_eq!(a.bag_label, b.bag_label);
            assert_eq!(a.instance_labels, b.instance_labels);
            assert_eq!(a.positive_ratio.to_bits(), b.positive_ratio.to_bits());
        }
    }

    #[test]
    fn cache_rejects_bad_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bags");
        let pool = tiny_pool(5, 5, 0.0);
        let ds = generate_bags(&pool, 4, 4.0, 0.5, 2).unwrap();
        save_dataset(&ds, &base).unwrap();

        let json_path = base.with_extension("json");
        let text = fs::read_to_string(&json_path).unwrap();
        fs::write(&json_path, text.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
        assert!(matches!(load_dataset(&base), Err(Error::Format(_))));

        fs::write(&json_path, text).unwrap();
        let blob_path = base.with_extension("blob");
        let blob = fs::read(&blob_path).unwrap();
        fs::write(&blob_path, &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(load_dataset(&base), Err(Error::Format(_))));
    }

    #[test]
    fn far_field_grid_stays_outside_radius() {
        let grid = far_field_grid(4.0, 6.0, 0.5);
        assert!(grid.rows() > 50);
        assert_eq!(grid.cols(), 2);
        for r in 0..grid.rows() {
            let p = grid.row(r);
            assert!(p[0].hypot(p[1]) >= 4.0, "{:?}", p);
        }
        // every centroid is comfortably inside
        for (cx, cy) in SYNTH2D_CENTROIDS {
            assert!(cx.hypot(cy) < 4.0);
        }
        assert_eq!(grid, far_field_grid(4.0, 6.0, 0.5));
    }
}
