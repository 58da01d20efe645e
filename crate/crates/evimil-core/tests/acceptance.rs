//! Acceptance suite: one test per release criterion, each ending in a
//! single `[PASS]`/`[FAIL]` verdict line (visible with `--nocapture`).
//!
//! The two experiment criteria need the MNIST and Fashion-MNIST IDX files;
//! run `python3 scripts/fetch_data.py` once to place them under `data/`
//! (or point `EVIMIL_DATA_DIR` at them).

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use evimil_core::data::{
    far_field_grid, generate_bags, load_idx, make_ood_mixture, synth2d_pool, BagDataset,
    InstancePool, Split, SYNTH2D_CENTROIDS,
};
use evimil_core::dirichlet::{ConfidenceKind, DirichletParams};
use evimil_core::eval::{bag_scores, instance_scores, spearman, Estimator};
use evimil_core::losses::{self, mirel_instance_loss, InstanceWeights, LossConfig, Strategy};
use evimil_core::milmodel::{
    bag_evidence, checkpoint, instance_r, instance_t, Architecture, MilParams, Pooling,
    ResidualForm,
};
use evimil_core::numcore::{grad_check, Array};
use evimil_core::training::{train, TrainConfig};

fn check(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

fn d(alpha: Vec<f64>) -> DirichletParams {
    DirichletParams::new(alpha)
}

// ---------------------------------------------------------------- criterion 1

fn random_alpha_rows(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Array {
    // Away from alpha = 1 so the evidence log and the finite-difference
    // probes stay smooth.
    Array::from_vec(&[k, c], (0..k * c).map(|_| rng.random_range(1.2..8.0)).collect())
}

fn one_hot_rows(k: usize, c: usize, class: usize) -> Array {
    let mut data = vec![0.0; k * c];
    for r in 0..k {
        data[r * c + class] = 1.0;
    }
    Array::from_vec(&[k, c], data)
}

#[test]
fn c1_loss_gradients_match_central_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut worst: f64 = 0.0;
    let mut configs = 0usize;

    for _ in 0..50 {
        let c = rng.random_range(2..=5);
        let class = rng.random_range(0..c);
        let alpha = random_alpha_rows(&mut rng, 1, c);
        let y = one_hot_rows(1, c, class);

        worst = worst.max(grad_check(
            |t, p| losses::mse_term_rows(t, p[0], &y).sum(),
            &[alpha.clone()],
            1e-5,
        ));
        worst = worst.max(grad_check(
            |t, p| losses::fim_term_rows(t, p[0]).sum(),
            &[alpha.clone()],
            1e-5,
        ));
        worst = worst.max(grad_check(
            |t, p| losses::kl_term_rows(t, p[0], &y).sum(),
            &[alpha.clone()],
            1e-5,
        ));
        worst = worst.max(grad_check(
            |t, p| losses::red_rows(t, p[0], class, 1e-8).sum(),
            &[alpha],
            1e-5,
        ));
        configs += 4;
    }

    for strategy in [Strategy::Naive, Strategy::WeightedLoss, Strategy::WeightedEvidence] {
        for _ in 0..50 {
            let k = rng.random_range(1..=8);
            let alpha = random_alpha_rows(&mut rng, k, 2);
            let bag_label = rng.random_range(0..2usize);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
            let w = InstanceWeights::new(raw);
            let lambda1 = rng.random_range(0.001..0.1);
            let lambda2 = rng.random_range(0.0..1.0);
            worst = worst.max(grad_check(
                |t, p| losses::mirel_loss(t, p[0], &w, bag_label, strategy, lambda1, lambda2),
                &[alpha],
                1e-5,
            ));
            configs += 1;
        }
    }

    for _ in 0..50 {
        let k = rng.random_range(1..=8);
        let bag_alpha = random_alpha_rows(&mut rng, 1, 2);
        let alpha_ins = random_alpha_rows(&mut rng, k, 2);
        let bag_label = rng.random_range(0..2usize);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let w = InstanceWeights::new(raw);
        let config = LossConfig {
            lambda1: rng.random_range(0.001..0.1),
            strategy: *[Strategy::Naive, Strategy::WeightedLoss, Strategy::WeightedEvidence]
                .choose(&mut rng)
                .unwrap(),
            use_red: rng.random_bool(0.5),
            ..LossConfig::default()
        };
        let epoch = rng.random_range(0..20);
        worst = worst.max(grad_check(
            |t, p| losses::total_objective(t, p[0], p[1], &w, bag_label, &config, epoch),
            &[bag_alpha, alpha_ins],
            1e-5,
        ));
        configs += 1;
    }

    let secs = started.elapsed().as_secs_f64();
    check(
        "gradient suite",
        worst <= 1e-4 && secs < 60.0,
        &format!("worst rel err {worst:.2e} over {configs} configs in {secs:.1}s (need <= 1e-4, < 60s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c2_dirichlet_closed_forms_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    let mut worst_entropy_gap: f64 = 0.0;
    let mut worst_identity_gap: f64 = 0.0;
    let mut min_mi = f64::INFINITY;

    for _ in 0..50 {
        let c = rng.random_range(2..=6);
        let alpha: Vec<f64> = (0..c).map(|_| 10f64.powf(rng.random_range(-0.3..1.3))).collect();
        let dir = d(alpha.clone());

        let gammas: Vec<Gamma<f64>> =
            alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let mut acc = 0.0;
        for _ in 0..100_000 {
            let draws: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            acc += draws
                .iter()
                .map(|&x| {
                    let p = x / total;
                    if p > 0.0 { -p * p.ln() } else { 0.0 }
                })
                .sum::<f64>();
        }
        let mc = acc / 100_000.0;
        worst_entropy_gap = worst_entropy_gap.max((dir.expected_entropy() - mc).abs());

        let mi = dir.mutual_information();
        let gap = (mi - (dir.predictive_entropy() - dir.expected_entropy())).abs();
        worst_identity_gap = worst_identity_gap.max(gap);
        min_mi = min_mi.min(mi);
    }

    let pass = worst_entropy_gap <= 1e-2 && worst_identity_gap <= 1e-10 && min_mi >= -1e-12;
    check(
        "dirichlet oracle suite",
        pass,
        &format!(
            "entropy vs MC {worst_entropy_gap:.2e} (<= 1e-2), identity gap {worst_identity_gap:.1e} (<= 1e-10), min MI {min_mi:.1e} (>= -1e-12)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

fn random_model(rng: &mut ChaCha8Rng, input_dim: usize) -> MilParams {
    let layers = rng.random_range(1..=2);
    let arch = Architecture {
        input_dim,
        encoder: (0..layers).map(|_| rng.random_range(4..=10)).collect(),
        attention_dim: rng.random_range(3..=8),
        residual_hidden: rng.random_range(3..=8),
        num_classes: 2,
    };
    MilParams::init(arch, rng)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn c3_pooling_invariance_and_singleton_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    let mut worst_perm: f64 = 0.0;
    let mut worst_dup: f64 = 0.0;

    for pooling in [Pooling::Mean, Pooling::Max, Pooling::Attention] {
        for _ in 0..200 {
            let dim = rng.random_range(2..=5);
            let params = random_model(&mut rng, dim);

            let k = rng.random_range(1..=10);
            let data: Vec<f64> = (0..k * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let bag = Array::from_vec(&[k, dim], data.clone());
            let base = bag_evidence(&params, &bag, pooling).bag_alpha;

            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let mut shuffled = Vec::with_capacity(k * dim);
            for &r in &order {
                shuffled.extend_from_slice(&data[r * dim..(r + 1) * dim]);
            }
            let permuted =
                bag_evidence(&params, &Array::from_vec(&[k, dim], shuffled), pooling).bag_alpha;
            worst_perm = worst_perm.max(max_abs_diff(base.alpha(), permuted.alpha()));

            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let n = rng.random_range(1..=8);
            let copies = Array::from_vec(&[n, dim], x.repeat(n));
            let pooled = bag_evidence(&params, &copies, pooling).bag_alpha;
            let single = instance_t(&params, &x);
            worst_dup = worst_dup.max(max_abs_diff(pooled.alpha(), single.alpha()));
        }
    }

    let pass = worst_perm <= 1e-9 && worst_dup <= 1e-9;
    check(
        "structural identities",
        pass,
        &format!(
            "permutation gap {worst_perm:.1e}, duplicate-bag gap {worst_dup:.1e} (both <= 1e-9, 3 poolings x 200)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn c4_strategy_chain_on_binary_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut violations = 0usize;

    for _ in 0..1000 {
        let k = rng.random_range(1..=32);
        let alphas: Vec<DirichletParams> = (0..k)
            .map(|_| {
                d(vec![
                    1.0 + rng.random_range(0..2) as f64,
                    1.0 + rng.random_range(0..2) as f64,
                ])
            })
            .collect();
        // Sortedness precondition: the largest weight goes to the smallest
        // per-instance surrogate loss.
        let per_instance: Vec<f64> =
            alphas.iter().map(|a| losses::iedl_loss(a, &[0.0, 1.0], 0.0, 0.0)).collect();
        let mut raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for r in raw.iter_mut() {
            *r /= total;
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| per_instance[i].partial_cmp(&per_instance[j]).unwrap());
        raw.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut w_bar = vec![0.0; k];
        for (rank, &idx) in order.iter().enumerate() {
            w_bar[idx] = raw[rank];
        }
        let w = InstanceWeights { w: w_bar.clone(), w_bar };

        let s1 = mirel_instance_loss(&alphas, &w, 1, Strategy::Naive, 0.0, 0.0);
        let s2 = mirel_instance_loss(&alphas, &w, 1, Strategy::WeightedLoss, 0.0, 0.0);
        let s3 = mirel_instance_loss(&alphas, &w, 1, Strategy::WeightedEvidence, 0.0, 0.0);
        // 1e-12 absorbs summation roundoff on exact ties.
        if s3 > s2 + 1e-12 || s2 > s1 + 1e-12 {
            violations += 1;
        }
    }

    check(
        "strategy ordering chain",
        violations == 0,
        &format!("{violations} violations on 1000 positive bags (need 0)"),
    );
}

// ---------------------------------------------------------------- criterion 5

fn synth_train_config(seed: u64) -> TrainConfig {
    TrainConfig { lr: 5e-5, seed, ..TrainConfig::default() }
}

/// Train the full synthetic recipe for one root seed and measure the
/// instance-recovery quantities.
fn synth_run(root: u64) -> (f64, f64, f64) {
    let pool = synth2d_pool(1000 + root);
    let train_set = generate_bags(&pool, 2000, 10.0, 2.0, 2000 + root).unwrap();
    let val_pool = pool.clone().with_split(Split::Val);
    let val_set = generate_bags(&val_pool, 500, 10.0, 2.0, 3000 + root).unwrap();

    let arch = Architecture {
        input_dim: 2,
        encoder: vec![128, 128],
        attention_dim: 64,
        residual_hidden: 64,
        num_classes: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4000 + root);
    let params = MilParams::init(arch, &mut rng);
    let (best, _) = train(params, &train_set, &val_set, &synth_train_config(5000 + root)).unwrap();

    let mut correct = 0usize;
    for i in 0..pool.len() {
        let alpha = instance_r(&best, pool.features.row(i), ResidualForm::Proportional);
        let pred = evimil_core::milmodel::predict(&alpha).0;
        let truth = usize::from(pool.class_labels[i] == pool.positive_class);
        if pred == truth {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / pool.len() as f64;

    let grid = far_field_grid(4.0, 6.0, 0.5);
    let far_mean = (0..grid.rows())
        .map(|i| instance_r(&best, grid.row(i), ResidualForm::Proportional).alpha0())
        .sum::<f64>()
        / grid.rows() as f64;
    let centroid_mean = SYNTH2D_CENTROIDS
        .iter()
        .map(|&(x, y)| instance_r(&best, &[x, y], ResidualForm::Proportional).alpha0())
        .sum::<f64>()
        / SYNTH2D_CENTROIDS.len() as f64;

    (accuracy, far_mean, centroid_mean)
}

#[test]
fn c5_synthetic_2d_recovers_instances_and_uncertainty() {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for root in [1u64, 2, 3] {
        let (acc, far, centroid) = synth_run(root);
        pass &= acc >= 0.95 && far < centroid;
        lines.push(format!("seed {root}: R acc {acc:.4}, alpha0 far {far:.2} vs centroid {centroid:.2}"));
    }
    let secs = started.elapsed().as_secs_f64();
    pass &= secs < 900.0;
    check(
        "synthetic 2d experiment",
        pass,
        &format!("{} in {secs:.0}s (need acc >= 0.95, far < centroid each seed, < 900s)", lines.join("; ")),
    );
}

// ----------------------------------------------------------- criteria 6 and 7

fn data_dir() -> PathBuf {
    std::env::var_os("EVIMIL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

struct MnistRun {
    model: MilParams,
    test: BagDataset,
    fashion: InstancePool,
    train_secs: f64,
}

fn mnist_run() -> &'static MnistRun {
    static RUN: OnceLock<MnistRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = data_dir();
        let load = |images: &str, labels: &str| {
            load_idx(&dir.join(images), &dir.join(labels)).unwrap_or_else(|e| {
                panic!("{e}; run `python3 scripts/fetch_data.py` to fetch the IDX files")
            })
        };

        let started = Instant::now();
        let pool = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
            .with_positive_class(9);
        let train_set = generate_bags(&pool, 500, 10.0, 2.0, 601).unwrap();
        let val_pool = pool.with_split(Split::Val);
        let val_set = generate_bags(&val_pool, 100, 10.0, 2.0, 602).unwrap();

        let test_pool = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
            .with_positive_class(9)
            .with_split(Split::Test);
        let test = generate_bags(&test_pool, 1000, 10.0, 2.0, 603).unwrap();

        let fashion = load("fashion-images-idx3-ubyte", "fashion-labels-idx1-ubyte");

        let arch = Architecture {
            input_dim: 784,
            encoder: vec![500, 256],
            attention_dim: 64,
            residual_hidden: 64,
            num_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(604);
        let params = MilParams::init(arch, &mut rng);
        let config = TrainConfig { seed: 605, ..TrainConfig::default() };
        let (model, _) = train(params, &train_set, &val_set, &config).unwrap();

        MnistRun { model, test, fashion, train_secs: started.elapsed().as_secs_f64() }
    })
}

#[test]
fn c6_mnist_bags_accuracy_confidence_and_ood() {
    let run = mnist_run();
    let started = Instant::now();

    let bags = bag_scores(&run.model, &run.test, Pooling::Attention);
    let accuracy = bags.accuracy();

    let instances =
        instance_scores(&run.model, &run.test, ResidualForm::Proportional, Estimator::R).unwrap();
    let conf = instances.conf_auroc(ConfidenceKind::MaxAlpha).unwrap();

    let ood_bags = make_ood_mixture(&run.test, &run.fashion, 1.0, 606).unwrap();
    let ood = bag_scores(&run.model, &ood_bags, Pooling::Attention);
    let ood_auroc = evimil_core::eval::ood_eval(
        &bags.alphas,
        &ood.alphas,
        ConfidenceKind::Alpha0,
    )
    .unwrap();

    let secs = run.train_secs + started.elapsed().as_secs_f64();
    let pass = accuracy >= 0.90 && conf >= 0.80 && ood_auroc >= 0.75 && secs < 2700.0;
    check(
        "mnist-bags experiment",
        pass,
        &format!(
            "bag acc {accuracy:.4} (>= 0.90), R conf auroc {conf:.4} (>= 0.80), fashion ood auroc {ood_auroc:.4} (>= 0.75), {secs:.0}s (< 2700s)"
        ),
    );
}

#[test]
fn c7_confidence_falls_with_ood_ratio() {
    let run = mnist_run();
    let ratios = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut means = Vec::with_capacity(ratios.len());
    for (i, &ratio) in ratios.iter().enumerate() {
        let mixed = make_ood_mixture(&run.test, &run.fashion, ratio, 700 + i as u64).unwrap();
        let scored = bag_scores(&run.model, &mixed, Pooling::Attention);
        let scores = scored.measure_scores(ConfidenceKind::NegExpectedEntropy);
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let rho = spearman(&ratios, &means).unwrap();
    check(
        "ood-ratio monotonicity",
        rho <= -0.8,
        &format!("spearman {rho:.4} over ratios {ratios:?}, means {means:?} (need <= -0.8)"),
    );
}

// ---------------------------------------------------------------- criterion 8

/// One miniature train + eval cycle, returning the checkpoint bytes and a
/// serialized report.
fn determinism_cycle(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let pool = synth2d_pool(801);
    let train_set = generate_bags(&pool, 200, 10.0, 2.0, 802).unwrap();
    let val_pool = pool.clone().with_split(Split::Val);
    let val_set = generate_bags(&val_pool, 50, 10.0, 2.0, 803).unwrap();

    let arch = Architecture {
        input_dim: 2,
        encoder: vec![16, 16],
        attention_dim: 8,
        residual_hidden: 8,
        num_classes: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(804);
    let params = MilParams::init(arch, &mut rng);
    let config = TrainConfig { lr: 5e-5, seed: 805, max_epochs: 12, ..TrainConfig::default() };
    let (best, history) = train(params, &train_set, &val_set, &config).unwrap();

    let path = dir.join("model.evim");
    checkpoint::save(&best, &path).unwrap();
    let model_bytes = std::fs::read(&path).unwrap();

    let scored = bag_scores(&best, &val_set, Pooling::Attention);
    let report = serde_json::json!({
        "accuracy": scored.accuracy(),
        "alpha0": scored.alphas.iter().map(|a| a.alpha0()).collect::<Vec<f64>>(),
        "history": history.to_jsonl(),
    });
    (model_bytes, serde_json::to_vec(&report).unwrap())
}

#[test]
fn c8_identical_config_and_seed_are_bit_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (model_a, report_a) = determinism_cycle(dir_a.path());
    let (model_b, report_b) = determinism_cycle(dir_b.path());
    let pass = model_a == model_b && report_a == report_b;
    check(
        "determinism",
        pass,
        &format!(
            "checkpoint {} bytes, report {} bytes, both runs byte-identical: {pass}",
            model_a.len(),
            report_a.len()
        ),
    );
}
