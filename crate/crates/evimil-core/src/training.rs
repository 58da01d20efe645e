//! Bag-at-a-time training: adaptive-moment updates with decoupled weight
//! decay, plateau learning-rate schedule, early stopping, and gradient
//! accumulation. Bag supervision reaches the encoder, pooling and bag head;
//! instance supervision reaches the encoder and residual head only (or just
//! the residual head when the encoder is frozen for instances).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BagDataset;
use crate::error::{Error, Result};
use crate::losses::{self, InstanceWeights, LossConfig};
use crate::milmodel::{
    bag_evidence, instance_estimates, predict, GradSet, Group, MilParams, ModelGraph, Pooling,
    ResidualForm, ALL_GROUPS,
};
use crate::numcore::{Array, Tape};

pub const POSITIVE_CLASS: usize = 1;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// Bags per loss evaluation; the optimizer steps every
    /// `batch_bags * grad_accum_steps` bags.
    pub batch_bags: usize,
    pub grad_accum_steps: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub pooling: Pooling,
    pub residual_form: ResidualForm,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-4,
            lr_decay_factor: 0.5,
            lr_patience: 10,
            early_stop_patience: 20,
            max_epochs: 200,
            batch_bags: 1,
            grad_accum_steps: 8,
            weight_decay: 1e-5,
            seed: 0,
            pooling: Pooling::Attention,
            residual_form: ResidualForm::Proportional,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = self.lr > 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_patience > 0
            && self.early_stop_patience > 0
            && self.max_epochs > 0
            && self.batch_bags > 0
            && self.grad_accum_steps > 0
            && self.weight_decay >= 0.0;
        if positive {
            Ok(())
        } else {
            Err(Error::Config("training parameters must be positive".into()))
        }
    }
}

/// KL warm-up weight at an epoch: min(1, t/10).
pub fn lambda2_at(epoch: usize) -> f64 {
    (epoch as f64 / 10.0).min(1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_error: f64,
    /// Validation loss plus error; drives scheduling and stopping.
    pub criterion: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index one past the last trained epoch.
    pub stop_epoch: usize,
}

impl TrainHistory {
    /// One JSON record per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("plain fields"));
            out.push('\n');
        }
        out
    }
}

/// Halves (by `factor`) once the observed criterion has gone `patience`
/// epochs without improving; improvement resets the age, a cut restarts it.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    age: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> PlateauScheduler {
        PlateauScheduler { lr, factor, patience, best: f64::INFINITY, age: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's criterion; returns the learning rate to use next.
    pub fn observe(&mut self, criterion: f64) -> f64 {
        if criterion < self.best {
            self.best = criterion;
            self.age = 0;
        } else {
            self.age += 1;
            if self.age >= self.patience {
                self.lr *= self.factor;
                self.age = 0;
            }
        }
        self.lr
    }
}

/// Stops once the criterion has gone `patience` epochs without improving.
#[derive(Clone, Debug)]
pub struct EarlyStop {
    best: f64,
    age: usize,
    patience: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> EarlyStop {
        EarlyStop { best: f64::INFINITY, age: 0, patience }
    }

    /// Record one epoch's criterion; returns (improved, should_stop).
    pub fn observe(&mut self, criterion: f64) -> (bool, bool) {
        if criterion < self.best {
            self.best = criterion;
            self.age = 0;
            (true, false)
        } else {
            self.age += 1;
            (false, self.age >= self.patience)
        }
    }
}

/// Which parameter groups the run's losses can reach. Groups outside the set
/// receive neither moment updates nor weight decay.
#[derive(Clone, Copy, Debug)]
struct ActiveGroups {
    psi: bool,
    theta_pool: bool,
    phi: bool,
    pi: bool,
}

impl ActiveGroups {
    fn for_run(config: &TrainConfig) -> ActiveGroups {
        ActiveGroups {
            psi: true,
            theta_pool: config.pooling == Pooling::Attention,
            phi: true,
            pi: true,
        }
    }

    fn contains(&self, g: Group) -> bool {
        match g {
            Group::Psi => self.psi,
            Group::ThetaPool => self.theta_pool,
            Group::Phi => self.phi,
            Group::Pi => self.pi,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
struct Adam {
    m: GradSet,
    v: GradSet,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &MilParams) -> Adam {
        Adam {
            m: GradSet::zeros_like(params),
            v: GradSet::zeros_like(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(
        &mut self,
        params: &mut MilParams,
        grads: &GradSet,
        lr: f64,
        weight_decay: f64,
        active: ActiveGroups,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for g in ALL_GROUPS {
            if !active.contains(g) {
                continue;
            }
            let targets = params.group_mut(g);
            let grad_arrays = grads.group(g);
            let ms = self.m.group_mut(g);
            let vs = self.v.group_mut(g);
            for (((p, grad), m), v) in targets.into_iter().zip(grad_arrays).zip(ms).zip(vs) {
                let (ps, gr, ma, va) =
                    (p.as_mut_slice(), grad.as_slice(), m.as_mut_slice(), v.as_mut_slice());
                for i in 0..ps.len() {
                    ma[i] = self.beta1 * ma[i] + (1.0 - self.beta1) * gr[i];
                    va[i] = self.beta2 * va[i] + (1.0 - self.beta2) * gr[i] * gr[i];
                    let mhat = ma[i] / bc1;
                    let vhat = va[i] / bc2;
                    ps[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + weight_decay * ps[i]);
                }
            }
        }
    }
}

/// Weights for the positive-bag strategies, read off the pooled-head
/// instance outputs as plain values.
fn weights_from_graph(alpha_t: &Array) -> InstanceWeights {
    let w = (0..alpha_t.rows())
        .map(|k| {
            let row = alpha_t.row(k);
            row[POSITIVE_CLASS] / row.iter().sum::<f64>()
        })
        .collect();
    InstanceWeights::new(w)
}

/// Mean validation loss, plus classification error of the bag head.
///
/// The loss is always evaluated with the KL weight fully warmed up, so the
/// criterion is comparable across epochs; otherwise early epochs would look
/// better just because their objective carries less KL mass.
fn validate(params: &MilParams, val: &BagDataset, config: &TrainConfig) -> (f64, f64) {
    let saturated = config.loss.lambda2_warmup_epochs.ceil() as usize;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for bag in &val.bags {
        let view = bag.train_view();
        let bf = bag_evidence(params, view.features, config.pooling);
        let inf = instance_estimates(params, view.features, config.residual_form);
        let weights = losses::instance_weights(&inf.alpha_t, POSITIVE_CLASS);
        loss_sum += losses::total_objective_value(
            &bf.bag_alpha,
            &inf.alpha_ins,
            &weights,
            view.bag_label as usize,
            &config.loss,
            saturated,
        );
        if predict(&bf.bag_alpha).0 == view.bag_label as usize {
            correct += 1;
        }
    }
    let n = val.len() as f64;
    (loss_sum / n, 1.0 - correct as f64 / n)
}

/// Train until early stop or the epoch cap; returns the parameters of the
/// best validation criterion along with the per-epoch history.
pub fn train(
    params: MilParams,
    train_set: &BagDataset,
    val: &BagDataset,
    config: &TrainConfig,
) -> Result<(MilParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    if train_set.manifest.dim != params.arch.input_dim {
        return Err(Error::Config(format!(
            "model expects {}-dim instances, data has {}",
            params.arch.input_dim, train_set.manifest.dim
        )));
    }

    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&params);
    let active = ActiveGroups::for_run(config);
    let window = config.batch_bags * config.grad_accum_steps;
    let mut scheduler = PlateauScheduler::new(config.lr, config.lr_decay_factor, config.lr_patience);
    let mut stopper = EarlyStop::new(config.early_stop_patience);
    let mut best_params = params.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let lr = scheduler.lr();
        let mut epoch_loss = 0.0;
        let mut accum = GradSet::zeros_like(&params);
        let mut accumulated = 0usize;
        for (step, &bag_idx) in order.iter().enumerate() {
            let view = train_set.bags[bag_idx].train_view();
            let tape = Tape::new();
            let graph = ModelGraph::new(
                &tape,
                &params,
                config.loss.freeze_psi_in_instance_loss,
                config.residual_form,
            );
            let x = tape.leaf(view.features.clone());
            let bag_graph = graph.bag_forward(x, config.pooling);
            let ins_graph = graph.instance_forward(x);
            let alpha_t = ins_graph.alpha_t.value();
            if !alpha_t.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, bag: bag_idx });
            }
            let weights = weights_from_graph(&alpha_t);
            let loss = losses::total_objective_for(
                &tape,
                &bag_graph,
                &ins_graph,
                &weights,
                view.bag_label as usize,
                &config.loss,
                epoch,
            );
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, bag: bag_idx });
            }
            epoch_loss += loss_value;
            let grads = tape.backward(loss);
            accum.accumulate(&graph.read_grads(&grads));
            accumulated += 1;
            if accumulated == window || step + 1 == order.len() {
                accum.scale(1.0 / accumulated as f64);
                adam.step(&mut params, &accum, lr, config.weight_decay, active);
                let blown = ALL_GROUPS
                    .iter()
                    .flat_map(|&g| params.group(g))
                    .any(|a| !a.all_finite());
                if blown {
                    return Err(Error::NonFiniteLoss { epoch, bag: bag_idx });
                }
                accum = GradSet::zeros_like(&params);
                accumulated = 0;
            }
        }

        let (val_loss, val_error) = validate(&params, val, config);
        let criterion = val_loss + val_error;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_error,
            criterion,
            lr,
        });
        history.stop_epoch = epoch + 1;

        let (improved, stop) = stopper.observe(criterion);
        if improved {
            best_params = params.clone();
        }
        scheduler.observe(criterion);
        if stop {
            break;
        }
    }
    Ok((best_params, history))
}
