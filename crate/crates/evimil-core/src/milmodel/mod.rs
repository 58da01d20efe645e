//! The MIL network family.
//!
//! One parameter set carries four disjoint groups:
//! - `psi`: per-instance encoder MLP, D → … → M, ReLU throughout;
//! - `theta_pool`: attention scorer t(h) = wᵀ tanh(V h);
//! - `phi`: linear bag head, M → C;
//! - `pi`: residual instance head MLP, M → L' → C, tanh-bounded output.
//!
//! Three estimators are derived from it. The bag estimator S pools encoded
//! instances and maps the pooled embedding through the head, yielding bag
//! evidence exp(logits). The instance estimator T feeds a single embedding
//! through the same head, skipping pooling entirely. The residual estimator R
//! rescales T's logits per class by (1 + s) with s ∈ [−1,1] produced by the
//! `pi` head, so R can sharpen or cancel T without ever being able to flip
//! sign through zero on its own.
//!
//! Forward passes are built on a [`Tape`] so the identical code path serves
//! training (gradients) and evaluation (values only). Within one loss graph
//! the head `phi` participates in T's forward as a constant copy: the
//! instance-side objective must not move the bag head.

pub mod checkpoint;

use rand::Rng;

use crate::dirichlet::DirichletParams;
use crate::numcore::{Array, Gradients, Tape, Var};

/// One dense layer, weights [fan_in, fan_out] and bias [fan_out].
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array,
    pub b: Array,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Dense {
        // Fan-in scaled uniform init; the reference material never fixes one,
        // so the common U(−1/√fan_in, 1/√fan_in) is used.
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        Dense {
            w: Array::matrix(fan_in, fan_out, draw(fan_in * fan_out)),
            b: Array::vector(draw(fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Pooling operator applied between encoder and bag head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Max,
    Attention,
}

impl Pooling {
    pub fn parse(s: &str) -> Option<Pooling> {
        match s {
            "mean" => Some(Pooling::Mean),
            "max" => Some(Pooling::Max),
            "attention" => Some(Pooling::Attention),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::Attention => "attention",
        }
    }
}

/// How R combines the residual scale with T's logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResidualForm {
    /// r_logits = t_logits ⊙ (1 + scale). The default.
    #[default]
    Proportional,
    /// r_logits = t_logits + scale. Ablation variant.
    Additive,
}

impl ResidualForm {
    pub fn parse(s: &str) -> Option<ResidualForm> {
        match s {
            "proportional" => Some(ResidualForm::Proportional),
            "additive" => Some(ResidualForm::Additive),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResidualForm::Proportional => "proportional",
            ResidualForm::Additive => "additive",
        }
    }
}

/// Layer sizes for a model; everything else about the architecture is fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Encoder widths, last entry is the embedding size M.
    pub encoder: Vec<usize>,
    pub attention_dim: usize,
    pub residual_hidden: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn embed_dim(&self) -> usize {
        *self.encoder.last().expect("encoder needs at least one layer")
    }
}

/// Parameter groups of one MIL model. Groups are disjoint and addressed
/// individually so the optimizer can route updates per objective.
#[derive(Clone, Debug, PartialEq)]
pub struct MilParams {
    pub arch: Architecture,
    pub psi: Vec<Dense>,
    /// Attention scorer: V [M, L] then w [L, 1]; no biases.
    pub theta_v: Array,
    pub theta_w: Array,
    pub phi: Dense,
    pub pi: Vec<Dense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Psi,
    ThetaPool,
    Phi,
    Pi,
}

pub const ALL_GROUPS: [Group; 4] = [Group::Psi, Group::ThetaPool, Group::Phi, Group::Pi];

impl MilParams {
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> MilParams {
        assert_eq!(arch.num_classes, 2, "binary MIL only");
        assert!(!arch.encoder.is_empty(), "encoder needs at least one layer");
        let mut psi = Vec::new();
        let mut d = arch.input_dim;
        for &width in &arch.encoder {
            psi.push(Dense::init(d, width, rng));
            d = width;
        }
        let m = arch.embed_dim();
        let bound = 1.0 / (m as f64).sqrt();
        let theta_v = Array::matrix(m, arch.attention_dim, (0..m * arch.attention_dim).map(|_| rng.random_range(-bound..bound)).collect());
        let abound = 1.0 / (arch.attention_dim as f64).sqrt();
        let theta_w = Array::matrix(arch.attention_dim, 1, (0..arch.attention_dim).map(|_| rng.random_range(-abound..abound)).collect());
        let phi = Dense::init(m, arch.num_classes, rng);
        let pi = vec![Dense::init(m, arch.residual_hidden, rng), Dense::init(arch.residual_hidden, arch.num_classes, rng)];
        MilParams { arch, psi, theta_v, theta_w, phi, pi }
    }

    /// Arrays of one group in fixed declaration order (weights then bias per
    /// layer). The checkpoint format and the optimizer both rely on it.
    pub fn group(&self, g: Group) -> Vec<&Array> {
        match g {
            Group::Psi => self.psi.iter().flat_map(|d| [&d.w, &d.b]).collect(),
            Group::ThetaPool => vec![&self.theta_v, &self.theta_w],
            Group::Phi => vec![&self.phi.w, &self.phi.b],
            Group::Pi => self.pi.iter().flat_map(|d| [&d.w, &d.b]).collect(),
        }
    }

    pub fn group_mut(&mut self, g: Group) -> Vec<&mut Array> {
        match g {
            Group::Psi => self.psi.iter_mut().flat_map(|d| [&mut d.w, &mut d.b]).collect(),
            Group::ThetaPool => vec![&mut self.theta_v, &mut self.theta_w],
            Group::Phi => vec![&mut self.phi.w, &mut self.phi.b],
            Group::Pi => self.pi.iter_mut().flat_map(|d| [&mut d.w, &mut d.b]).collect(),
        }
    }
}

/// Per-group gradient arrays, aligned with [`MilParams::group`] order.
#[derive(Clone, Debug)]
pub struct GradSet {
    pub psi: Vec<Array>,
    pub theta_pool: Vec<Array>,
    pub phi: Vec<Array>,
    pub pi: Vec<Array>,
}

impl GradSet {
    pub fn zeros_like(params: &MilParams) -> GradSet {
        let z = |g: Group| params.group(g).iter().map(|a| Array::zeros(a.shape())).collect();
        GradSet { psi: z(Group::Psi), theta_pool: z(Group::ThetaPool), phi: z(Group::Phi), pi: z(Group::Pi) }
    }

    pub fn group(&self, g: Group) -> &Vec<Array> {
        match g {
            Group::Psi => &self.psi,
            Group::ThetaPool => &self.theta_pool,
            Group::Phi => &self.phi,
            Group::Pi => &self.pi,
        }
    }

    pub fn group_mut(&mut self, g: Group) -> &mut Vec<Array> {
        match g {
            Group::Psi => &mut self.psi,
            Group::ThetaPool => &mut self.theta_pool,
            Group::Phi => &mut self.phi,
            Group::Pi => &mut self.pi,
        }
    }

    pub fn accumulate(&mut self, other: &GradSet) {
        for g in ALL_GROUPS {
            for (a, b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in ALL_GROUPS {
            for a in self.group_mut(g) {
                a.scale_assign(s);
            }
        }
    }
}

struct DenseLeaf<'t> {
    w: Var<'t>,
    b: Var<'t>,
}

impl<'t> DenseLeaf<'t> {
    fn enter(tape: &'t Tape, d: &Dense) -> DenseLeaf<'t> {
        DenseLeaf { w: tape.leaf(d.w.clone()), b: tape.leaf(d.b.clone()) }
    }

    fn apply(&self, x: Var<'t>) -> Var<'t> {
        x.matmul(self.w).add(self.b)
    }
}

/// Bag-level forward pass, on the tape.
pub struct BagGraph<'t> {
    /// [K, M]
    pub embeddings: Var<'t>,
    /// [K, 1]; only for attention pooling.
    pub attention: Option<Var<'t>>,
    /// [1, C]
    pub bag_logits: Var<'t>,
    /// [1, C], exp(logits) + 1
    pub bag_alpha: Var<'t>,
}

/// Instance-level forward pass (estimators T and R for all K instances).
pub struct InstanceGraph<'t> {
    /// [K, C]
    pub t_logits: Var<'t>,
    /// [K, C], values in [−1, 1]
    pub residual_scale: Var<'t>,
    /// [K, C]
    pub r_logits: Var<'t>,
    /// [K, C]
    pub alpha_t: Var<'t>,
    /// [K, C]
    pub alpha_ins: Var<'t>,
}

/// One model's parameters entered on a tape, with the instance path's routing
/// already wired: `phi_const` (and `psi_const` when the encoder is frozen for
/// the instance objective) are separate leaves whose gradients are discarded.
pub struct ModelGraph<'t> {
    psi: Vec<DenseLeaf<'t>>,
    theta_v: Var<'t>,
    theta_w: Var<'t>,
    phi: DenseLeaf<'t>,
    phi_const: DenseLeaf<'t>,
    psi_const: Option<Vec<DenseLeaf<'t>>>,
    pi: Vec<DenseLeaf<'t>>,
    residual_form: ResidualForm,
}

impl<'t> ModelGraph<'t> {
    pub fn new(tape: &'t Tape, params: &MilParams, freeze_psi_for_instances: bool, residual_form: ResidualForm) -> ModelGraph<'t> {
        ModelGraph {
            psi: params.psi.iter().map(|d| DenseLeaf::enter(tape, d)).collect(),
            theta_v: tape.leaf(params.theta_v.clone()),
            theta_w: tape.leaf(params.theta_w.clone()),
            phi: DenseLeaf::enter(tape, &params.phi),
            phi_const: DenseLeaf::enter(tape, &params.phi),
            psi_const: freeze_psi_for_instances.then(|| params.psi.iter().map(|d| DenseLeaf::enter(tape, d)).collect()),
            pi: params.pi.iter().map(|d| DenseLeaf::enter(tape, d)).collect(),
            residual_form,
        }
    }

    fn encode_with(layers: &[DenseLeaf<'t>], x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for layer in layers {
            h = layer.apply(h).relu();
        }
        h
    }

    /// Encoder producing [K, M]; rows are per-instance, nothing mixes across
    /// rows before pooling.
    pub fn encode(&self, x: Var<'t>) -> Var<'t> {
        Self::encode_with(&self.psi, x)
    }

    /// Pool [K, M] embeddings to [1, M].
    pub fn pool(&self, h: Var<'t>, kind: Pooling) -> (Var<'t>, Option<Var<'t>>) {
        let m = h.shape()[1];
        match kind {
            Pooling::Mean => (h.mean_axis(0).reshape(&[1, m]), None),
            Pooling::Max => (h.max_axis(0).reshape(&[1, m]), None),
            Pooling::Attention => {
                let scores = h.matmul(self.theta_v).tanh().matmul(self.theta_w);
                let a = scores.softmax_axis(0);
                let k = h.shape()[0];
                let pooled = a.reshape(&[1, k]).matmul(h);
                (pooled, Some(a))
            }
        }
    }

    /// S(X): bag evidence from a [K, D] bag.
    pub fn bag_forward(&self, x: Var<'t>, kind: Pooling) -> BagGraph<'t> {
        let h = self.encode(x);
        let (pooled, attention) = self.pool(h, kind);
        let bag_logits = self.phi.apply(pooled);
        let bag_alpha = bag_logits.exp().add_scalar(1.0);
        BagGraph { embeddings: h, attention, bag_logits, bag_alpha }
    }

    /// T and R for every instance of a [K, D] bag. The head is applied as a
    /// constant: this path never produces gradients for `phi`.
    pub fn instance_forward(&self, x: Var<'t>) -> InstanceGraph<'t> {
        let h = match &self.psi_const {
            Some(frozen) => Self::encode_with(frozen, x),
            None => self.encode(x),
        };
        let t_logits = self.phi_const.apply(h);
        let raw = self.pi.iter().enumerate().fold(h, |acc, (i, layer)| {
            let z = layer.apply(acc);
            if i + 1 < self.pi.len() {
                z.relu()
            } else {
                z
            }
        });
        let residual_scale = raw.tanh();
        let r_logits = match self.residual_form {
            ResidualForm::Proportional => t_logits.mul(residual_scale.add_scalar(1.0)),
            ResidualForm::Additive => t_logits.add(residual_scale),
        };
        let alpha_t = t_logits.exp().add_scalar(1.0);
        let alpha_ins = r_logits.exp().add_scalar(1.0);
        InstanceGraph { t_logits, residual_scale, r_logits, alpha_t, alpha_ins }
    }

    /// Read gradients for every trainable group. `phi` receives only what the
    /// bag path produced; the `phi_const`/`psi_const` copies are dropped here.
    pub fn read_grads(&self, grads: &Gradients) -> GradSet {
        GradSet {
            psi: self.psi.iter().flat_map(|d| [grads.wrt(d.w).clone(), grads.wrt(d.b).clone()]).collect(),
            theta_pool: vec![grads.wrt(self.theta_v).clone(), grads.wrt(self.theta_w).clone()],
            phi: vec![grads.wrt(self.phi.w).clone(), grads.wrt(self.phi.b).clone()],
            pi: self.pi.iter().flat_map(|d| [grads.wrt(d.w).clone(), grads.wrt(d.b).clone()]).collect(),
        }
    }

    /// The discarded head gradient: what the instance path would have sent to
    /// `phi` if it were not routed through a constant copy. Nonzero in
    /// general, never applied.
    pub fn phi_const_grads(&self, grads: &Gradients) -> Vec<Array> {
        vec![grads.wrt(self.phi_const.w).clone(), grads.wrt(self.phi_const.b).clone()]
    }
}

/// Value-level bag forward.
#[derive(Clone, Debug)]
pub struct BagForward {
    pub embeddings: Array,
    pub attention_weights: Option<Vec<f64>>,
    pub bag_logits: Vec<f64>,
    pub bag_alpha: DirichletParams,
}

/// Value-level instance forward for a whole bag.
#[derive(Clone, Debug)]
pub struct InstanceForward {
    pub t_logits: Array,
    pub residual_scale: Array,
    pub r_logits: Array,
    pub alpha_t: Vec<DirichletParams>,
    pub alpha_ins: Vec<DirichletParams>,
}

fn rows_as_dirichlet(a: &Array) -> Vec<DirichletParams> {
    (0..a.rows()).map(|r| DirichletParams::new(a.row(r).to_vec())).collect()
}

/// S(X) as plain values.
pub fn bag_evidence(params: &MilParams, bag: &Array, kind: Pooling) -> BagForward {
    assert_eq!(bag.cols(), params.arch.input_dim, "bag feature dim");
    assert!(bag.rows() >= 1, "empty bag");
    let tape = Tape::new();
    let graph = ModelGraph::new(&tape, params, false, ResidualForm::Proportional);
    let x = tape.leaf(bag.clone());
    let bg = graph.bag_forward(x, kind);
    BagForward {
        embeddings: bg.embeddings.value(),
        attention_weights: bg.attention.map(|a| a.value().as_slice().to_vec()),
        bag_logits: bg.bag_logits.value().as_slice().to_vec(),
        bag_alpha: DirichletParams::new(bg.bag_alpha.value().as_slice().to_vec()),
    }
}

/// T and R as plain values for every instance in a bag.
pub fn instance_estimates(params: &MilParams, bag: &Array, form: ResidualForm) -> InstanceForward {
    assert_eq!(bag.cols(), params.arch.input_dim, "bag feature dim");
    let tape = Tape::new();
    let graph = ModelGraph::new(&tape, params, false, form);
    let x = tape.leaf(bag.clone());
    let ig = graph.instance_forward(x);
    InstanceForward {
        t_logits: ig.t_logits.value(),
        residual_scale: ig.residual_scale.value(),
        r_logits: ig.r_logits.value(),
        alpha_t: rows_as_dirichlet(&ig.alpha_t.value()),
        alpha_ins: rows_as_dirichlet(&ig.alpha_ins.value()),
    }
}

/// T for one instance.
pub fn instance_t(params: &MilParams, x: &[f64]) -> DirichletParams {
    let bag = Array::matrix(1, x.len(), x.to_vec());
    instance_estimates(params, &bag, ResidualForm::Proportional).alpha_t.remove(0)
}

/// R for one instance.
pub fn instance_r(params: &MilParams, x: &[f64], form: ResidualForm) -> DirichletParams {
    let bag = Array::matrix(1, x.len(), x.to_vec());
    instance_estimates(params, &bag, form).alpha_ins.remove(0)
}

/// Hard label plus expected probabilities; argmax ties break to the lowest
/// class index.
pub fn predict(d: &DirichletParams) -> (usize, Vec<f64>) {
    let probs = d.expected_probability();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (best, probs)
}
