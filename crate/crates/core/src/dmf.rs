//! Per-user learner state and the decentralized training loop.
//!
//! Every user `i` keeps its own latent vector `u_i`, a private copy `P^i` of
//! the shared item factors and a personal offset matrix `Q^i`; it scores item
//! `j` with `u_i . (p^i_j + q^i_j)`. After each local SGD step the user sends
//! only `dL/dp^i_j` to nearby users, who fold it into their own copy of `p_j`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{sample_negatives, sample_negatives_from, Dataset, Rating};
use crate::geograph::{AdjacencyGraph, LayerTable, WalkMode, WalkPolicy, WalkScale};
use crate::scalar::{dot, squared_norm, Scalar};
use crate::simbus::SimBus;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite {target} after update for user {user}, item {item}")]
    NonFiniteUpdate { user: usize, item: usize, target: &'static str },
    #[error("invalid hyper-parameters: {0}")]
    InvalidHyperParams(String),
    #[error("graph has {graph} users but the dataset has {dataset}")]
    GraphMismatch { graph: usize, dataset: usize },
    #[error("walk distance {0} needs an adjacency graph")]
    MissingGraph(usize),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HyperParams<T> {
    /// Latent dimension `K`.
    pub k: usize,
    /// Learning rate.
    pub theta: T,
    /// User regularizer.
    pub alpha: T,
    /// Shared item-factor regularizer.
    pub beta: T,
    /// Personal item-factor regularizer.
    pub gamma: T,
    pub walk: WalkPolicy,
    /// Unobserved ratings sampled per observed one (`m`).
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Drop personal factors entirely (`Q = 0`).
    pub freeze_q: bool,
    /// Sample negatives among the user's city items only.
    #[serde(default)]
    pub neg_same_city: bool,
}

impl<T: Scalar> Default for HyperParams<T> {
    fn default() -> Self {
        HyperParams {
            k: 10,
            theta: T::lit(0.1),
            alpha: T::lit(0.1),
            beta: T::lit(0.1),
            gamma: T::lit(0.1),
            walk: WalkPolicy::default(),
            negatives: 3,
            epochs: 100,
            seed: 42,
            freeze_q: false,
            neg_same_city: false,
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(TrainError::InvalidHyperParams(msg.into()));
        if self.k == 0 {
            return fail("K must be at least 1");
        }
        if !(self.theta > T::zero()) {
            return fail("theta must be positive");
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|r| !(*r >= T::zero())) {
            return fail("regularizers must be nonnegative");
        }
        if self.epochs == 0 {
            return fail("at least one epoch is required");
        }
        Ok(())
    }
}

/// One learner node. Item matrices are row-major `J x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeState<T> {
    pub user: usize,
    pub k: usize,
    pub u: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
}

impl<T: Scalar> NodeState<T> {
    pub fn zeros(user: usize, n_items: usize, k: usize) -> Self {
        NodeState { user, k, u: vec![T::zero(); k], p: vec![T::zero(); n_items * k], q: vec![T::zero(); n_items * k] }
    }

    pub fn n_items(&self) -> usize {
        self.p.len() / self.k
    }

    pub fn p_row(&self, j: usize) -> &[T] {
        &self.p[j * self.k..(j + 1) * self.k]
    }

    pub fn q_row(&self, j: usize) -> &[T] {
        &self.q[j * self.k..(j + 1) * self.k]
    }

    pub fn p_row_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.p[j * self.k..(j + 1) * self.k]
    }

    pub fn q_row_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.q[j * self.k..(j + 1) * self.k]
    }

    /// Effective item factor `v^i_j = p^i_j + q^i_j`.
    pub fn item_factor(&self, j: usize) -> Vec<T> {
        self.p_row(j).iter().zip(self.q_row(j)).map(|(&p, &q)| p + q).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.p).chain(&self.q).all(|x| x.is_finite())
    }
}

/// Seeded generator for user `user`'s initialization.
fn init_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Seeded generator driving epoch `epoch` (shuffle, negatives, walks).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_9e37_79b9);
    rng.set_stream(epoch as u64);
    rng
}

/// Draws `u_i`, `P^i` and `Q^i` i.i.d. uniform on `[0, 1/sqrt(K)]`;
/// `Q^i` stays zero under `freeze_q`. Depends only on `(seed, user)`.
pub fn init_state<T: Scalar>(user: usize, n_items: usize, hp: &HyperParams<T>) -> NodeState<T> {
    let mut rng = init_rng(hp.seed, user);
    let scale = 1.0 / (hp.k as f64).sqrt();
    let mut draw = |len: usize| -> Vec<T> { (0..len).map(|_| T::lit(rng.gen::<f64>() * scale)).collect() };
    let u = draw(hp.k);
    let p = draw(n_items * hp.k);
    let q = if hp.freeze_q { vec![T::zero(); n_items * hp.k] } else { draw(n_items * hp.k) };
    NodeState { user, k: hp.k, u, p, q }
}

pub fn init_states<T: Scalar>(n_users: usize, n_items: usize, hp: &HyperParams<T>) -> Vec<NodeState<T>> {
    (0..n_users).map(|i| init_state(i, n_items, hp)).collect()
}

/// `u_i . (p^i_j + q^i_j)`, unclamped.
pub fn predict<T: Scalar>(node: &NodeState<T>, j: usize) -> T {
    node.u
        .iter()
        .zip(node.p_row(j).iter().zip(node.q_row(j)))
        .fold(T::zero(), |acc, (&u, (&p, &q))| acc + u * (p + q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub u: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
}

/// Gradients of the single-sample objective
/// `c/2 (r - u.v)^2 + alpha/2 |u|^2 + beta/2 |p_j|^2 + gamma/2 |q_j|^2`
/// with respect to `u_i`, `p^i_j` and `q^i_j`.
pub fn local_gradients<T: Scalar>(node: &NodeState<T>, j: usize, r: T, confidence: T, hp: &HyperParams<T>) -> Gradients<T> {
    let v = node.item_factor(j);
    let e = confidence * (r - dot(&node.u, &v));
    let (p, q) = (node.p_row(j), node.q_row(j));
    Gradients {
        u: v.iter().zip(&node.u).map(|(&v, &u)| -e * v + hp.alpha * u).collect(),
        p: node.u.iter().zip(p).map(|(&u, &p)| -e * u + hp.beta * p).collect(),
        q: node.u.iter().zip(q).map(|(&u, &q)| -e * u + hp.gamma * q).collect(),
    }
}

/// Value of the single-sample objective whose gradients [`local_gradients`] returns.
pub fn sample_objective<T: Scalar>(node: &NodeState<T>, j: usize, r: T, confidence: T, hp: &HyperParams<T>) -> T {
    let half = T::lit(0.5);
    let e = r - predict(node, j);
    half * confidence * e * e
        + half * hp.alpha * squared_norm(&node.u)
        + half * hp.beta * squared_norm(node.p_row(j))
        + half * hp.gamma * squared_norm(node.q_row(j))
}

fn step<T: Scalar>(target: &mut [T], grad: &[T], rate: T) -> bool {
    let mut finite = true;
    for (x, &g) in target.iter_mut().zip(grad) {
        *x -= rate * g;
        finite &= x.is_finite();
    }
    finite
}

/// SGD step on `u_i`, `p^i_j` and (unless frozen) `q^i_j`.
pub fn apply_local_update<T: Scalar>(
    node: &mut NodeState<T>,
    j: usize,
    grads: &Gradients<T>,
    theta: T,
    freeze_q: bool,
) -> Result<()> {
    let user = node.user;
    let fail = |target| TrainError::NonFiniteUpdate { user, item: j, target };
    if !step(&mut node.u, &grads.u, theta) {
        return Err(fail("u"));
    }
    if !step(node.p_row_mut(j), &grads.p, theta) {
        return Err(fail("p"));
    }
    if !freeze_q && !step(node.q_row_mut(j), &grads.q, theta) {
        return Err(fail("q"));
    }
    Ok(())
}

/// The only payload nodes exchange. It holds no rating, no user factor and
/// no personal item factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GradientMessage<T> {
    pub origin: usize,
    pub item: usize,
    pub grad_p: Vec<T>,
    pub order: usize,
    pub weight: T,
    pub layer_size: usize,
}

/// Folds a neighbor's shared-factor gradient into the recipient's `p_j`:
/// `p_j -= theta * |N^d(i)| * w * g` (layered scale) or `theta * w * g` (normalized).
pub fn apply_neighbor_update<T: Scalar>(
    node: &mut NodeState<T>,
    msg: &GradientMessage<T>,
    theta: T,
    scale: WalkScale,
) -> Result<()> {
    let factor = match scale {
        WalkScale::Layered => theta * T::from_count(msg.layer_size) * msg.weight,
        WalkScale::Normalized => theta * msg.weight,
    };
    if !step(node.p_row_mut(msg.item), &msg.grad_p, factor) {
        return Err(TrainError::NonFiniteUpdate { user: node.user, item: msg.item, target: "p (neighbor)" });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Samples processed this epoch (positives plus sampled negatives).
    pub samples: usize,
    pub messages: u64,
    pub bytes: u64,
    pub bytes_positive_only: u64,
}

/// Mean single-sample objective over the observed training ratings.
pub fn train_loss<T: Scalar>(states: &[NodeState<T>], train: &[Rating], hp: &HyperParams<T>) -> f64 {
    if train.is_empty() {
        return 0.0;
    }
    let total: f64 = train
        .iter()
        .map(|r| sample_objective(&states[r.user], r.item, T::lit(r.value), T::lit(r.confidence), hp).as_f64())
        .sum();
    total / train.len() as f64
}

/// Mean of `(r - prediction)^2 / 2` over held-out ratings.
pub fn test_loss<T: Scalar>(states: &[NodeState<T>], test: &[Rating]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let total: f64 = test
        .iter()
        .map(|r| {
            let e = r.value - predict(&states[r.user], r.item).as_f64();
            0.5 * e * e
        })
        .sum();
    total / test.len() as f64
}

/// One fully processed sample, reported to a [`TrainObserver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleEvent {
    pub epoch: usize,
    pub user: usize,
    pub item: usize,
    pub positive: bool,
    /// Neighbors that received the gradient.
    pub recipients: usize,
}

/// Hook into the training loop, called after each sample is fully processed
/// (local update and dissemination).
pub trait TrainObserver<T> {
    fn sample_processed(&mut self, event: &SampleEvent, states: &[NodeState<T>]);
}

impl<T> TrainObserver<T> for () {
    fn sample_processed(&mut self, _: &SampleEvent, _: &[NodeState<T>]) {}
}

/// Read-only inputs shared by every epoch of one training run.
pub struct TrainContext<'a, T> {
    graph: Option<&'a AdjacencyGraph<T>>,
    layers: Option<LayerTable>,
    /// Per-layer recipient weights, aligned with `layers`; `None` means 1.0.
    layer_weights: Option<Vec<Vec<Vec<T>>>>,
    rated: Vec<Vec<usize>>,
    city_items: Option<Vec<Vec<usize>>>,
    user_city: Vec<usize>,
    n_items: usize,
}

impl<'a, T: Scalar> TrainContext<'a, T> {
    pub fn new(dataset: &Dataset, graph: Option<&'a AdjacencyGraph<T>>, hp: &HyperParams<T>) -> Result<Self> {
        hp.validate()?;
        let depth = hp.walk.max_distance;
        if let Some(g) = graph {
            if g.n_users() != dataset.n_users() {
                return Err(TrainError::GraphMismatch { graph: g.n_users(), dataset: dataset.n_users() });
            }
        }
        if depth > 0 && graph.is_none() {
            return Err(TrainError::MissingGraph(depth));
        }
        let layers = match (graph, hp.walk.mode) {
            (Some(g), WalkMode::DeterministicLayers) if depth > 0 => Some(LayerTable::new(g, depth)),
            _ => None,
        };
        let layer_weights = match (graph, &layers) {
            (Some(g), Some(table)) if !g.mapping().is_constant() => Some(
                (0..g.n_users())
                    .map(|i| {
                        (1..=depth)
                            .map(|d| {
                                let layer = table.layer(i, d);
                                if layer.is_empty() {
                                    return Vec::new();
                                }
                                let dist = g.walk_distribution(i, d).unwrap_or_default();
                                layer.iter().map(|k| dist.get(k).copied().unwrap_or_else(T::zero)).collect()
                            })
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        };
        Ok(TrainContext {
            graph,
            layers,
            layer_weights,
            rated: dataset.train_items_by_user(),
            city_items: hp.neg_same_city.then(|| dataset.items_by_city()),
            user_city: dataset.user_city.clone(),
            n_items: dataset.n_items(),
        })
    }
}

/// Runs one pass of the decentralized algorithm over a seeded shuffle of
/// `dataset.train`. Each observed rating is processed first, then its sampled
/// negatives; every sample gets a local update followed by dissemination.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar, R: Rng, O: TrainObserver<T>>(
    states: &mut [NodeState<T>],
    ctx: &TrainContext<'_, T>,
    dataset: &Dataset,
    hp: &HyperParams<T>,
    epoch: usize,
    rng: &mut R,
    bus: &mut SimBus,
    observer: &mut O,
) -> Result<EpochStats> {
    let before = bus.meter().clone();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(rng);

    let mut samples = 0usize;
    for idx in order {
        let obs = dataset.train[idx];
        let i = obs.user;
        process_sample(states, ctx, hp, rng, bus, observer, epoch, i, obs.item, T::lit(obs.value), T::lit(obs.confidence), true)?;
        samples += 1;
        let negatives = match &ctx.city_items {
            Some(by_city) => sample_negatives_from(hp.negatives, &ctx.rated[i], &by_city[ctx.user_city[i]], rng),
            None => sample_negatives(hp.negatives, &ctx.rated[i], ctx.n_items, rng),
        };
        for neg in negatives {
            process_sample(states, ctx, hp, rng, bus, observer, epoch, i, neg.item, T::lit(neg.rating), T::lit(neg.confidence), false)?;
            samples += 1;
        }
    }

    let after = bus.meter();
    Ok(EpochStats {
        epoch,
        train_loss: train_loss(states, &dataset.train, hp),
        test_loss: test_loss(states, &dataset.test),
        samples,
        messages: after.messages - before.messages,
        bytes: after.bytes - before.bytes,
        bytes_positive_only: after.positive_bytes - before.positive_bytes,
    })
}

#[allow(clippy::too_many_arguments)]
fn process_sample<T: Scalar, R: Rng, O: TrainObserver<T>>(
    states: &mut [NodeState<T>],
    ctx: &TrainContext<'_, T>,
    hp: &HyperParams<T>,
    rng: &mut R,
    bus: &mut SimBus,
    observer: &mut O,
    epoch: usize,
    i: usize,
    j: usize,
    r: T,
    confidence: T,
    positive: bool,
) -> Result<()> {
    let grads = local_gradients(&states[i], j, r, confidence, hp);
    apply_local_update(&mut states[i], j, &grads, hp.theta, hp.freeze_q)?;

    let depth = hp.walk.max_distance;
    let mut recipients = 0usize;
    if depth > 0 {
        let mut msg = GradientMessage { origin: i, item: j, grad_p: grads.p, order: 0, weight: T::one(), layer_size: 0 };
        match (&ctx.layers, ctx.graph) {
            (Some(table), _) => {
                for d in 1..=depth {
                    let layer = table.layer(i, d);
                    if layer.is_empty() {
                        continue;
                    }
                    msg.order = d;
                    msg.layer_size = layer.len();
                    match &ctx.layer_weights {
                        None => {
                            msg.weight = T::one();
                            bus.deliver(&msg, layer, states, hp.theta, hp.walk.scale, positive)?;
                        }
                        Some(weights) => {
                            for (&k, &w) in layer.iter().zip(&weights[i][d - 1]) {
                                msg.weight = w;
                                bus.deliver(&msg, &[k], states, hp.theta, hp.walk.scale, positive)?;
                            }
                        }
                    }
                    recipients += layer.len();
                }
            }
            (None, Some(graph)) => {
                let mut at = i;
                for d in 1..=depth {
                    match graph.sample_step(at, rng) {
                        Some(next) => at = next,
                        None => break,
                    }
                    if at == i {
                        continue;
                    }
                    msg.order = d;
                    msg.layer_size = 1;
                    msg.weight = T::one();
                    bus.deliver(&msg, &[at], states, hp.theta, hp.walk.scale, positive)?;
                    recipients += 1;
                }
            }
            (None, None) => {}
        }
    }
    observer.sample_processed(&SampleEvent { epoch, user: i, item: j, positive, recipients }, states);
    Ok(())
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub states: Vec<NodeState<T>>,
    pub stats: Vec<EpochStats>,
    /// Train loss of the freshly initialized model.
    pub initial_train_loss: f64,
    pub bus: SimBus,
}

/// Epoch-at-a-time driver over all nodes.
pub struct Trainer<'a, T> {
    ctx: TrainContext<'a, T>,
    dataset: &'a Dataset,
    hp: HyperParams<T>,
    states: Vec<NodeState<T>>,
    bus: SimBus,
    stats: Vec<EpochStats>,
    initial_train_loss: f64,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(dataset: &'a Dataset, graph: Option<&'a AdjacencyGraph<T>>, hp: &HyperParams<T>) -> Result<Self> {
        Self::with_bus(dataset, graph, hp, SimBus::new(hp.k))
    }

    pub fn with_bus(dataset: &'a Dataset, graph: Option<&'a AdjacencyGraph<T>>, hp: &HyperParams<T>, bus: SimBus) -> Result<Self> {
        let ctx = TrainContext::new(dataset, graph, hp)?;
        let states = init_states(dataset.n_users(), dataset.n_items(), hp);
        let initial_train_loss = train_loss(&states, &dataset.train, hp);
        Ok(Trainer { ctx, dataset, hp: hp.clone(), states, bus, stats: Vec::new(), initial_train_loss })
    }

    pub fn epochs_completed(&self) -> usize {
        self.stats.len()
    }

    pub fn states(&self) -> &[NodeState<T>] {
        &self.states
    }

    pub fn bus(&self) -> &SimBus {
        &self.bus
    }

    /// Runs the next epoch with its own seeded generator.
    pub fn run_epoch<O: TrainObserver<T>>(&mut self, observer: &mut O) -> Result<&EpochStats> {
        let epoch = self.stats.len() + 1;
        let mut rng = epoch_rng(self.hp.seed, epoch);
        let stats = train_epoch(&mut self.states, &self.ctx, self.dataset, &self.hp, epoch, &mut rng, &mut self.bus, observer)?;
        self.stats.push(stats);
        Ok(self.stats.last().expect("just pushed"))
    }

    pub fn finish(self) -> TrainOutcome<T> {
        TrainOutcome { states: self.states, stats: self.stats, initial_train_loss: self.initial_train_loss, bus: self.bus }
    }
}

/// Trains all nodes for `hp.epochs` epochs.
pub fn train<T: Scalar>(dataset: &Dataset, graph: Option<&AdjacencyGraph<T>>, hp: &HyperParams<T>) -> Result<TrainOutcome<T>> {
    train_observed(dataset, graph, hp, &mut ())
}

pub fn train_observed<T: Scalar, O: TrainObserver<T>>(
    dataset: &Dataset,
    graph: Option<&AdjacencyGraph<T>>,
    hp: &HyperParams<T>,
    observer: &mut O,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(dataset, graph, hp)?;
    for _ in 0..hp.epochs {
        trainer.run_epoch(observer)?;
    }
    Ok(trainer.finish())
}
