//! The training loop: neighbor-aware batches, the three losses, SGD with
//! momentum and a cosine schedule, and a graph refresh after every epoch.
//!
//! Per batch:
//! 1. sample `B` anchors without replacement and one random graph neighbor each;
//! 2. augment the anchors (and their neighbors, and/or a second anchor view);
//! 3. RGC over anchor views ∪ neighbor views against the global Laplacian;
//! 4. AGC between anchor assignments and neighbor assignments;
//! 5. CR on the anchor assignments;
//! 6. backpropagate `RGC + λ·AGC + η·CR` and take one SGD step.
//!
//! After the last batch a clean forward pass over the whole dataset updates the
//! moving-average store and rebuilds the KNN graph.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentSpec, Dataset};
use crate::error::{Error, Result};
use crate::graph::{
    build_knn_graph, init_graph, laplacian, random_neighbor, EmbeddingStore, KnnGraph,
};
use crate::losses::{
    agc_loss, contrastive_loss, cr_loss, rgc_loss, total_loss, EmptyNegatives, InstancePairs,
    LossWeights, TotalLoss,
};
use crate::metrics::MetricReport;
use crate::model::{backward, forward, init_params, EncoderParams, ForwardTrace, LayerSpec};
use crate::scalar::Scalar;
use crate::types::{ProbVector, UnitVector};

/// Neighborhood sizes reported by [`evaluate`].
pub const EVAL_TOPK: [usize; 5] = [1, 5, 10, 20, 50];

/// Where the contrastive positives of a view come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSource {
    /// Augmented random graph neighbors.
    #[default]
    Graph,
    /// A second augmentation of the anchor itself (no graph).
    SelfAugment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
    pub clusters: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            rep_dim: 16,
            clusters: 3,
        }
    }
}

impl EncoderConfig {
    pub fn layer_spec(&self, input_dim: usize) -> LayerSpec {
        LayerSpec {
            input_dim,
            hidden: self.hidden.clone(),
            rep_dim: self.rep_dim,
            clusters: self.clusters,
        }
    }
}

/// Every hyperparameter of a run. Defaults follow the reference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tau_r: f64,
    pub tau_a: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub k: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_floor_ratio: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub augment: AugmentSpec,
    pub rgc_positives: PositiveSource,
    pub agc_positives: PositiveSource,
    /// Compute metrics every this many epochs (and always on the last one).
    pub metric_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau_r: 0.1,
            tau_a: 1.0,
            alpha: 0.5,
            lambda: 0.5,
            eta: 1.0,
            k: 5,
            lr0: 0.4,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 200,
            lr_floor_ratio: 0.1,
            seed: 0,
            encoder: EncoderConfig::default(),
            augment: AugmentSpec::default(),
            rgc_positives: PositiveSource::Graph,
            agc_positives: PositiveSource::Graph,
            metric_stride: 1,
        }
    }
}

impl RunConfig {
    /// Checks ranges; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_r", self.tau_r),
            ("tau_a", self.tau_a),
            ("lr0", self.lr0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name}: {v} must be > 0")));
            }
        }
        let nonneg = [
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_floor_ratio", self.lr_floor_ratio),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name}: {v} must be >= 0")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "alpha: {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.lr_floor_ratio > 1.0 {
            return Err(Error::InvalidSpec(format!(
                "lr_floor_ratio: {} exceeds 1",
                self.lr_floor_ratio
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidSpec("k: must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidSpec("batch_size: must be >= 2".into()));
        }
        if self.metric_stride == 0 {
            return Err(Error::InvalidSpec("metric_stride: must be >= 1".into()));
        }
        self.augment.validate()?;
        self.encoder.layer_spec(1).validate()
    }

    pub fn weights<T: Scalar>(&self) -> LossWeights<T> {
        LossWeights {
            lambda: T::lit(self.lambda),
            eta: T::lit(self.eta),
        }
    }

    fn needs_neighbor_view(&self) -> bool {
        self.rgc_positives == PositiveSource::Graph || self.agc_positives == PositiveSource::Graph
    }

    fn needs_second_view(&self) -> bool {
        self.rgc_positives == PositiveSource::SelfAugment
            || self.agc_positives == PositiveSource::SelfAugment
    }
}

/// Cosine decay from `lr0` to `floor_ratio · lr0` over `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, floor_ratio: f64) -> f64 {
    let lr_min = floor_ratio * lr0;
    if total_steps == 0 {
        return lr0;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * frac).cos())
}

/// `g ← grad + wd·θ; v ← μ·v + g; θ ← θ − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &EncoderParams<T>,
    velocity: &mut EncoderParams<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(velocity) {
        return Err(Error::shape(
            "parameters, gradients and velocity differ in shape",
        ));
    }
    let grads = grads.tensors();
    for ((theta, g), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(velocity.tensors_mut())
    {
        for ((t, &g), v) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            let g = g + weight_decay * *t;
            *v = momentum * *v + g;
            *t = *t - lr * *v;
        }
    }
    Ok(())
}

/// Anchors drawn without replacement, each paired with a random graph neighbor.
pub fn sample_batch_with_neighbors<R: Rng + ?Sized>(
    graph: &KnnGraph,
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if batch_size > n || n != graph.n() {
        return Err(Error::InvalidSpec(format!(
            "batch of {batch_size} from {n} samples on a graph of {} nodes",
            graph.n()
        )));
    }
    let anchors = index::sample(rng, n, batch_size).into_vec();
    let neighbors = anchors
        .iter()
        .map(|&a| random_neighbor(graph, a, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((anchors, neighbors))
}

/// Augmented inputs of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub anchors: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub anchor_view: Vec<Vec<T>>,
    /// Augmented neighbors, present when either loss uses graph positives.
    pub neighbor_view: Option<Vec<Vec<T>>>,
    /// Second augmentation of the anchors, present in self-augmentation modes.
    pub second_view: Option<Vec<Vec<T>>>,
}

fn augmented<T: Scalar, R: Rng + ?Sized>(
    x: &[Vec<f64>],
    ids: &[usize],
    spec: &AugmentSpec,
    rng: &mut R,
) -> Vec<Vec<T>> {
    ids.iter()
        .map(|&i| augment(&x[i], spec, rng).into_iter().map(T::lit).collect())
        .collect()
}

pub fn make_batch<T: Scalar, R: Rng + ?Sized>(
    x: &[Vec<f64>],
    graph: &KnnGraph,
    config: &RunConfig,
    rng: &mut R,
) -> Result<Batch<T>> {
    let batch_size = config.batch_size.min(x.len());
    let (anchors, neighbors) = sample_batch_with_neighbors(graph, x.len(), batch_size, rng)?;
    let anchor_view = augmented(x, &anchors, &config.augment, rng);
    let neighbor_view = config
        .needs_neighbor_view()
        .then(|| augmented(x, &neighbors, &config.augment, rng));
    let second_view = config
        .needs_second_view()
        .then(|| augmented(x, &anchors, &config.augment, rng));
    Ok(Batch {
        anchors,
        neighbors,
        anchor_view,
        neighbor_view,
        second_view,
    })
}

/// Loss of one batch and its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult<T> {
    pub loss: TotalLoss<T>,
    pub grads: EncoderParams<T>,
}

fn forward_all<T: Scalar>(
    params: &EncoderParams<T>,
    xs: &[Vec<T>],
) -> Result<Vec<ForwardTrace<T>>> {
    xs.iter().map(|x| forward(params, x)).collect()
}

fn missing(view: &str) -> Error {
    Error::InvalidSpec(format!(
        "batch lacks the {view} view required by the config"
    ))
}

/// Evaluates `RGC + λ·AGC + η·CR` on a prepared batch and backpropagates it.
pub fn batch_objective<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &Batch<T>,
    graph: &KnnGraph,
    config: &RunConfig,
) -> Result<BatchResult<T>> {
    let b = batch.anchors.len();
    let anchor = forward_all(params, &batch.anchor_view)?;
    let neighbor = match &batch.neighbor_view {
        Some(v) => forward_all(params, v)?,
        None => Vec::new(),
    };
    let second = match &batch.second_view {
        Some(v) => forward_all(params, v)?,
        None => Vec::new(),
    };

    let zs = |traces: &[ForwardTrace<T>]| -> Vec<UnitVector<T>> {
        traces.iter().map(|t| t.z.clone()).collect()
    };
    let ps = |traces: &[ForwardTrace<T>]| -> Vec<ProbVector<T>> {
        traces.iter().map(|t| t.p.clone()).collect()
    };

    let tau_r = T::lit(config.tau_r);
    let rgc = match config.rgc_positives {
        PositiveSource::Graph => {
            if neighbor.len() != b {
                return Err(missing("neighbor"));
            }
            let lap = laplacian(graph)?;
            let features: Vec<_> = zs(&anchor).into_iter().chain(zs(&neighbor)).collect();
            let nodes: Vec<usize> = batch
                .anchors
                .iter()
                .chain(&batch.neighbors)
                .copied()
                .collect();
            rgc_loss(&features, &nodes, &lap, tau_r)?
        }
        PositiveSource::SelfAugment => {
            if second.len() != b {
                return Err(missing("second"));
            }
            let features: Vec<_> = zs(&anchor).into_iter().chain(zs(&second)).collect();
            let ids: Vec<usize> = (0..b).chain(0..b).collect();
            contrastive_loss(
                &features,
                &InstancePairs { ids: &ids },
                tau_r,
                EmptyNegatives::Skip,
            )?
        }
    };

    let q = ps(&anchor);
    let partner = match config.agc_positives {
        PositiveSource::Graph => &neighbor,
        PositiveSource::SelfAugment => &second,
    };
    if partner.len() != b {
        return Err(missing("assignment partner"));
    }
    let agc = agc_loss(&q, &ps(partner), T::lit(config.tau_a))?;
    let cr = cr_loss(&q)?;
    let loss = total_loss(&rgc, &agc, &cr, config.weights())?;

    // Route the loss gradients back to the views they came from.
    let zero_z = vec![T::zero(); params.rep_dim()];
    let zero_p = vec![T::zero(); params.clusters()];
    let rgc_partner_is_neighbor = config.rgc_positives == PositiveSource::Graph;
    let agc_partner_is_neighbor = config.agc_positives == PositiveSource::Graph;

    let mut traces = anchor;
    let mut dz: Vec<Vec<T>> = loss.grad_z[..b].to_vec();
    let mut dp: Vec<Vec<T>> = loss.grad_q.clone();
    for (view, is_rgc, is_agc) in [
        (neighbor, rgc_partner_is_neighbor, agc_partner_is_neighbor),
        (second, !rgc_partner_is_neighbor, !agc_partner_is_neighbor),
    ] {
        if view.is_empty() {
            continue;
        }
        for (i, t) in view.into_iter().enumerate() {
            traces.push(t);
            dz.push(if is_rgc {
                loss.grad_z[b + i].clone()
            } else {
                zero_z.clone()
            });
            dp.push(if is_agc {
                loss.grad_q_tilde[i].clone()
            } else {
                zero_p.clone()
            });
        }
    }
    let grads = backward(params, &traces, &dz, &dp)?;
    Ok(BatchResult { loss, grads })
}

/// Per-epoch record, one row of `train_log.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_rgc: f64,
    pub loss_agc: f64,
    pub loss_cr: f64,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub top5nn: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,loss_total,loss_rgc,loss_agc,loss_cr,acc,nmi,ari,top5nn";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss_total,
            self.loss_rgc,
            self.loss_agc,
            self.loss_cr,
            opt(self.acc),
            opt(self.nmi),
            opt(self.ari),
            opt(self.top5nn)
        )
    }
}

/// Everything carried from one epoch to the next.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: EncoderParams<T>,
    pub velocity: EncoderParams<T>,
    pub store: EmbeddingStore<T>,
    pub graph: KnnGraph,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub rng: ChaCha8Rng,
}

/// Clean (unaugmented) encoder outputs for every sample.
pub struct Embedding<T> {
    pub z: Vec<UnitVector<T>>,
    pub p: Vec<ProbVector<T>>,
}

impl<T: Scalar> Embedding<T> {
    pub fn labels(&self) -> Vec<usize> {
        self.p
            .iter()
            .map(|p| crate::types::assign_cluster(p))
            .collect()
    }
}

pub fn embed<T: Scalar>(params: &EncoderParams<T>, x: &[Vec<f64>]) -> Result<Embedding<T>> {
    let mut z = Vec::with_capacity(x.len());
    let mut p = Vec::with_capacity(x.len());
    for row in x {
        let input: Vec<T> = row.iter().map(|&v| T::lit(v)).collect();
        let t = forward(params, &input)?;
        z.push(t.z);
        p.push(t.p);
    }
    Ok(Embedding { z, p })
}

/// Metrics of the encoder's clean outputs against ground-truth labels.
pub fn evaluate<T: Scalar>(
    embedding: &Embedding<T>,
    truth: &[usize],
    ks: &[usize],
) -> Result<MetricReport> {
    MetricReport::compute(&embedding.z, &embedding.labels(), truth, ks)
}

impl<T: Scalar> TrainState<T> {
    /// Random encoder, epoch-0 embeddings as the moving average, first KNN graph.
    pub fn init(dataset: &Dataset, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        if dataset.len() < 2 {
            return Err(Error::InvalidSpec(
                "dataset needs at least two samples".into(),
            ));
        }
        if config.batch_size > dataset.len() {
            return Err(Error::InvalidSpec(format!(
                "batch_size: {} exceeds the {} samples",
                config.batch_size,
                dataset.len()
            )));
        }
        let params: EncoderParams<T> =
            init_params(&config.encoder.layer_spec(dataset.dim()), config.seed)?;
        let velocity = params.zeros_like();
        let z0 = embed(&params, &dataset.x)?.z;
        let store = EmbeddingStore::new(z0, T::lit(config.alpha))?;
        let graph = init_graph(&store, config.k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            params,
            velocity,
            store,
            graph,
            epoch: 0,
            step: 0,
            rng,
        })
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// One pass of the batch loop followed by the moving-average and graph refresh.
pub fn train_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    dataset: &Dataset,
    config: &RunConfig,
) -> Result<EpochLog> {
    let steps = steps_per_epoch(dataset.len(), config.batch_size);
    let total_steps = steps * config.epochs.max(state.epoch + 1);
    let epoch = state.epoch + 1;
    let (momentum, wd) = (T::lit(config.momentum), T::lit(config.weight_decay));

    // Overflowing activations surface as a zero-norm error inside forward.
    let numeric = |e: Error| match e {
        Error::ZeroVector => Error::NonFinite { epoch },
        e => e,
    };
    let first_lr = cosine_lr(state.step, total_steps, config.lr0, config.lr_floor_ratio);
    let (mut rgc, mut agc, mut cr) = (0.0, 0.0, 0.0);
    for _ in 0..steps {
        let lr = cosine_lr(state.step, total_steps, config.lr0, config.lr_floor_ratio);
        let batch: Batch<T> = make_batch(&dataset.x, &state.graph, config, &mut state.rng)?;
        let result =
            batch_objective(&state.params, &batch, &state.graph, config).map_err(numeric)?;
        if !result.loss.value.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
        sgd_step(
            &mut state.params,
            &result.grads,
            &mut state.velocity,
            T::lit(lr),
            momentum,
            wd,
        )?;
        if !state.params.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
        state.step += 1;
        rgc += result.loss.rgc.as_f64();
        agc += result.loss.agc.as_f64();
        cr += result.loss.cr.as_f64();
    }
    let scale = steps as f64;
    let (rgc, agc, cr) = (rgc / scale, agc / scale, cr / scale);

    let embedding = embed(&state.params, &dataset.x).map_err(numeric)?;
    state.store.update(&embedding.z)?;
    state.graph = build_knn_graph(&state.store, config.k)?;
    state.epoch = epoch;

    let wants_metrics = epoch.is_multiple_of(config.metric_stride) || epoch == config.epochs;
    let report = match (&dataset.labels, wants_metrics) {
        (Some(truth), true) => Some(evaluate(&embedding, truth, &[5])?),
        _ => None,
    };
    Ok(EpochLog {
        epoch,
        lr: first_lr,
        loss_total: rgc + config.lambda * agc + config.eta * cr,
        loss_rgc: rgc,
        loss_agc: agc,
        loss_cr: cr,
        acc: report.as_ref().map(|r| r.acc),
        nmi: report.as_ref().map(|r| r.nmi),
        ari: report.as_ref().map(|r| r.ari),
        top5nn: report.as_ref().and_then(|r| r.topk.get(&5).copied()),
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: EncoderParams<T>,
    pub logs: Vec<EpochLog>,
    /// Metrics of the final encoder; `None` for unlabeled data.
    pub metrics: Option<MetricReport>,
}

/// Full run. `on_epoch` sees the state and log after every epoch and may abort.
pub fn train_with<T, F>(
    dataset: &Dataset,
    config: &RunConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(&TrainState<T>, &EpochLog) -> Result<()>,
{
    let mut state = TrainState::<T>::init(dataset, config)?;
    let mut logs = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let log = train_epoch(&mut state, dataset, config)?;
        on_epoch(&state, &log)?;
        logs.push(log);
    }
    let metrics = match &dataset.labels {
        Some(truth) => Some(evaluate(
            &embed(&state.params, &dataset.x)?,
            truth,
            &EVAL_TOPK,
        )?),
        None => None,
    };
    Ok(TrainOutcome {
        params: state.params,
        logs,
        metrics,
    })
}

pub fn train<T: Scalar>(dataset: &Dataset, config: &RunConfig) -> Result<TrainOutcome<T>> {
    train_with(dataset, config, |_, _| Ok(()))
}
