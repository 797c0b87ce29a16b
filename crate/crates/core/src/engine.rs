//! The federated round loop: broadcast, local training, compression,
//! aggregation and evaluation.
//!
//! Each round runs every client (in parallel when a worker pool has more than
//! one thread), then aggregates their sparse uploads in ascending client
//! order. Per-client randomness comes from a stream keyed by
//! `(seed, client, round)`, so the output never depends on the thread count.
//!
//! Under [`UpdateRule::Delta`] a client uploads the change of its local
//! gradient since the previous round. Client and server both keep the global
//! gradient estimate `G_g` as the running sum of the averaged changes and step
//! with `ω ← ω − η(ΔG_g + G_g_prev)`. With the identity sampler and a single
//! client this is exactly gradient descent.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::config::{Broadcast, DatasetSpec, ExperimentConfig, PartitionSpec, UpdateRule};
use crate::data::{self, Dataset, Partition};
use crate::error::{DataError, EngineError, ModelError, SamplerError};
use crate::linalg::{dense_broadcast_bytes, sparse_payload_bytes, GradientVector, SparseUpdate};
use crate::metrics::{evaluate, RoundMetrics};
use crate::model::{Architecture, Model};
use crate::privacy::{self, PrivacyCertificate};
use crate::rng::client_round_stream;
use crate::sampler::{self, SamplerConfig, SamplerKind, SamplerState};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "CRSFL_THREADS";

/// A run aborts once the mean training loss exceeds this multiple of the
/// first round's loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Round-loop settings that do not depend on the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingParams {
    pub seed: u64,
    pub rounds: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// 0 means one full-shard batch.
    pub local_batch: usize,
    pub local_epochs: usize,
    pub eval_every: usize,
    pub update_rule: UpdateRule,
    pub broadcast: Broadcast,
    pub laplace_scale: Option<f64>,
}

impl TrainingParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            seed: cfg.seed,
            rounds: cfg.rounds,
            lr: cfg.lr,
            lr_decay: cfg.lr_decay,
            local_batch: cfg.local_batch,
            local_epochs: cfg.local_epochs,
            eval_every: cfg.eval_every,
            update_rule: cfg.update_rule,
            broadcast: cfg.broadcast,
            laplace_scale: cfg.laplace_scale,
        }
    }

    /// Learning rate of round `r`: `lr / (1 + lr_decay·r)`.
    pub fn lr_at(&self, round: usize) -> f64 {
        self.lr / (1.0 + self.lr_decay * round as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub weights: GradientVector,
    /// The update sent last round (densified), zero before the first round.
    pub prev_update: GradientVector,
    /// The local gradient computed last round, zero before the first round.
    pub prev_grad: GradientVector,
    pub sampler_state: SamplerState,
    /// Indices of this client's training samples.
    pub samples: Vec<usize>,
}

impl ClientState {
    pub fn new(client_id: usize, dim: usize, samples: Vec<usize>) -> Self {
        Self {
            client_id,
            weights: GradientVector::zeros(dim),
            prev_update: GradientVector::zeros(dim),
            prev_grad: GradientVector::zeros(dim),
            sampler_state: SamplerState::new(dim),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    /// Completed aggregations.
    pub round: usize,
    /// Latest aggregate `ΔG_g`, broadcast at the start of the next round.
    pub global_update: GradientVector,
    /// Global gradient estimate before `global_update` is added.
    pub prev_global_grad: GradientVector,
    /// Global model after applying `global_update`.
    pub weights: GradientVector,
}

impl ServerState {
    pub fn new(initial_weights: GradientVector) -> Self {
        let d = initial_weights.dim();
        Self {
            round: 0,
            global_update: GradientVector::zeros(d),
            prev_global_grad: GradientVector::zeros(d),
            weights: initial_weights,
        }
    }
}

/// What the server sends at the start of a round.
#[derive(Debug, Clone, Copy)]
pub enum Broadcasted<'a> {
    /// Round 0: the initial model.
    Initial(&'a [f64]),
    /// Later rounds: the last aggregate, the global gradient estimate it
    /// extends, and the learning rate it is applied with.
    Update {
        global_update: &'a [f64],
        prev_global_grad: &'a [f64],
        lr: f64,
    },
}

/// One client's upload and its mean local training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub update: SparseUpdate,
    pub loss: f64,
}

/// Apply a step to the model, identically on client and server.
fn apply_step(weights: &mut GradientVector, rule: UpdateRule, update: &[f64], prev_global_grad: &[f64], lr: f64) {
    match rule {
        UpdateRule::Delta => {
            for ((w, u), g) in weights.as_mut_slice().iter_mut().zip(update).zip(prev_global_grad) {
                *w -= lr * (u + g);
            }
        }
        UpdateRule::Plain => weights.axpy(-lr, update),
    }
}

/// Local training. Returns the mean batch loss and the pseudo-gradient
/// `(ω_start − ω_end)/lr`, which for a single full batch is the plain gradient.
pub fn local_gradient<R: Rng + ?Sized>(
    arch: &Architecture,
    weights: &[f64],
    ds: &Dataset,
    samples: &[usize],
    params: &TrainingParams,
    lr: f64,
    rng: &mut R,
) -> Result<(f64, GradientVector), ModelError> {
    let n = samples.len();
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let bs = if params.local_batch == 0 { n } else { params.local_batch.min(n) };
    if bs == n && params.local_epochs == 1 {
        return arch.loss_and_grad(weights, ds, samples);
    }
    let mut local = GradientVector::from_vec(weights.to_vec());
    let mut order = samples.to_vec();
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for _ in 0..params.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(bs) {
            let (loss, g) = arch.loss_and_grad(&local, ds, batch)?;
            loss_sum += loss;
            steps += 1;
            local.axpy(-lr, &g);
        }
    }
    let g: Vec<f64> = weights.iter().zip(local.iter()).map(|(w0, w1)| (w0 - w1) / lr).collect();
    Ok((loss_sum / steps as f64, g.into()))
}

/// One client's round: apply the broadcast, train locally, form the upload,
/// compress it.
#[allow(clippy::too_many_arguments)]
pub fn client_round<R: Rng + ?Sized>(
    state: &mut ClientState,
    broadcast: Broadcasted<'_>,
    round: usize,
    params: &TrainingParams,
    ds: &Dataset,
    arch: &Architecture,
    sampler_cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<ClientOutcome, EngineError> {
    let d = state.weights.dim();
    let check = |v: &[f64]| {
        if v.len() == d {
            Ok(())
        } else {
            Err(EngineError::DimensionMismatch {
                expected: d,
                found: v.len(),
            })
        }
    };
    match broadcast {
        Broadcasted::Initial(w0) => {
            check(w0)?;
            state.weights.as_mut_slice().copy_from_slice(w0);
        }
        Broadcasted::Update {
            global_update,
            prev_global_grad,
            lr,
        } => {
            check(global_update)?;
            check(prev_global_grad)?;
            apply_step(&mut state.weights, params.update_rule, global_update, prev_global_grad, lr);
        }
    }

    let lr = params.lr_at(round);
    let (loss, grad) = local_gradient(arch, &state.weights, ds, &state.samples, params, lr, rng)?;
    check(&grad)?;

    let mut upload = match params.update_rule {
        UpdateRule::Delta => {
            let mut delta = grad.clone();
            delta.axpy(-1.0, &state.prev_grad);
            delta
        }
        UpdateRule::Plain => grad.clone(),
    };
    state.prev_grad = grad;
    if let Some(scale) = params.laplace_scale {
        upload = privacy::laplace_perturb(&upload, scale, rng)?;
    }
    let update = sampler::compress(sampler_cfg, &upload, &mut state.sampler_state, rng)?;
    state.prev_update = update.densify();
    Ok(ClientOutcome { update, loss })
}

/// Coordinate-wise mean of the densified updates, summed in slice order.
pub fn fedavg_aggregate(updates: &[SparseUpdate], m: usize) -> Result<GradientVector, EngineError> {
    let first = updates.first().ok_or(EngineError::EmptyAggregate)?;
    if m != updates.len() {
        return Err(EngineError::DimensionMismatch {
            expected: m,
            found: updates.len(),
        });
    }
    let d = first.dim();
    let mut out = GradientVector::zeros(d);
    for u in updates {
        if u.dim() != d {
            return Err(EngineError::DimensionMismatch {
                expected: d,
                found: u.dim(),
            });
        }
        u.add_into(1.0, out.as_mut_slice());
    }
    let n = m as f64;
    out.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

/// A federated run in progress.
pub struct Simulation<'a> {
    params: TrainingParams,
    sampler: SamplerConfig,
    arch: Architecture,
    train: &'a Dataset,
    test: &'a Dataset,
    clients: Vec<ClientState>,
    server: ServerState,
    pool: rayon::ThreadPool,
    initial_loss: Option<f64>,
}

impl<'a> Simulation<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: TrainingParams,
        sampler: SamplerConfig,
        arch: Architecture,
        initial_weights: GradientVector,
        train: &'a Dataset,
        test: &'a Dataset,
        partition: &Partition,
        threads: Option<usize>,
    ) -> Result<Self, EngineError> {
        let d = arch.num_weights();
        if initial_weights.dim() != d {
            return Err(EngineError::DimensionMismatch {
                expected: d,
                found: initial_weights.dim(),
            });
        }
        sampler.validate(d)?;
        if !partition.is_valid_for(train.len()) {
            return Err(DataError::InvalidParameters("partition does not match the training set".into()).into());
        }
        let clients = partition
            .assignments
            .iter()
            .enumerate()
            .map(|(i, s)| ClientState::new(i, d, s.clone()))
            .collect();
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| EngineError::ThreadPool(e.to_string()))?;
        Ok(Self {
            params,
            sampler,
            arch,
            train,
            test,
            clients,
            server: ServerState::new(initial_weights),
            pool,
            initial_loss: None,
        })
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global_model(&self) -> Model {
        Model {
            arch: self.arch,
            weights: self.server.weights.clone(),
        }
    }

    fn download_bytes_per_client(&self) -> u64 {
        let d = self.server.weights.dim();
        let dense = dense_broadcast_bytes(d) as u64;
        if self.server.round == 0 || self.params.broadcast == Broadcast::Dense {
            return dense;
        }
        let nnz = self.server.global_update.count_nonzero();
        dense.min(sparse_payload_bytes(nnz) as u64)
    }

    /// Run one full round and return its metrics.
    pub fn step(&mut self) -> Result<RoundMetrics, EngineError> {
        let r = self.server.round;
        let m = self.clients.len();
        let download = self.download_bytes_per_client() * m as u64;

        let broadcast = if r == 0 {
            Broadcasted::Initial(self.server.weights.as_slice())
        } else {
            Broadcasted::Update {
                global_update: self.server.global_update.as_slice(),
                prev_global_grad: self.server.prev_global_grad.as_slice(),
                lr: self.params.lr_at(r - 1),
            }
        };
        let (params, train, arch, sampler) = (&self.params, self.train, &self.arch, &self.sampler);
        let outcomes: Vec<Result<ClientOutcome, EngineError>> = self.pool.install(|| {
            self.clients
                .par_iter_mut()
                .map(|c| {
                    let mut rng = client_round_stream(params.seed, c.client_id, r);
                    client_round(c, broadcast, r, params, train, arch, sampler, &mut rng)
                })
                .collect()
        });

        let initial = self.initial_loss;
        let diverged = |loss: f64| EngineError::Diverged {
            round: r,
            loss,
            initial: initial.unwrap_or(f64::NAN),
        };
        let mut updates = Vec::with_capacity(m);
        let mut loss_sum = 0.0;
        for o in outcomes {
            match o {
                Ok(o) => {
                    loss_sum += o.loss;
                    updates.push(o.update);
                }
                Err(EngineError::Model(ModelError::NonFinite))
                | Err(EngineError::Sampler(SamplerError::NonFiniteInput(_))) => {
                    return Err(diverged(f64::NAN))
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / m as f64;
        let initial = *self.initial_loss.get_or_insert(train_loss);
        if !train_loss.is_finite() || train_loss > DIVERGENCE_FACTOR * initial {
            return Err(EngineError::Diverged {
                round: r,
                loss: train_loss,
                initial,
            });
        }
        let upload: u64 = updates.iter().map(|u| u.payload_bytes() as u64).sum();

        let mean = fedavg_aggregate(&updates, m)?;
        let s = &mut self.server;
        let prev = std::mem::replace(&mut s.global_update, mean);
        s.prev_global_grad.axpy(1.0, &prev);
        apply_step(
            &mut s.weights,
            self.params.update_rule,
            &s.global_update,
            &s.prev_global_grad,
            self.params.lr_at(r),
        );
        if !s.weights.is_finite() {
            return Err(diverged(f64::NAN));
        }
        s.round += 1;

        let last = r + 1 == self.params.rounds;
        let (eval_accuracy, eval_ce_loss) = if last || (r + 1).is_multiple_of(self.params.eval_every) {
            let (a, c) = evaluate(&self.global_model(), self.test);
            (Some(a), Some(c))
        } else {
            (None, None)
        };
        Ok(RoundMetrics {
            round: r,
            train_loss,
            eval_accuracy,
            eval_ce_loss,
            download_bytes_total: download,
            upload_bytes_total: upload,
            m,
        })
    }

    /// Run all remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>, EngineError> {
        let mut out = Vec::with_capacity(self.params.rounds);
        while self.server.round < self.params.rounds {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// Everything a run needs, built from a config.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    pub arch: Architecture,
    pub sampler: SamplerConfig,
    pub certificate: Option<PrivacyCertificate>,
}

/// Load data, partition it, fix the model and sampler, and check the privacy
/// certificate when CRS is configured.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, EngineError> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic {
            samples,
            test_samples,
            features,
            classes,
            class_sep,
        } => data::synth_classification(samples + test_samples, *features, *classes, *class_sep, cfg.seed)?
            .split_tail(*test_samples),
        DatasetSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } => (data::load_idx(images, labels)?, data::load_idx(test_images, test_labels)?),
    };
    let partition = match cfg.partition {
        PartitionSpec::Shards { per_client } => data::partition_shards(&train, cfg.clients, per_client, cfg.seed)?,
        PartitionSpec::Dirichlet { beta, min_samples } => {
            data::partition_dirichlet(&train, cfg.clients, beta, min_samples, cfg.seed)?
        }
    };
    let classes = train.num_classes().max(test.num_classes());
    let arch = cfg.architecture(train.num_features(), classes);
    let d = arch.num_weights();
    let sampler = cfg.sampler.resolve(d)?;
    sampler.validate(d)?;
    let certificate = if sampler.kind == SamplerKind::Crs {
        let eps = sampler.epsilon.ok_or(SamplerError::MissingEpsilon)?;
        let cert = privacy::issue_certificate(eps, sampler.p, sampler.k, d);
        cert.require_issued()?;
        Some(cert)
    } else {
        None
    };
    Ok(Prepared {
        train,
        test,
        partition,
        arch,
        sampler,
        certificate,
    })
}

/// Run a configured experiment with an explicit worker count.
pub fn run_experiment_with_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<Vec<RoundMetrics>, EngineError> {
    let p = prepare(cfg)?;
    let init = p.arch.init_weights(cfg.seed);
    let mut sim = Simulation::new(
        TrainingParams::from_config(cfg),
        p.sampler,
        p.arch,
        init,
        &p.train,
        &p.test,
        &p.partition,
        threads,
    )?;
    sim.run()
}

/// Run a configured experiment; the worker count comes from [`THREADS_ENV`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>, EngineError> {
    run_experiment_with_threads(cfg, threads_from_env())
}

impl EngineError {
    /// Whether the error is a rejected configuration or privacy request
    /// rather than a failure during the run.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            EngineError::Config(_)
                | EngineError::Privacy(_)
                | EngineError::Sampler(
                    SamplerError::InvalidSampleSize { .. }
                        | SamplerError::InvalidProbability(_)
                        | SamplerError::MissingEpsilon
                )
        )
    }
}
