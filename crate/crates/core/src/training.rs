//! Synchronous parameter-server training on synthetic logistic regression.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorKind;
use crate::assignment::{partition_batch, ClusterParams};
use crate::error::{invalid, Error, Result};
use crate::pipeline::{AggregatorOptions, AttackSpec, Protocol, Scheme};
use crate::report::Gradient;

/// Generator settings for a linearly separable binary dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// Training samples.
    pub samples: usize,
    /// Held-out samples used for the recorded loss.
    pub holdout: usize,
    pub features: usize,
    /// Every sample is pushed at least this far from the separating plane.
    pub margin: f64,
    /// Probability of flipping a label after generation.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            samples: 4096,
            holdout: 1024,
            features: 32,
            margin: 0.1,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

/// Features and `±1` labels. Training samples come first, then the holdout.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    train: usize,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        if spec.samples == 0 || spec.features == 0 {
            return Err(invalid("dataset needs at least one sample and one feature"));
        }
        if !(spec.margin >= 0.0 && spec.margin.is_finite()) || !(0.0..=1.0).contains(&spec.label_noise) {
            return Err(invalid("margin must be finite and non-negative, label noise in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut direction: Vec<f64> = (0..spec.features).map(|_| normal()).collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|x| *x /= norm);

        let total = spec.samples + spec.holdout;
        let mut features = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        for _ in 0..total {
            let mut x: Vec<f64> = (0..spec.features).map(|_| normal()).collect();
            let side = dot(&x, &direction);
            let y = if side >= 0.0 { 1.0 } else { -1.0 };
            for (xi, di) in x.iter_mut().zip(&direction) {
                *xi += y * spec.margin * di;
            }
            features.push(x);
            labels.push(y);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        for y in labels.iter_mut() {
            if rng.gen_bool(spec.label_noise) {
                *y = -*y;
            }
        }
        Ok(Dataset {
            features,
            labels,
            train: spec.samples,
        })
    }

    /// Builds a dataset from explicit rows, all of them training samples.
    pub fn from_rows(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(invalid("one label per sample and at least one sample"));
        }
        let d = features[0].len();
        if features.iter().any(|x| x.len() != d) {
            return Err(invalid("samples differ in dimension"));
        }
        let train = features.len();
        Ok(Dataset {
            features,
            labels,
            train,
        })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn train_len(&self) -> usize {
        self.train
    }

    pub fn sample(&self, i: usize) -> (&[f64], f64) {
        (&self.features[i], self.labels[i])
    }

    /// Indices of the held-out samples; the training set when there are none.
    pub fn holdout_indices(&self) -> std::ops::Range<usize> {
        if self.train == self.features.len() {
            0..self.train
        } else {
            self.train..self.features.len()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(-m))` without overflow.
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss of one sample.
pub fn sample_loss(w: &[f64], x: &[f64], y: f64) -> f64 {
    softplus_neg(y * dot(x, w))
}

/// Gradient of [`sample_loss`] in `w`: `-y x sigmoid(-y x.w)`.
pub fn sample_gradient(w: &[f64], x: &[f64], y: f64) -> Gradient {
    let s = -y * sigmoid(-y * dot(x, w));
    x.iter().map(|xi| s * xi).collect()
}

/// Mean logistic loss over `indices`.
pub fn mean_loss(w: &[f64], dataset: &Dataset, indices: impl IntoIterator<Item = usize>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in indices {
        let (x, y) = dataset.sample(i);
        total += sample_loss(w, x, y);
        n += 1;
    }
    total / n as f64
}

/// Model parameters and the number of updates applied so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub w: Vec<f64>,
    pub t: u64,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        ModelState { w: vec![0.0; dim], t: 0 }
    }
}

/// Sum of the per-sample gradients over one file's samples.
pub fn file_gradient(model: &ModelState, samples: &[usize], dataset: &Dataset) -> Result<Gradient> {
    if samples.is_empty() {
        return Err(invalid("file has no samples"));
    }
    let mut acc = vec![0.0; model.w.len()];
    for &i in samples {
        if i >= dataset.train_len() {
            return Err(invalid(format!("sample {i} is not a training sample")));
        }
        let (x, y) = dataset.sample(i);
        let s = -y * sigmoid(-y * dot(x, &model.w));
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += s * xi;
        }
    }
    Ok(acc)
}

/// `w <- w - eta * direction`. The direction already carries the
/// aggregator's normalization.
pub fn sgd_step(model: &ModelState, direction: &[f64], eta: f64) -> Result<ModelState> {
    if direction.len() != model.w.len() {
        return Err(invalid("update direction has the wrong dimension"));
    }
    if let Some(i) = direction.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "aggregated gradient coordinate {i} is {} at iteration {}",
            direction[i], model.t
        )));
    }
    let w: Vec<f64> = model.w.iter().zip(direction).map(|(w, g)| w - eta * g).collect();
    if let Some(i) = w.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "model coordinate {i} became {} at iteration {}",
            w[i], model.t
        )));
    }
    Ok(ModelState { w, t: model.t + 1 })
}

/// Step size `start * decay^floor(t / interval)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRate {
    pub start: f64,
    pub decay: f64,
    pub interval: u64,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate {
            start: 0.1,
            decay: 0.95,
            interval: 50,
        }
    }
}

impl LearningRate {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.start.is_finite()) || !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(invalid("learning rate start and decay must be positive and finite"));
        }
        if self.interval == 0 {
            return Err(invalid("learning rate interval must be positive"));
        }
        Ok(())
    }

    pub fn at(&self, t: u64) -> f64 {
        let steps = (t / self.interval).min(i32::MAX as u64) as i32;
        self.start * self.decay.powi(steps)
    }
}

/// Batches drawn without replacement; the order is reshuffled at the start
/// of every epoch, and a tail shorter than a batch is skipped.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    next: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(samples: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || batch > samples {
            return Err(invalid(format!("batch size {batch} outside 1..={samples}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut rng);
        Ok(BatchSampler {
            order,
            next: 0,
            batch,
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.next + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.next = 0;
        }
        let start = self.next;
        self.next += self.batch;
        &self.order[start..self.next]
    }
}

/// A full training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub params: ClusterParams,
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub batch: usize,
    #[serde(default)]
    pub learning_rate: LearningRate,
    pub epochs: usize,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default = "default_aggregator")]
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub options: AggregatorOptions,
    /// Record every this many iterations; the last iteration is always kept.
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: u64,
    /// Seed of the batch sampler.
    #[serde(default)]
    pub seed: u64,
}

fn default_aggregator() -> AggregatorKind {
    AggregatorKind::Aspis
}

fn default_checkpoint() -> u64 {
    1
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.learning_rate.validate()?;
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint interval must be positive"));
        }
        if self.batch > self.dataset.samples {
            return Err(invalid(format!(
                "batch {} exceeds the {} training samples",
                self.batch, self.dataset.samples
            )));
        }
        Ok(())
    }
}

/// Metrics recorded at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub learning_rate: f64,
    pub loss: f64,
    /// `detected`, `ambiguous`, or `none` for schemes without detection.
    pub detection: String,
    pub corrupted: u64,
    pub files: u64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<CheckpointRecord>,
}

impl TrainingHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Whole-run aggregates, one row of the summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub aggregator: AggregatorKind,
    pub scheme: Scheme,
    pub mode: crate::attacks::AttackMode,
    #[serde(rename = "K")]
    pub workers: usize,
    pub r: usize,
    pub q: usize,
    pub iterations: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub max_corrupted: u64,
    pub files: u64,
    pub detected_rounds: u64,
    pub ambiguous_rounds: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingOutcome {
    pub model: ModelState,
    pub history: TrainingHistory,
    pub summary: TrainingSummary,
}

/// Runs `epochs` passes of the protocol loop: sample a batch, split it into
/// files, compute each file gradient once, run the attacked round and step.
pub fn run_training(config: &TrainingConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let dataset = Dataset::generate(&config.dataset)?;
    let protocol = Protocol::new(config.params, config.aggregator, &config.attack, config.options)?;
    let files = protocol.file_count();
    if config.batch < files {
        return Err(invalid(format!("batch {} is smaller than the {files} files", config.batch)));
    }
    let mut sampler = BatchSampler::new(dataset.train_len(), config.batch, config.seed)?;
    let per_epoch = sampler.batches_per_epoch() as u64;
    let total = per_epoch * config.epochs as u64;
    let ranges = partition_batch(config.batch, files)?;

    let mut model = ModelState::zeros(dataset.dim());
    let initial_loss = mean_loss(&model.w, &dataset, dataset.holdout_indices());
    let mut history = TrainingHistory::default();
    let mut max_corrupted = 0;
    let (mut detected_rounds, mut ambiguous_rounds) = (0, 0);
    for t in 0..total {
        let batch = sampler.next_batch();
        let truths = ranges
            .iter()
            .map(|range| file_gradient(&model, &batch[range.clone()], &dataset))
            .collect::<Result<Vec<_>>>()?;
        let round = protocol.run_round(t, &truths)?;
        let eta = config.learning_rate.at(t);
        model = sgd_step(&model, &round.aggregation.gradient, eta)?;

        let corrupted = round.aggregation.corrupted_files.len() as u64;
        max_corrupted = max_corrupted.max(corrupted);
        let tag = match &round.detection {
            Some(outcome) => {
                if outcome.honest().is_some() {
                    detected_rounds += 1;
                } else {
                    ambiguous_rounds += 1;
                }
                outcome.tag()
            }
            None => "none",
        };
        let iteration = t + 1;
        if iteration % config.checkpoint_every == 0 || iteration == total {
            history.records.push(CheckpointRecord {
                iteration,
                epoch: t / per_epoch,
                learning_rate: eta,
                loss: mean_loss(&model.w, &dataset, dataset.holdout_indices()),
                detection: tag.to_string(),
                corrupted,
                files: files as u64,
                epsilon: corrupted as f64 / files as f64,
            });
        }
    }
    let final_loss = mean_loss(&model.w, &dataset, dataset.holdout_indices());
    let params = config.params;
    let summary = TrainingSummary {
        aggregator: config.aggregator,
        scheme: Scheme::of(config.aggregator),
        mode: config.attack.mode,
        workers: params.workers(),
        r: params.redundancy(),
        q: params.adversaries(),
        iterations: total,
        initial_loss,
        final_loss,
        max_corrupted,
        files: files as u64,
        detected_rounds,
        ambiguous_rounds,
    };
    Ok(TrainingOutcome {
        model,
        history,
        summary,
    })
}
