//! Data preparation, the training loop, and bound evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hfvae::data::{
    dynamic_binarize, ingest_patch_dir, load_mnist_idx, read_cache, split_by_patient, split_train_validation, write_cache,
    ImageDataset, Split,
};
use hfvae::distributions::LikelihoodKind;
use hfvae::model::Vae;
use hfvae::optim::{warmup_beta, AdamConfig, AdamState, EarlyStopState, StopDecision};
use hfvae::TensorValue;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{model_config, Checkpoint};
use crate::config::{Dataset, LearningRate, RunConfig};
use crate::error::{CliError, Result};
use crate::metrics::{MetricsRecord, MetricsSink};
use crate::streams::{self, SeedStreams};

/// Side length of histopathology patches.
pub const PATCH: usize = 28;

/// Rows per forward pass when scoring a split.
const EVAL_CHUNK: usize = 500;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

/// The three splits plus fixed binarized copies for scoring.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: ImageDataset,
    pub validation: ImageDataset,
    pub test: ImageDataset,
    /// Whether inputs are redrawn as binary samples (Bernoulli likelihood).
    pub binarize: bool,
    eval_inputs: BTreeMap<Split, TensorValue>,
}

impl Datasets {
    pub fn new(train: ImageDataset, validation: ImageDataset, test: ImageDataset, binarize: bool, seeds: &SeedStreams) -> Result<Self> {
        let mut eval_inputs = BTreeMap::new();
        for ds in [&train, &validation, &test] {
            let all: Vec<usize> = (0..ds.len()).collect();
            let mut x = ds.batch(&all)?;
            if binarize {
                // One fixed draw per split keeps scores comparable across epochs and runs.
                x = dynamic_binarize(&x, &mut seeds.stream(streams::EVAL_BINARIZE, ds.split as u64))?.samples;
            }
            eval_inputs.insert(ds.split, x);
        }
        Ok(Datasets {
            train,
            validation,
            test,
            binarize,
            eval_inputs,
        })
    }

    pub fn get(&self, split: Split) -> &ImageDataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Scoring inputs for a split: binarized once with a fixed stream for
    /// the Bernoulli model, raw intensities otherwise.
    pub fn eval_inputs(&self, split: Split) -> &TensorValue {
        &self.eval_inputs[&split]
    }
}

fn find_idx(dir: &Path, base: &str) -> Result<PathBuf> {
    for candidate in [dir.join(base), dir.join(format!("{base}.gz"))] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(CliError::Usage(format!("{} has no {base}[.gz]", dir.display())))
}

fn cache_path(cfg: &RunConfig, split: Split) -> Option<PathBuf> {
    (!cfg.cache_dir.as_os_str().is_empty()).then(|| cfg.cache_dir.join(format!("{}.hhfd", split.as_str())))
}

fn load_patch_splits(cfg: &RunConfig) -> Result<[ImageDataset; 3]> {
    let splits = [Split::Train, Split::Validation, Split::Test];
    if let Some(paths) = splits.iter().map(|&s| cache_path(cfg, s)).collect::<Option<Vec<_>>>() {
        if paths.iter().all(|p| p.exists()) {
            let read = |p: &PathBuf| -> Result<ImageDataset> { Ok(read_cache(&mut fs::File::open(p)?)?) };
            return Ok([read(&paths[0])?, read(&paths[1])?, read(&paths[2])?]);
        }
    }
    let patches = ingest_patch_dir(&cfg.patch_dir, PATCH)?;
    let assignment: BTreeMap<String, Split> = cfg.patients.iter().cloned().collect();
    let s = split_by_patient(&patches, &assignment)?;
    let out = [s.train, s.validation, s.test];
    if !cfg.cache_dir.as_os_str().is_empty() {
        fs::create_dir_all(&cfg.cache_dir)?;
        for ds in &out {
            let path = cache_path(cfg, ds.split).expect("cache dir set");
            write_cache(ds, &mut std::io::BufWriter::new(fs::File::create(path)?))?;
        }
    }
    Ok(out)
}

/// Loads and splits the configured dataset.
pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let seeds = SeedStreams::new(cfg.seed);
    let binarize = cfg.likelihood == LikelihoodKind::Bernoulli;
    match cfg.dataset {
        Dataset::Mnist => {
            let dir = &cfg.mnist_dir;
            let train = load_mnist_idx(
                &find_idx(dir, "train-images-idx3-ubyte")?,
                &find_idx(dir, "train-labels-idx1-ubyte")?,
                Split::Train,
            )?;
            let test = load_mnist_idx(
                &find_idx(dir, "t10k-images-idx3-ubyte")?,
                &find_idx(dir, "t10k-labels-idx1-ubyte")?,
                Split::Test,
            )?;
            let limit = (cfg.train_limit > 0).then_some(cfg.train_limit);
            let s = split_train_validation(&train, test, cfg.validation_size, limit, &mut seeds.stream(streams::SPLIT, 0))?;
            Datasets::new(s.train, s.validation, s.test, binarize, &seeds)
        }
        Dataset::Patches => {
            let [train, validation, test] = load_patch_splits(cfg)?;
            Datasets::new(train, validation, test, binarize, &seeds)
        }
    }
}

/// Mean bound over a split with its standard error across data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub items: usize,
    pub samples: usize,
    pub elbo: f64,
    pub elbo_se: f64,
    pub re: f64,
    pub kl: f64,
}

/// Scores every row of `inputs` with `samples` noise draws each (β = 1).
/// Per-datum values are averaged over the draws before the standard error
/// across data is taken.
pub fn evaluate(vae: &Vae, inputs: &TensorValue, samples: usize, split: Split, rng: &mut impl Rng) -> Result<EvalReport> {
    let (n, _) = inputs.shape().as_matrix().ok_or(hfvae::Error::EmptyBatch)?;
    let samples = samples.max(1);
    let mut elbo = vec![0.0; n];
    let (mut re_sum, mut kl_sum) = (0.0, 0.0);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let d = vae.config.data_dim;
        let x = TensorValue::matrix(chunk.len(), d, inputs.data()[chunk[0] * d..(chunk[0] + chunk.len()) * d].to_vec())?;
        for _ in 0..samples {
            let eps = vae.draw_eps(chunk.len(), rng);
            let terms = vae.evaluate_with_eps(&x, &eps, 1.0)?;
            for (k, &i) in chunk.iter().enumerate() {
                elbo[i] += terms.elbo[k] / samples as f64;
            }
            re_sum += terms.re.iter().sum::<f64>();
            kl_sum += terms.kl.iter().sum::<f64>();
        }
    }
    let total = (n * samples) as f64;
    let mean = elbo.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        elbo.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let report = EvalReport {
        split: split.as_str().to_string(),
        items: n,
        samples,
        elbo: mean,
        elbo_se: (var / n as f64).sqrt(),
        re: re_sum / total,
        kl: kl_sum / total,
    };
    if !report.elbo.is_finite() {
        return Err(hfvae::Error::NonFinite { op: "evaluation" }.into());
    }
    Ok(report)
}

/// Extra controls that are not part of a run's identity.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    /// Pause after this many total epochs, leaving a resumable checkpoint.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub lr: f64,
    pub validation_elbo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub lr: f64,
    pub probes: Vec<ProbeResult>,
    pub epochs: u64,
    /// True once early stopping or the epoch cap ended the run.
    pub finished: bool,
    pub best_epoch: u64,
    pub best_validation_elbo: f64,
    /// Validation record of the best epoch.
    pub best_validation: Option<MetricsRecord>,
    /// Test-split score of the best parameters (finished runs only).
    pub test: Option<EvalReport>,
}

/// Mutable state of one run.
pub struct Trainer<'a> {
    pub cfg: RunConfig,
    pub data: &'a Datasets,
    pub streams: SeedStreams,
    pub vae: Vae,
    pub adam: AdamState,
    pub early: EarlyStopState<Vae>,
    pub epoch: u64,
    /// Validation records by epoch, kept for the summary.
    pub validation_log: Vec<MetricsRecord>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &RunConfig, data: &'a Datasets, lr: f64) -> Result<Self> {
        let seeds = SeedStreams::new(cfg.seed);
        let mc = model_config(cfg, data.train.dim());
        let vae = Vae::new(mc, &mut seeds.stream(streams::INIT, 0))?;
        let adam = AdamState::new(&vae.params, AdamConfig::with_lr(lr));
        Ok(Trainer {
            cfg: cfg.clone(),
            data,
            streams: seeds,
            vae,
            adam,
            early: EarlyStopState::new(cfg.lookahead, cfg.max_epochs),
            epoch: 0,
            validation_log: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, data: &'a Datasets) -> Result<Self> {
        if ck.data_dim != data.train.dim() {
            return Err(CliError::Usage(format!("checkpoint expects {} pixels, data has {}", ck.data_dim, data.train.dim())));
        }
        let mc = ck.model_config();
        let early = EarlyStopState {
            best_validation_elbo: ck.early.best_validation_elbo,
            best_epoch: ck.early.best_epoch,
            epochs_since_improvement: ck.early.epochs_since_improvement,
            lookahead: ck.early.lookahead,
            max_epochs: ck.early.max_epochs,
            best_checkpoint: ck.early.best_checkpoint.map(|params| Vae { config: mc.clone(), params }),
        };
        Ok(Trainer {
            streams: SeedStreams::new(ck.config.seed),
            cfg: ck.config,
            data,
            vae: Vae { config: mc, params: ck.params },
            adam: ck.adam,
            early,
            epoch: ck.epoch,
            validation_log: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            data_dim: self.vae.config.data_dim,
            epoch: self.epoch,
            params: self.vae.params.clone(),
            adam: self.adam.clone(),
            early: EarlyStopState {
                best_validation_elbo: self.early.best_validation_elbo,
                best_epoch: self.early.best_epoch,
                epochs_since_improvement: self.early.epochs_since_improvement,
                lookahead: self.early.lookahead,
                max_epochs: self.early.max_epochs,
                best_checkpoint: self.early.best_checkpoint.as_ref().map(|v| v.params.clone()),
            },
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.max_epochs as u64 || (self.epoch > 0 && self.early.epochs_since_improvement >= self.early.lookahead)
    }

    fn stamp(&self, mut r: MetricsRecord) -> MetricsRecord {
        if self.cfg.record_wall_time {
            r.wall_time = Some(self.started.elapsed().as_secs_f64());
        }
        r
    }

    /// One pass over the training split; returns the batch-size-weighted
    /// mean terms under this epoch's β.
    pub fn train_epoch(&mut self) -> Result<MetricsRecord> {
        let epoch = self.epoch + 1;
        let beta = warmup_beta(epoch as usize, self.cfg.warmup_epochs);
        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.streams.stream(streams::SHUFFLE, epoch));
        let mut bin_rng = self.streams.stream(streams::BINARIZE, epoch);
        let mut eps_rng = self.streams.stream(streams::EPS, epoch);
        let (mut re, mut kl) = (0.0, 0.0);
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut x = train.batch(chunk)?;
            if self.data.binarize {
                x = dynamic_binarize(&x, &mut bin_rng)?.samples;
            }
            let (terms, grads) = self.vae.batch_objective(&x, &mut eps_rng, beta)?;
            if !terms.elbo.is_finite() {
                return Err(hfvae::Error::NonFinite { op: "training objective" }.into());
            }
            self.adam.step(&mut self.vae.params, &grads)?;
            re += terms.re * chunk.len() as f64;
            kl += terms.kl * chunk.len() as f64;
        }
        self.epoch = epoch;
        let n = train.len() as f64;
        Ok(self.stamp(MetricsRecord::new(epoch, "train", re / n, kl / n, beta)))
    }

    pub fn validate(&self) -> Result<MetricsRecord> {
        let report = evaluate(
            &self.vae,
            self.data.eval_inputs(Split::Validation),
            self.cfg.eval_samples,
            Split::Validation,
            &mut self.streams.stream(streams::EVAL_EPS, self.epoch),
        )?;
        Ok(self.stamp(MetricsRecord::new(self.epoch, "validation", report.re, report.kl, 1.0)))
    }

    /// Trains until finished or `stop_after` epochs, streaming records to
    /// `sink`.
    pub fn run(&mut self, mut sink: Option<&mut MetricsSink>, stop_after: Option<u64>) -> Result<()> {
        while !self.finished() && stop_after.is_none_or(|s| self.epoch < s) {
            let train = self.train_epoch()?;
            let val = self.validate()?;
            if let Some(s) = sink.as_deref_mut() {
                s.write(&train)?;
                s.write(&val)?;
            }
            let vae = &self.vae;
            let decision = self.early.update(val.elbo, self.epoch as usize, || vae.clone())?;
            self.validation_log.push(val);
            if decision == StopDecision::Stop {
                break;
            }
        }
        Ok(())
    }

    pub fn best_vae(&self) -> &Vae {
        self.early.best_checkpoint.as_ref().unwrap_or(&self.vae)
    }
}

/// Short runs from the shared initialization, one per candidate rate; the
/// rate with the best validation ELBO wins (ties go to the earlier rate).
pub fn probe_learning_rates(cfg: &RunConfig, data: &Datasets, grid: &[f64]) -> Result<(f64, Vec<ProbeResult>)> {
    let mut results = Vec::new();
    for &lr in grid {
        let probe_cfg = RunConfig {
            max_epochs: cfg.probe_epochs,
            ..cfg.clone()
        };
        let mut t = Trainer::new(&probe_cfg, data, lr)?;
        t.run(None, None)?;
        results.push(ProbeResult {
            lr,
            validation_elbo: t.early.best_validation_elbo,
        });
    }
    let best = results
        .iter()
        .fold(None::<&ProbeResult>, |acc, r| match acc {
            Some(a) if a.validation_elbo >= r.validation_elbo => Some(a),
            _ => Some(r),
        })
        .expect("grid is nonempty");
    Ok((best.lr, results))
}

/// Full training command: prepares data, picks the learning rate, trains
/// with early stopping, and writes metrics, checkpoints and a summary to the
/// output directory.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let (cfg, resumed) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.config.clone(), Some(ck))
        }
        None => {
            cfg.validate()?;
            (cfg.clone(), None)
        }
    };
    let data = load_datasets(&cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);

    let (mut trainer, probes, mut sink) = match resumed {
        Some(ck) => (Trainer::from_checkpoint(ck, &data)?, Vec::new(), MetricsSink::append(&metrics_path)?),
        None => {
            let (lr, probes) = match &cfg.lr {
                LearningRate::Fixed(lr) => (*lr, Vec::new()),
                LearningRate::Grid(grid) => probe_learning_rates(&cfg, &data, grid)?,
            };
            fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
            (Trainer::new(&cfg, &data, lr)?, probes, MetricsSink::create(&metrics_path)?)
        }
    };
    trainer.run(Some(&mut sink), opts.stop_after)?;
    drop(sink);
    let ck = trainer.checkpoint();
    ck.save(&cfg.out_dir.join(LAST_CHECKPOINT))?;

    let finished = trainer.finished();
    let test = if finished {
        let best = Checkpoint {
            params: ck.best_params().clone(),
            ..ck.clone()
        };
        best.save(&cfg.out_dir.join(BEST_CHECKPOINT))?;
        let report = evaluate(
            trainer.best_vae(),
            data.eval_inputs(Split::Test),
            cfg.eval_samples,
            Split::Test,
            &mut trainer.streams.stream(streams::EVAL_EPS, 0),
        )?;
        Some(report)
    } else {
        None
    };

    let best_epoch = trainer.early.best_epoch as u64;
    let mut best_validation = trainer.validation_log.iter().find(|r| r.epoch == best_epoch).cloned();
    if best_validation.is_none() && best_epoch > 0 {
        // The best epoch predates a resume; recover it from the metrics file.
        best_validation = crate::metrics::read_metrics(&metrics_path)?
            .into_iter()
            .find(|r| r.epoch == best_epoch && r.split == "validation");
    }
    let summary = TrainSummary {
        lr: trainer.adam.config.lr,
        probes,
        epochs: trainer.epoch,
        finished,
        best_epoch,
        best_validation_elbo: trainer.early.best_validation_elbo,
        best_validation,
        test,
    };
    fs::write(cfg.out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Scores the best parameters of a checkpoint on one split.
pub fn cmd_eval(checkpoint: &Path, split: Split, samples: usize) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = load_datasets(&ck.config)?;
    let vae = Vae {
        config: ck.model_config(),
        params: ck.best_params().clone(),
    };
    let seeds = SeedStreams::new(ck.config.seed);
    let report = evaluate(&vae, data.eval_inputs(split), samples, split, &mut seeds.stream(streams::EVAL_EPS, 0))?;
    let out = checkpoint.with_file_name(format!("eval-{}.json", split.as_str()));
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
