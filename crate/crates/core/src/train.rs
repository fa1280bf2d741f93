//! Optimizer, training loop and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jnmr_tensor::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, manifest_path, optimizer_path, params_path};
use crate::data::{augment, collate, epoch_order, AugmentationPolicy, Dataset};
use crate::error::{invalid, io_error, Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::losses::{total_loss_var, LossWeights, PerceptualConfig, PerceptualExtractor};
use crate::model::{ForwardOptions, Model, ModelConfig, Preset};
use crate::nn::ParamStore;
use crate::rdfl::MotionVars;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs between learning-rate halvings.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub min_learning_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_every: 20,
            decay_factor: 0.5,
            min_learning_rate: 6.25e-5,
        }
    }
}

impl OptimizerConfig {
    /// Step schedule: `lr * factor^(epoch / decay_every)`, floored.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = epoch.checked_div(self.decay_every).unwrap_or(0);
        (self.learning_rate * self.decay_factor.powi(decays as i32)).max(self.min_learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0
            && self.decay_factor > 0.0
            && self.min_learning_rate >= 0.0;
        if !ok {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        Ok(())
    }
}

/// AdaMax: first moment plus an exponentially weighted infinity norm.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaMax {
    cfg: OptimizerConfig,
    m: Vec<Tensor<f32>>,
    u: Vec<Tensor<f32>>,
    step: u64,
}

impl AdaMax {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdaMax {
            cfg,
            m: zeros.clone(),
            u: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Tensor<f32>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let eps = self.cfg.epsilon as f32;
        let rate = (lr / (1.0 - self.cfg.beta1.powi(self.step.min(i32::MAX as u64) as i32))) as f32;
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let u = self.u[i].data_mut();
            for (k, v) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                u[k] = (b2 * u[k]).max(g[k].abs());
                *v -= rate * m[k] / (u[k] + eps);
            }
        }
    }

    fn save(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut all_names = Vec::with_capacity(2 * names.len());
        let mut tensors = Vec::with_capacity(2 * names.len());
        for (n, t) in names.iter().zip(&self.m) {
            all_names.push(format!("m.{n}"));
            tensors.push(t.clone());
        }
        for (n, t) in names.iter().zip(&self.u) {
            all_names.push(format!("u.{n}"));
            tensors.push(t.clone());
        }
        checkpoint::write_tensors(path, &all_names, &tensors)
    }

    fn load(&mut self, path: &Path, names: &[String], step: u64) -> Result<()> {
        let loaded = checkpoint::read_tensors::<f32>(path)?;
        let n = names.len();
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if loaded.len() != 2 * n {
            return Err(bad(format!("holds {} moment tensors, expected {}", loaded.len(), 2 * n)));
        }
        for (i, (name, t)) in loaded.into_iter().enumerate() {
            let (slot, prefix) = if i < n { (&mut self.m[i], "m") } else { (&mut self.u[i - n], "u") };
            let want = format!("{prefix}.{}", names[i % n]);
            if name != want || t.shape() != slot.shape() {
                return Err(bad(format!("found {name} {:?}, expected {want} {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        self.step = step;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub perceptual: PerceptualConfig,
    pub augmentation: AugmentationPolicy,
    /// Global gradient-norm bound; off when absent.
    pub grad_clip: Option<f64>,
    /// Caps the steps of each epoch; all samples when absent.
    pub max_steps_per_epoch: Option<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_preset(Preset::Desk)
    }
}

impl TrainConfig {
    /// Full-scale settings for `Full`, the reduced desk budget otherwise.
    pub fn for_preset(preset: Preset) -> Self {
        let full = preset == Preset::Full;
        TrainConfig {
            preset,
            model: preset.config(),
            optimizer: OptimizerConfig::default(),
            batch_size: if full { 8 } else { 4 },
            epochs: if full { 100 } else { 5 },
            seed: 0,
            loss: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
            augmentation: AugmentationPolicy::default(),
            grad_clip: None,
            max_steps_per_epoch: None,
            eval_batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0 || !c.is_finite()) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Stored next to the tensors of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: TrainConfig,
    /// Number of finished epochs.
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub parameter_count: usize,
}

impl CheckpointManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(io_error(format!("reading {}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Checkpoint {
            path,
            message: e.to_string(),
        })
    }
}

/// A model with trained parameters, as restored from a checkpoint.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub manifest: CheckpointManifest,
}

pub fn load_checkpoint(dir: &Path) -> Result<Trained> {
    let manifest = CheckpointManifest::read(dir)?;
    let (model, mut params) = Model::new::<f32>(&manifest.config.model, manifest.config.seed)?;
    checkpoint::load_params(&mut params, &params_path(dir))?;
    Ok(Trained { model, params, manifest })
}

/// Mean losses of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub loss: f64,
    pub charbonnier: f64,
    pub perceptual: f64,
    pub deformation: f64,
    pub seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub psnr: f64,
    pub ssim: f64,
    pub samples: usize,
}

/// Append-only log of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub parameter_count: usize,
    pub train_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub metrics: Vec<MetricRecord>,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(io_error(format!("writing {}", path.display())))
    }

    pub fn final_metric(&self) -> Option<&MetricRecord> {
        self.metrics.last()
    }
}

/// Loss terms of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub charbonnier: f64,
    pub perceptual: f64,
    pub deformation: f64,
}

/// Parameters, optimizer and progress of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    model: Model,
    params: ParamStore<f32>,
    optimizer: AdaMax,
    extractor: PerceptualExtractor<f32>,
    epoch: usize,
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 31)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 29)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = Model::new::<f32>(&cfg.model, cfg.seed)?;
        let optimizer = AdaMax::new(cfg.optimizer.clone(), &params);
        let extractor = PerceptualExtractor::new(&cfg.perceptual)?;
        Ok(Trainer {
            cfg,
            model,
            params,
            optimizer,
            extractor,
            epoch: 0,
        })
    }

    /// Restores parameters, optimizer moments and progress from `dir`.
    pub fn resume(dir: &Path) -> Result<Self> {
        let manifest = CheckpointManifest::read(dir)?;
        let mut t = Trainer::new(manifest.config.clone())?;
        checkpoint::load_params(&mut t.params, &params_path(dir))?;
        let names = t.params.names().to_vec();
        t.optimizer.load(&optimizer_path(dir), &names, manifest.optimizer_steps)?;
        t.epoch = manifest.epoch;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_error(format!("creating {}", dir.display())))?;
        checkpoint::save_params(&self.params, &params_path(dir))?;
        self.optimizer.save(&optimizer_path(dir), self.params.names())?;
        let manifest = CheckpointManifest {
            config: self.cfg.clone(),
            epoch: self.epoch,
            optimizer_steps: self.optimizer.steps(),
            parameter_count: self.params.num_elements(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let path = manifest_path(dir);
        fs::write(&path, text).map_err(io_error(format!("writing {}", path.display())))
    }

    /// Loss and parameter gradients on `samples` without updating.
    pub fn loss_and_gradients(&self, samples: &[crate::data::Sample<f32>]) -> Result<(StepLoss, Vec<Tensor<f32>>)> {
        let batch = collate(samples)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let frames = batch.inputs.map(|t| g.constant(t));
        let target = g.constant(batch.target);
        let out = self.model.forward(&mut g, &p, frames, ForwardOptions::default())?;
        let mut fields: Vec<MotionVars> = Vec::new();
        let mut push_regressed = |r: &crate::regressor::RegressedVars| {
            fields.extend(r.forward);
            fields.extend(r.backward);
        };
        push_regressed(&out.regressed);
        for c in &out.coarse {
            push_regressed(&c.regressed);
        }
        if self.cfg.loss.deform_reference_motions {
            fields.extend(out.motions.motions);
        }
        let lv = total_loss_var(&mut g, out.output, target, &fields, &self.cfg.loss, &self.extractor);
        let scalar = |v: Option<jnmr_tensor::Var>| v.map_or(0.0, |v| g.value(v).data()[0] as f64);
        let loss = StepLoss {
            total: scalar(Some(lv.total)),
            charbonnier: scalar(Some(lv.charbonnier)),
            perceptual: scalar(lv.perceptual),
            deformation: scalar(lv.deformation),
        };
        if !loss.total.is_finite() {
            return Ok((loss, Vec::new()));
        }
        let mut grads = g.backward(lv.total);
        let grads = p
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((loss, grads))
    }

    /// One optimizer step at learning rate `lr`.
    pub fn step(&mut self, samples: &[crate::data::Sample<f32>], lr: f64, step: usize) -> Result<StepLoss> {
        let (loss, mut grads) = self.loss_and_gradients(samples)?;
        if !loss.total.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                step,
                batch: samples.iter().map(|s| s.id.clone()).collect(),
            });
        }
        if let Some(bound) = self.cfg.grad_clip {
            let norm = grads.iter().map(|g| g.sum_sq() as f64).sum::<f64>().sqrt();
            if norm > bound {
                let s = (bound / norm) as f32;
                grads.iter_mut().for_each(|g| *g = g.scale(s));
            }
        }
        self.optimizer.update(&mut self.params, &grads, lr);
        Ok(loss)
    }

    /// Runs the next epoch over `data`.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochRecord> {
        if data.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = self.cfg.optimizer.learning_rate_at(epoch);
        let order = epoch_order(data.len(), self.cfg.seed, epoch);
        let mut batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        if let Some(cap) = self.cfg.max_steps_per_epoch {
            batches.truncate(cap);
        }
        let mut sum = StepLoss::default();
        for (step, idx) in batches.iter().enumerate() {
            let samples: Vec<_> = idx
                .iter()
                .map(|&i| augment(&data.samples[i], &self.cfg.augmentation, sample_seed(self.cfg.seed, epoch, i)).0)
                .collect();
            let l = self.step(&samples, lr, step)?;
            sum.total += l.total;
            sum.charbonnier += l.charbonnier;
            sum.perceptual += l.perceptual;
            sum.deformation += l.deformation;
        }
        self.epoch += 1;
        let n = batches.len() as f64;
        Ok(EpochRecord {
            epoch,
            learning_rate: lr,
            steps: batches.len(),
            loss: sum.total / n,
            charbonnier: sum.charbonnier / n,
            perceptual: sum.perceptual / n,
            deformation: sum.deformation / n,
            seconds: start.elapsed().as_secs_f64(),
            checkpoint: None,
        })
    }

    pub fn evaluate(&self, data: &Dataset, stratify: bool) -> Result<EvalReport> {
        evaluate(&self.model, &self.params, data, stratify, self.cfg.eval_batch_size)
    }
}

/// Trains for the configured number of epochs (continuing a resumed
/// trainer), checkpointing after every epoch when `checkpoint_dir` is set
/// and evaluating on `test` after the last one.
pub fn run_training(trainer: &mut Trainer, train: &Dataset, test: Option<&Dataset>, checkpoint_dir: Option<&Path>) -> Result<RunRecord> {
    let start = Instant::now();
    let mut record = RunRecord {
        config: trainer.config().clone(),
        parameter_count: trainer.params().num_elements(),
        train_samples: train.len(),
        epochs: Vec::new(),
        metrics: Vec::new(),
        wall_clock_seconds: 0.0,
    };
    while trainer.epochs_done() < trainer.config().epochs {
        let mut rec = trainer.train_epoch(train)?;
        if let Some(dir) = checkpoint_dir {
            trainer.save(dir)?;
            rec.checkpoint = Some(dir.to_path_buf());
        }
        record.epochs.push(rec);
    }
    if let Some(test) = test {
        let report = trainer.evaluate(test, false)?;
        record.metrics.push(MetricRecord {
            epoch: trainer.epochs_done(),
            split: "test".into(),
            checkpoint: checkpoint_dir.map(Path::to_path_buf),
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            samples: report.rows.len(),
        });
    }
    record.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GenerateConfig, Split};

    #[test]
    fn schedule_halves_every_twenty_epochs_down_to_the_floor() {
        let o = OptimizerConfig::default();
        assert_eq!(o.learning_rate_at(0), 1e-3);
        assert_eq!(o.learning_rate_at(19), 1e-3);
        assert_eq!(o.learning_rate_at(20), 5e-4);
        assert_eq!(o.learning_rate_at(80), 6.25e-5);
        assert_eq!(o.learning_rate_at(99), 6.25e-5);
        assert_eq!(o.learning_rate * o.decay_factor.powi(4), o.min_learning_rate);
    }

    #[test]
    fn adamax_first_step_moves_by_the_learning_rate() {
        let mut ps = ParamStore::<f32>::new(0);
        ps.add("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut opt = AdaMax::new(OptimizerConfig::default(), &ps);
        let g = vec![Tensor::from_vec(&[3], vec![0.5, -3.0, 0.0]).unwrap()];
        opt.update(&mut ps, &g, 0.1);
        let v = ps.tensors()[0].data();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 1.9).abs() < 1e-6);
        assert_eq!(v[2], 0.5);
    }

    fn tiny_setup() -> (TrainConfig, Dataset) {
        let mut cfg = TrainConfig::for_preset(Preset::Tiny);
        cfg.seed = 5;
        cfg.batch_size = 2;
        cfg.epochs = 2;
        cfg.max_steps_per_epoch = Some(2);
        let data = Dataset::generate(
            &GenerateConfig {
                seed: 1,
                train: 4,
                test: 2,
                height: 16,
                width: 16,
                ..GenerateConfig::default()
            },
            Split::Train,
        )
        .unwrap();
        (cfg, data)
    }

    #[test]
    fn resume_reproduces_the_next_epoch() {
        let (cfg, data) = tiny_setup();
        let dir = tempfile::tempdir().unwrap();
        let mut a = Trainer::new(cfg.clone()).unwrap();
        a.train_epoch(&data).unwrap();
        a.save(dir.path()).unwrap();
        let next = a.train_epoch(&data).unwrap();
        let mut b = Trainer::resume(dir.path()).unwrap();
        assert_eq!(b.epochs_done(), 1);
        let again = b.train_epoch(&data).unwrap();
        assert!((next.loss - again.loss).abs() <= 1e-6);
        assert_eq!(a.params().tensors(), b.params().tensors());
    }

    #[test]
    fn non_finite_input_aborts_with_the_batch() {
        let (cfg, mut data) = tiny_setup();
        let bad = &mut data.samples[0].inputs[0];
        let mut t = bad.tensor().clone();
        t.data_mut()[0] = f32::NAN;
        // Bypass the finiteness check of the frame constructor.
        *bad = crate::motion_model::FrameTensor::from_fn(3, 16, 16, |c, y, x| t.data()[(c * 16 + y) * 16 + x]);
        let mut tr = Trainer::new(cfg).unwrap();
        let samples = vec![data.samples[0].clone()];
        match tr.step(&samples, 1e-3, 0) {
            Err(Error::NonFiniteLoss { batch, .. }) => assert_eq!(batch, vec![data.samples[0].id.clone()]),
            other => panic!("expected a non-finite loss, got {other:?}"),
        }
    }
}
