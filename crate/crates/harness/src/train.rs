//! Alternating GAN optimization, evaluation, checkpoints and samples.

use std::fs;
use std::path::{Path, PathBuf};

use qgan_models::losses::{
    cross_entropy_node, directional_penalty_node, hinge_d_node, neg_mean_node, wasserstein_d_node,
};
use qgan_models::{build_gan, LossKind, Model, SigmaMonitor, SigmaReport, SnKind};
use qgan_nn::{Activation, AdamConfig, AdamState, BnMode, NodeId, Tape};
use qgan_quat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, TrainConfig};
use crate::data::{synth_dataset, Dataset};
use crate::image::{batch_to_quaternions, decapsulate_image, grid, write_ppm};
use crate::metrics::{fit_gaussian, frechet_between, FeatureExtractor, Gaussian};
use crate::{HarnessError, Result};

/// Finite-difference half step for the gradient penalty.
pub const PENALTY_STEP: f64 = 1e-2;
const MONITOR_WARMUP: usize = 50;
const EVAL_NOISE_SALT: u64 = 0x0e7a_1000;
const MONITOR_SALT: u64 = 0x5167_0000;

/// Losses and spectral observations after one generator update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub iteration: u64,
    /// Loss of the last critic step.
    pub loss_d: f64,
    pub loss_g: f64,
    /// Largest sigma over critic layers of the whole constructed matrix.
    pub sigma_full: f64,
    /// Largest sigma over critic layers and components.
    pub sigma_split: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    /// Critic sigmas before the first update of this run.
    pub initial_sigma: Option<SigmaReport>,
    pub steps: Vec<StepLog>,
    /// `(iteration, distance)` per evaluation.
    pub evals: Vec<(u64, f64)>,
    pub d_updates: u64,
    pub g_updates: u64,
    pub checkpoints: Vec<PathBuf>,
}

impl RunReport {
    pub fn initial_fid(&self) -> Option<f64> {
        self.evals.first().filter(|e| e.0 == 0).map(|e| e.1)
    }

    pub fn best_fid(&self) -> Option<(u64, f64)> {
        self.evals.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn max_sigma_full(&self) -> f64 {
        let init = self.initial_sigma.as_ref().map_or(0.0, SigmaReport::max_full);
        self.steps.iter().map(|s| s.sigma_full).fold(init, f64::max)
    }

    pub fn max_sigma_split(&self) -> f64 {
        let init = self.initial_sigma.as_ref().map_or(0.0, SigmaReport::max_split);
        self.steps.iter().map(|s| s.sigma_split).fold(init, f64::max)
    }

    pub fn has_nan(&self) -> bool {
        self.steps
            .iter()
            .any(|s| !s.loss_d.is_finite() || !s.loss_g.is_finite())
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub g: Model<f32>,
    pub d: Model<f32>,
    pub opt_g: AdamState<f32>,
    pub opt_d: AdamState<f32>,
    /// Independent sigma estimates of the critic weights as used.
    pub monitor: SigmaMonitor<f32>,
    pub data: Dataset,
    pub rng: ChaCha8Rng,
    /// Generator updates so far.
    pub iteration: u64,
    pub d_updates: u64,
    extractor: Box<dyn FeatureExtractor>,
    reference: Option<Gaussian>,
}

fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(s) => synth_dataset(*s),
        DataSource::Path(p) => Dataset::load(Path::new(p)),
    }
}

/// Standard normal noise `[1, n, dim]`.
fn noise(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Result<Tensor<f32>> {
    Ok(Tensor::from_vec(
        &[1, n, dim],
        (0..n * dim).map(|_| rng.sample(StandardNormal)).collect(),
    )?)
}

/// Runs a copy of `g` on `z` in chunks of `chunk`, concatenating along the
/// batch axis, so the model's running statistics are untouched.
fn generate(g: &Model<f32>, z: &Tensor<f32>, chunk: usize, mode: BnMode) -> Result<Tensor<f32>> {
    let mut g = g.clone();
    let (n, dim) = (z.shape()[1], z.shape()[2]);
    let mut data = Vec::new();
    let mut shape = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let len = chunk.min(n - start);
        let part = Tensor::from_vec(&[1, len, dim], z.data()[start * dim..(start + len) * dim].to_vec())?;
        let y = g.forward_tensor(&part, mode)?;
        shape = y.shape().to_vec();
        data.extend_from_slice(y.data());
    }
    shape[1] = n;
    Ok(Tensor::from_vec(&shape, data)?)
}

fn stats_ready(g: &Model<f32>) -> bool {
    g.norms.iter().all(|s| s.initialized)
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec()?;
        let data = load_data(&config.data)?;
        if (data.height, data.width) != (spec.image_size, spec.image_size) {
            return Err(HarnessError::Config(format!(
                "dataset images are {}x{}, model {} expects {}x{}",
                data.height, data.width, spec.name, spec.image_size, spec.image_size
            )));
        }
        let (g, d) = build_gan::<f32>(&spec, config.seed)?;
        let adam = AdamConfig {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
        };
        let opt_g = AdamState::new(&g.store, adam);
        let opt_d = AdamState::new(&d.store, adam);
        let monitor = SigmaMonitor::new(&d, config.seed ^ MONITOR_SALT, MONITOR_WARMUP, 1)?;
        let extractor = config.extractor.build();
        let reference = if config.eval_every > 0 {
            Some(fit_gaussian(
                &extractor.features(&data.head_batch(config.eval_reference)?)?,
            )?)
        } else {
            None
        };
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            g,
            d,
            opt_g,
            opt_d,
            monitor,
            data,
            iteration: 0,
            d_updates: 0,
            extractor,
            reference,
        })
    }

    fn numeric(&self, what: &str, value: f64) -> HarnessError {
        let mut detail = format!("{what} = {value}; weight norms:");
        for model in [&self.g, &self.d] {
            for (_, p) in model.store.iter() {
                let n = p.value.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                detail.push_str(&format!(" {}={n:.4e}", p.name));
            }
        }
        HarnessError::Numeric {
            iteration: self.iteration,
            detail,
        }
    }

    fn finite(&self, what: &str, value: f64) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(self.numeric(what, value))
        }
    }

    fn check_weights(&self) -> Result<()> {
        for (model, which) in [(&self.g, "generator"), (&self.d, "discriminator")] {
            if let Some((_, p)) = model.store.iter().find(|(_, p)| !p.value.is_finite()) {
                return Err(self.numeric(&format!("{which} weight {}", p.name), f64::NAN));
            }
        }
        Ok(())
    }

    fn noise(&mut self, n: usize) -> Result<Tensor<f32>> {
        let dim = self.g.input_shape[0];
        noise(&mut self.rng, n, dim)
    }

    /// Probabilities for cross-entropy: the critic's own when it ends in a
    /// sigmoid, otherwise a sigmoid of its scores.
    fn probabilities(&self, tape: &mut Tape<f32>, x: NodeId) -> Result<NodeId> {
        if self.d.outputs_probabilities() {
            Ok(x)
        } else {
            Ok(tape.activation(Activation::Sigmoid, x)?)
        }
    }

    /// `x_hat +- h d` with `x_hat` a random per-sample interpolate of `real`
    /// and `fake` and `d` the unit direction from fake to real.
    fn penalty_points(&mut self, real: &Tensor<f32>, fake: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let b = real.shape()[1];
        let per = real.numel() / b;
        let mut plus = Vec::with_capacity(real.numel());
        let mut minus = Vec::with_capacity(real.numel());
        for (r, f) in real.data().chunks(per).zip(fake.data().chunks(per)) {
            let eps: f32 = self.rng.gen();
            let norm = r
                .iter()
                .zip(f)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            for (&a, &c) in r.iter().zip(f) {
                let x = eps * a + (1.0 - eps) * c;
                let step = (PENALTY_STEP * (a - c) as f64 / norm) as f32;
                plus.push(x + step);
                minus.push(x - step);
            }
        }
        Ok((
            Tensor::from_vec(real.shape(), plus)?,
            Tensor::from_vec(real.shape(), minus)?,
        ))
    }

    fn d_step(&mut self) -> Result<f64> {
        self.d.update_spectral_norms()?;
        let b = self.config.batch_size;
        let real = self.data.sample_batch(&mut self.rng, b)?;
        let z = self.noise(b)?;
        let fake = self.g.forward_tensor(&z, BnMode::Train)?;
        let mut tape = Tape::new();
        let r = tape.constant(real.clone());
        let f = tape.constant(fake.clone());
        let dr = self.d.forward(&mut tape, r, BnMode::Train)?;
        let df = self.d.forward(&mut tape, f, BnMode::Train)?;
        let loss = match self.config.loss {
            LossKind::Hinge => hinge_d_node(&mut tape, dr, df)?,
            LossKind::Qce => {
                let pr = self.probabilities(&mut tape, dr)?;
                let pf = self.probabilities(&mut tape, df)?;
                let a = cross_entropy_node(&mut tape, pr, 1.0)?;
                let c = cross_entropy_node(&mut tape, pf, 0.0)?;
                tape.add(a, c)?
            }
            LossKind::WganGp { lambda } => {
                let w = wasserstein_d_node(&mut tape, dr, df)?;
                let (plus, minus) = self.penalty_points(&real, &fake)?;
                let p = tape.constant(plus);
                let m = tape.constant(minus);
                let dp = self.d.forward(&mut tape, p, BnMode::Train)?;
                let dm = self.d.forward(&mut tape, m, BnMode::Train)?;
                let pen = directional_penalty_node(&mut tape, dp, dm, PENALTY_STEP, lambda)?;
                tape.add(w, pen)?
            }
        };
        let value = self.finite("discriminator loss", tape.value(loss).data()[0] as f64)?;
        let grads = tape.backward(loss)?;
        self.opt_d.step(&mut self.d.store, &grads)?;
        self.d_updates += 1;
        Ok(value)
    }

    /// The critic runs on its own tape with the generated batch as a
    /// constant; its input gradient `g_x` is pulled back through the
    /// generator tape as the surrogate `sum(x * g_x)`.
    fn g_step(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let z = self.noise(b)?;
        let mut gt = Tape::new();
        let zn = gt.constant(z);
        let x = self.g.forward(&mut gt, zn, BnMode::Train)?;
        let mut dt = Tape::new();
        let xc = dt.constant(gt.value(x).clone());
        let y = self.d.forward(&mut dt, xc, BnMode::Train)?;
        let loss = match self.config.loss {
            LossKind::Hinge | LossKind::WganGp { .. } => neg_mean_node(&mut dt, y)?,
            LossKind::Qce => {
                let p = self.probabilities(&mut dt, y)?;
                cross_entropy_node(&mut dt, p, 1.0)?
            }
        };
        let value = self.finite("generator loss", dt.value(loss).data()[0] as f64)?;
        let gx = dt
            .backward(loss)?
            .node(xc)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(gt.value(x).shape()));
        let gxn = gt.constant(gx);
        let prod = gt.mul(x, gxn)?;
        let surrogate = gt.sum(prod)?;
        let grads = gt.backward(surrogate)?;
        self.opt_g.step(&mut self.g.store, &grads)?;
        Ok(value)
    }

    /// `critic_iters` critic updates, one generator update, then a sigma
    /// observation of the critic.
    pub fn step(&mut self) -> Result<StepLog> {
        self.check_weights()?;
        let mut loss_d = 0.0;
        for _ in 0..self.config.critic_iters {
            loss_d = self.d_step()?;
        }
        let loss_g = self.g_step()?;
        self.iteration += 1;
        let s = self.monitor.observe(&self.d)?;
        Ok(StepLog {
            iteration: self.iteration,
            loss_d,
            loss_g,
            sigma_full: s.max_full(),
            sigma_split: s.max_split(),
        })
    }

    /// Fréchet distance of `eval_generated` samples from fixed noise against
    /// the reference images. Samples use batch statistics in chunks of
    /// `batch_size`, so every evaluation of a run is comparable.
    pub fn evaluate(&self) -> Result<f64> {
        let reference = match &self.reference {
            Some(r) => r,
            None => {
                let batch = self.data.head_batch(self.config.eval_reference.max(2))?;
                &fit_gaussian(&self.extractor.features(&batch)?)?
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ EVAL_NOISE_SALT);
        let z = noise(&mut rng, self.config.eval_generated, self.g.input_shape[0])?;
        let x = generate(&self.g, &z, self.config.batch_size, BnMode::Train)?;
        let fid = frechet_between(&fit_gaussian(&self.extractor.features(&x)?)?, reference)?;
        self.finite("Fréchet distance", fid)
    }

    fn out_dir(&self) -> Result<Option<PathBuf>> {
        match &self.config.out_dir {
            None => Ok(None),
            Some(d) => {
                let p = PathBuf::from(d);
                fs::create_dir_all(&p).map_err(|e| HarnessError::io(&p, e))?;
                Ok(Some(p))
            }
        }
    }

    /// Trains until `config.iterations` generator updates, evaluating and
    /// checkpointing on schedule. A fresh run records its initial state.
    pub fn run(&mut self) -> Result<RunReport> {
        let mut report = RunReport::default();
        let out = self.out_dir()?;
        let (start_d, start_g) = (self.d_updates, self.iteration);
        let mut best = f64::INFINITY;
        self.check_weights()?;
        if self.iteration == 0 {
            report.initial_sigma = Some(self.monitor.observe(&self.d)?);
            if self.config.eval_every > 0 {
                best = self.evaluate()?;
                report.evals.push((0, best));
            }
        }
        while self.iteration < self.config.iterations {
            let log = self.step()?;
            log::debug!(
                "iter {} loss_d {:.4} loss_g {:.4} sigma {:.4}/{:.4}",
                log.iteration,
                log.loss_d,
                log.loss_g,
                log.sigma_full,
                log.sigma_split
            );
            report.steps.push(log);
            let it = self.iteration;
            if self.config.eval_every > 0 && it % self.config.eval_every == 0 {
                let fid = self.evaluate()?;
                log::info!("iter {it} frechet {fid:.4}");
                report.evals.push((it, fid));
                if fid < best {
                    best = fid;
                    if let Some(dir) = &out {
                        let p = dir.join("best.qgn");
                        self.checkpoint()?.save(&p)?;
                        report.checkpoints.push(p);
                    }
                }
            }
            if self.config.checkpoint_every > 0 && it % self.config.checkpoint_every == 0 {
                if let Some(dir) = &out {
                    let p = dir.join(format!("ckpt_{it:06}.qgn"));
                    self.checkpoint()?.save(&p)?;
                    report.checkpoints.push(p);
                    self.write_grid(&dir.join(format!("grid_{it:06}.ppm")), 16)?;
                }
            }
        }
        report.d_updates = self.d_updates - start_d;
        report.g_updates = self.iteration - start_g;
        Ok(report)
    }

    fn write_grid(&self, path: &Path, n: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ EVAL_NOISE_SALT);
        let z = noise(&mut rng, n, self.g.input_shape[0])?;
        let x = generate(&self.g, &z, self.config.batch_size, BnMode::Train)?;
        let images = batch_to_quaternions(&x)?
            .iter()
            .map(|q| Ok(decapsulate_image(q)?.rgb))
            .collect::<Result<Vec<_>>>()?;
        write_ppm(path, &grid(&images)?)
    }

    /// Every tensor and counter needed to continue this run bitwise.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.push_bytes("config", self.config.to_json().as_bytes());
        c.push_u64("iteration", self.iteration);
        c.push_u64("d_updates", self.d_updates);
        let seed = self.rng.get_seed();
        let words: Vec<u32> = seed
            .chunks(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        c.push_u32s("rng.seed", &words);
        c.push_u64("rng.stream", self.rng.get_stream());
        let pos = self.rng.get_word_pos();
        c.push_u32s(
            "rng.word_pos",
            &[pos as u32, (pos >> 32) as u32, (pos >> 64) as u32, (pos >> 96) as u32],
        );
        push_model(&mut c, "g", &self.g, &self.opt_g);
        push_model(&mut c, "d", &self.d, &self.opt_d);
        for (i, (f, s)) in self.monitor.full.iter().zip(&self.monitor.split).enumerate() {
            for (j, st) in f.states.iter().chain(&s.states).enumerate() {
                c.push(format!("monitor.{i}.{j}.u"), &[st.u.len()], st.u.clone());
                c.push(format!("monitor.{i}.{j}.v"), &[st.v.len()], st.v.clone());
            }
        }
        Ok(c)
    }

    /// Rebuilds the run described by the checkpoint's config, then restores
    /// every saved tensor and counter.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(config_from_checkpoint(c)?)?;
        t.iteration = c.get_u64("iteration")?;
        t.d_updates = c.get_u64("d_updates")?;
        let words = c.get_u32s("rng.seed")?;
        let mut seed = [0u8; 32];
        if words.len() != 8 {
            return Err(HarnessError::Config("rng.seed must hold 8 words".into()));
        }
        for (i, w) in words.iter().enumerate() {
            seed[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
        }
        t.rng = ChaCha8Rng::from_seed(seed);
        t.rng.set_stream(c.get_u64("rng.stream")?);
        let pos = c.get_u32s("rng.word_pos")?;
        if pos.len() != 4 {
            return Err(HarnessError::Config("rng.word_pos must hold 4 words".into()));
        }
        t.rng
            .set_word_pos(pos.iter().rev().fold(0u128, |a, &w| a << 32 | w as u128));
        load_model(c, "g", &mut t.g, Some(&mut t.opt_g))?;
        load_model(c, "d", &mut t.d, Some(&mut t.opt_d))?;
        for (i, (f, s)) in t.monitor.full.iter_mut().zip(t.monitor.split.iter_mut()).enumerate() {
            for (j, st) in f.states.iter_mut().chain(s.states.iter_mut()).enumerate() {
                restore(c, &format!("monitor.{i}.{j}.u"), &mut st.u)?;
                restore(c, &format!("monitor.{i}.{j}.v"), &mut st.v)?;
            }
        }
        Ok(t)
    }
}

fn push_model(c: &mut Checkpoint, prefix: &str, m: &Model<f32>, opt: &AdamState<f32>) {
    for (_, p) in m.store.iter() {
        c.push(
            format!("{prefix}.param.{}", p.name),
            p.value.shape(),
            p.value.data().to_vec(),
        );
    }
    for (i, s) in m.norms.iter().enumerate() {
        c.push(format!("{prefix}.stats.{i}.mean"), &[s.mean.len()], s.mean.clone());
        c.push(format!("{prefix}.stats.{i}.var"), &[s.var.len()], s.var.clone());
        c.push_u32s(format!("{prefix}.stats.{i}.initialized"), &[s.initialized as u32]);
    }
    for (i, e) in m.spectral.iter().enumerate() {
        for (j, st) in e.norm.states.iter().enumerate() {
            c.push(format!("{prefix}.sn.{i}.{j}.u"), &[st.u.len()], st.u.clone());
            c.push(format!("{prefix}.sn.{i}.{j}.v"), &[st.v.len()], st.v.clone());
            c.push_u32s(format!("{prefix}.sn.{i}.{j}.degenerate"), &[st.degenerate as u32]);
        }
    }
    c.push_u64(format!("{prefix}.adam.step"), opt.step);
    for (i, (m1, v1)) in opt.m.iter().zip(&opt.v).enumerate() {
        c.push(format!("{prefix}.adam.m.{i}"), m1.shape(), m1.data().to_vec());
        c.push(format!("{prefix}.adam.v.{i}"), v1.shape(), v1.data().to_vec());
    }
}

fn restore(c: &Checkpoint, name: &str, into: &mut [f32]) -> Result<()> {
    let t = c.get(name)?;
    if t.data.len() != into.len() {
        return Err(HarnessError::Config(format!(
            "`{name}` has {} values, expected {}",
            t.data.len(),
            into.len()
        )));
    }
    into.copy_from_slice(&t.data);
    Ok(())
}

fn restore_tensor(c: &Checkpoint, name: &str, into: &mut Tensor<f32>) -> Result<()> {
    if c.get(name)?.shape != into.shape() {
        return Err(HarnessError::Config(format!(
            "`{name}` has shape {:?}, expected {:?}",
            c.get(name)?.shape,
            into.shape()
        )));
    }
    restore(c, name, into.data_mut())
}

fn flag(c: &Checkpoint, name: &str) -> Result<bool> {
    Ok(c.get_u32s(name)?.first().is_some_and(|&w| w != 0))
}

fn load_model(c: &Checkpoint, prefix: &str, m: &mut Model<f32>, opt: Option<&mut AdamState<f32>>) -> Result<()> {
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let name = format!("{prefix}.param.{}", m.store.param(id).name);
        restore_tensor(c, &name, m.store.get_mut(id))?;
    }
    for (i, s) in m.norms.iter_mut().enumerate() {
        restore(c, &format!("{prefix}.stats.{i}.mean"), &mut s.mean)?;
        restore(c, &format!("{prefix}.stats.{i}.var"), &mut s.var)?;
        s.initialized = flag(c, &format!("{prefix}.stats.{i}.initialized"))?;
    }
    for (i, e) in m.spectral.iter_mut().enumerate() {
        for (j, st) in e.norm.states.iter_mut().enumerate() {
            restore(c, &format!("{prefix}.sn.{i}.{j}.u"), &mut st.u)?;
            restore(c, &format!("{prefix}.sn.{i}.{j}.v"), &mut st.v)?;
            st.degenerate = flag(c, &format!("{prefix}.sn.{i}.{j}.degenerate"))?;
        }
    }
    let Some(opt) = opt else { return Ok(()) };
    opt.step = c.get_u64(&format!("{prefix}.adam.step"))?;
    for (i, (m1, v1)) in opt.m.iter_mut().zip(opt.v.iter_mut()).enumerate() {
        restore_tensor(c, &format!("{prefix}.adam.m.{i}"), m1)?;
        restore_tensor(c, &format!("{prefix}.adam.v.{i}"), v1)?;
    }
    Ok(())
}

/// The run configuration and trained generator of a checkpoint, without
/// loading the training data.
pub fn generator_from_checkpoint(c: &Checkpoint) -> Result<(TrainConfig, Model<f32>)> {
    let config = config_from_checkpoint(c)?;
    let (mut g, _) = build_gan::<f32>(&config.model_spec()?, config.seed)?;
    load_model(c, "g", &mut g, None)?;
    Ok((config, g))
}

fn config_from_checkpoint(c: &Checkpoint) -> Result<TrainConfig> {
    let json = String::from_utf8(c.get_bytes("config")?)
        .map_err(|_| HarnessError::Config("checkpoint config is not UTF-8".into()))?;
    TrainConfig::from_json(&json)
}

/// Files written by [`emit_samples`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub files: Vec<PathBuf>,
    pub grid: PathBuf,
    /// Largest `|q0|` over the samples.
    pub max_real_part: f64,
    /// Components clamped into `[-1, 1]`.
    pub clamped: usize,
    /// The generator output `[1, n, 4, H, W]` the files were written from.
    pub raw: Tensor<f32>,
}

/// Writes `n` generated images as `sample_NNNN.ppm` plus `grid.ppm` into
/// `dir`. Noise comes from `seed`; running statistics are used once the
/// generator has been trained, batch statistics before that.
pub fn emit_samples(g: &Model<f32>, n: usize, seed: u64, dir: &Path) -> Result<SampleReport> {
    if n == 0 {
        return Err(HarnessError::Config("sample count must be at least 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = noise(&mut rng, n, g.input_shape[0])?;
    let mode = if stats_ready(g) { BnMode::Eval } else { BnMode::Train };
    let chunk = if mode == BnMode::Train { n.max(2) } else { 64 };
    let raw = generate(g, &z, chunk, mode)?;
    let mut files = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let (mut max_real_part, mut clamped) = (0.0f64, 0);
    for (i, q) in batch_to_quaternions(&raw)?.iter().enumerate() {
        let d = decapsulate_image(q)?;
        max_real_part = max_real_part.max(d.max_real_part);
        clamped += d.clamped;
        let p = dir.join(format!("sample_{i:04}.ppm"));
        write_ppm(&p, &d.rgb)?;
        files.push(p);
        images.push(d.rgb);
    }
    let grid_path = dir.join("grid.ppm");
    write_ppm(&grid_path, &grid(&images)?)?;
    Ok(SampleReport {
        files,
        grid: grid_path,
        max_real_part,
        clamped,
        raw,
    })
}

/// Trains `base` with the given spectral normalization for `iterations`
/// generator updates and reports the critic's sigma history.
pub fn qsn_ablation(base: &TrainConfig, sn: SnKind, iterations: u64) -> Result<RunReport> {
    let config = TrainConfig {
        sn_mode: sn,
        iterations,
        eval_every: 0,
        checkpoint_every: 0,
        out_dir: None,
        ..base.clone()
    };
    Trainer::new(config)?.run()
}
