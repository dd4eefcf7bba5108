//! Two-phase training: a probe run on the simple architecture, a complexity
//! check, then either continuation of the probe model or a fresh complex
//! model with a longer schedule.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{
    plan_architecture_with, stack_frames, ArchitectureSpec, Autoencoder, Complexity, PlanOptions,
    Preset,
};
use crate::complexity::{assess_complexity, ComplexityParams, ComplexityVerdict};
use crate::data_io::{Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossParams};
use crate::nn::Adam;

/// Seed offset for the model rebuilt after a complex verdict.
const COMPLEX_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub n_simple: usize,
    pub n_complex: usize,
    /// Minimum epochs on the complex schedule.
    pub e_complex: usize,
    /// Fraction of the schedule after which the learning rate drops.
    pub lr_drop_fraction: f64,
    pub lr_drop_factor: f32,
    pub seed: u64,
    pub preset: Preset,
    pub plan: PlanOptions,
    pub loss: LossParams,
    pub complexity: ComplexityParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 32,
            n_simple: 2500,
            n_complex: 24000,
            e_complex: 20,
            lr_drop_fraction: 0.8,
            lr_drop_factor: 10.0,
            seed: 0,
            preset: Preset::VideoStride3,
            plan: PlanOptions::default(),
            loss: LossParams::default(),
            complexity: ComplexityParams::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for still-image collections (64×64 or 128×128): larger
    /// batches, a higher learning rate and one long schedule without a
    /// complexity probe.
    pub fn non_video(preset: Preset) -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            batch_size: 128,
            n_complex: 500_000,
            preset,
            ..TrainConfig::default()
        }
    }

    pub fn uses_probe(&self) -> bool {
        self.preset == Preset::VideoStride3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.uses_probe() && self.n_simple < self.complexity.n_eval {
            return Err(Error::Config(format!(
                "n_simple ({}) must be at least n_eval ({})",
                self.n_simple, self.complexity.n_eval
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_fraction) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config("invalid learning-rate drop".into()));
        }
        self.loss.validate()?;
        self.complexity.validate()
    }
}

/// Total iterations of the final schedule. The simple count includes the
/// probe iterations already run.
pub fn plan_iterations(frame_count: usize, complexity: Complexity, config: &TrainConfig) -> usize {
    match complexity {
        Complexity::Simple => config.n_simple,
        Complexity::Complex => {
            let per_epoch = frame_count.div_ceil(config.batch_size);
            config.n_complex.max(config.e_complex * per_epoch)
        }
    }
}

/// First iteration (0-based) that runs at the reduced learning rate.
pub fn lr_drop_iteration(total: usize, config: &TrainConfig) -> usize {
    (config.lr_drop_fraction * total as f64).floor() as usize
}

pub fn learning_rate_at(iteration: usize, total: usize, config: &TrainConfig) -> f32 {
    if iteration >= lr_drop_iteration(total, config) {
        config.learning_rate / config.lr_drop_factor
    } else {
        config.learning_rate
    }
}

/// Mini-batch positions drawn from a stream of random permutations. Each
/// epoch visits every frame once; its last batch may be short.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(frame_count: usize, seed: u64) -> Self {
        EpochSampler {
            order: (0..frame_count).collect(),
            cursor: frame_count,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub reconstruction: f64,
    pub noise: f64,
}

/// One progress record; `Display` gives the machine-parsable log line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub stats: LossStats,
    pub learning_rate: f32,
}

impl fmt::Display for Progress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} loss={:.6} l_rec={:.6} l_noise={:.6} lr={:e}",
            self.iteration,
            self.stats.total,
            self.stats.reconstruction,
            self.stats.noise,
            self.learning_rate
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Autoencoder,
    /// `None` when the schedule skips the probe.
    pub verdict: Option<ComplexityVerdict>,
    pub iterations: usize,
    pub lr_drop_at: usize,
    pub final_stats: LossStats,
}

fn to_f64_batch_major(x: &Array4<f32>) -> Array4<f64> {
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .mapv(f64::from)
        .as_standard_layout()
        .into_owned()
}

/// Loss of the model on a batch of frames, without updating anything.
pub fn evaluate_loss(
    model: &Autoencoder,
    frames: &[&Frame],
    params: &LossParams,
) -> Result<LossStats> {
    let x = stack_frames(frames)?;
    let out = model.forward_tensor(&x)?;
    let background = to_f64_batch_major(&out.slice(s![0..3, .., .., ..]).to_owned());
    let noise = out.index_axis(Axis(0), 3).mapv(f64::from);
    let bundle = total_loss(&background, &noise, &to_f64_batch_major(&x), params)?;
    Ok(LossStats {
        total: bundle.total,
        reconstruction: bundle.reconstruction,
        noise: bundle.noise,
    })
}

/// One Adam step on a batch.
pub fn train_step(
    model: &mut Autoencoder,
    optimizer: &mut Adam,
    frames: &[&Frame],
    params: &LossParams,
    learning_rate: f32,
) -> Result<LossStats> {
    let x = stack_frames(frames)?;
    let tape = model.forward_train(&x)?;
    let out = tape.output();
    let background = to_f64_batch_major(&out.slice(s![0..3, .., .., ..]).to_owned());
    let noise: Array3<f64> = out.index_axis(Axis(0), 3).mapv(f64::from);
    let targets = to_f64_batch_major(&x);
    let bundle = total_loss(&background, &noise, &targets, params)?;
    let grads = bundle.gradients(&background, &noise, &targets);

    let mut d_out = Array4::<f32>::zeros(out.dim());
    d_out.slice_mut(s![0..3, .., .., ..]).assign(
        &grads
            .background
            .view()
            .permuted_axes([1, 0, 2, 3])
            .mapv(|v| v as f32),
    );
    d_out
        .index_axis_mut(Axis(0), 3)
        .assign(&grads.noise.mapv(|v| v as f32));

    let g = model.backward(&tape, &d_out)?;
    optimizer.step(model.parameters_mut(), &g.0, learning_rate);
    Ok(LossStats {
        total: bundle.total,
        reconstruction: bundle.reconstruction,
        noise: bundle.noise,
    })
}

struct Session<'a> {
    model: Autoencoder,
    optimizer: Adam,
    sampler: EpochSampler,
    seq: &'a FrameSequence,
    iteration: usize,
    last: LossStats,
}

impl<'a> Session<'a> {
    fn new(model: Autoencoder, seq: &'a FrameSequence, seed: u64) -> Self {
        Session {
            model,
            optimizer: Adam::default(),
            sampler: EpochSampler::new(seq.len(), seed),
            seq,
            iteration: 0,
            last: LossStats {
                total: f64::NAN,
                reconstruction: f64::NAN,
                noise: f64::NAN,
            },
        }
    }

    /// Runs until `until` iterations have been executed under a schedule of
    /// `total` iterations.
    fn run(
        &mut self,
        until: usize,
        total: usize,
        config: &TrainConfig,
        observer: &mut dyn FnMut(&Progress),
    ) -> Result<()> {
        while self.iteration < until {
            let lr = learning_rate_at(self.iteration, total, config);
            let positions = self.sampler.next_batch(config.batch_size);
            let frames: Vec<&Frame> = positions.iter().map(|&i| &self.seq.frames()[i]).collect();
            self.last = train_step(
                &mut self.model,
                &mut self.optimizer,
                &frames,
                &config.loss,
                lr,
            )?;
            observer(&Progress {
                iteration: self.iteration,
                stats: self.last,
                learning_rate: lr,
            });
            self.iteration += 1;
        }
        Ok(())
    }
}

pub fn train(seq: &FrameSequence, config: &TrainConfig) -> Result<TrainedModel> {
    train_with(seq, config, &mut |_| {})
}

/// Trains with `observer` called after every iteration.
pub fn train_with(
    seq: &FrameSequence,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&Progress),
) -> Result<TrainedModel> {
    config.validate()?;
    let (h, w) = seq.dim();

    if !config.uses_probe() {
        let spec = plan_architecture_with(h, w, Complexity::Complex, config.preset, config.plan)?;
        let total = config.n_complex;
        let mut session = Session::new(Autoencoder::new(spec, config.seed)?, seq, config.seed);
        session.run(total, total, config, observer)?;
        return Ok(TrainedModel {
            model: session.model,
            verdict: None,
            iterations: session.iteration,
            lr_drop_at: lr_drop_iteration(total, config),
            final_stats: session.last,
        });
    }

    let simple = plan_architecture_with(h, w, Complexity::Simple, config.preset, config.plan)?;
    let simple_total = plan_iterations(seq.len(), Complexity::Simple, config);
    let mut probe = Session::new(Autoencoder::new(simple, config.seed)?, seq, config.seed);
    probe.run(config.complexity.n_eval, simple_total, config, observer)?;

    let verdict = assess_complexity(
        seq,
        &probe.model,
        &config.complexity,
        config.loss.tau1,
        config.batch_size,
    )?;

    let (session, total) = match verdict.complexity {
        Complexity::Simple => {
            probe.run(simple_total, simple_total, config, observer)?;
            (probe, simple_total)
        }
        Complexity::Complex => {
            drop(probe);
            let spec =
                plan_architecture_with(h, w, Complexity::Complex, config.preset, config.plan)?;
            let seed = config.seed.wrapping_add(COMPLEX_SEED_OFFSET);
            let total = plan_iterations(seq.len(), Complexity::Complex, config);
            let mut fresh = Session::new(Autoencoder::new(spec, seed)?, seq, seed);
            fresh.run(total, total, config, observer)?;
            (fresh, total)
        }
    };

    Ok(TrainedModel {
        model: session.model,
        verdict: Some(verdict),
        iterations: session.iteration,
        lr_drop_at: lr_drop_iteration(total, config),
        final_stats: session.last,
    })
}

/// Runs only the probe phase and returns its verdict and model.
pub fn probe_complexity(
    seq: &FrameSequence,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&Progress),
) -> Result<(ComplexityVerdict, Autoencoder)> {
    config.validate()?;
    let (h, w) = seq.dim();
    let simple = plan_architecture_with(h, w, Complexity::Simple, config.preset, config.plan)?;
    let simple_total = plan_iterations(seq.len(), Complexity::Simple, config);
    let mut probe = Session::new(Autoencoder::new(simple, config.seed)?, seq, config.seed);
    probe.run(config.complexity.n_eval, simple_total, config, observer)?;
    let verdict = assess_complexity(
        seq,
        &probe.model,
        &config.complexity,
        config.loss.tau1,
        config.batch_size,
    )?;
    Ok((verdict, probe.model))
}

const CHECKPOINT_MAGIC: &str = "bgrecon-checkpoint 1";

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parameter_blob(model: &Autoencoder) -> Vec<u8> {
    let params = model.parameters();
    let mut blob = Vec::new();
    blob.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        blob.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    blob
}

/// Writes the architecture as JSON followed by the raw parameters. Both parts
/// carry a SHA-256 digest in the header.
pub fn save_checkpoint(model: &Autoencoder, path: &Path) -> Result<()> {
    let spec =
        serde_json::to_string_pretty(model.spec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let blob = parameter_blob(model);
    let mut out = Vec::with_capacity(spec.len() + blob.len() + 256);
    writeln!(out, "{CHECKPOINT_MAGIC}").expect("vec write");
    writeln!(out, "spec-sha256 {}", hex_digest(spec.as_bytes())).expect("vec write");
    writeln!(out, "params-sha256 {}", hex_digest(&blob)).expect("vec write");
    writeln!(out, "spec-bytes {}", spec.len()).expect("vec write");
    out.extend_from_slice(spec.as_bytes());
    out.extend_from_slice(&blob);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn header_value(reader: &mut impl BufRead, key: &str) -> Result<String> {
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let line = line.trim_end();
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}` header, found `{line}`")))
}

pub fn load_checkpoint(path: &Path) -> Result<Autoencoder> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut magic = String::new();
    reader
        .read_line(&mut magic)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if magic.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let spec_hash = header_value(&mut reader, "spec-sha256")?;
    let params_hash = header_value(&mut reader, "params-sha256")?;
    let spec_len: usize = header_value(&mut reader, "spec-bytes")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad spec length".into()))?;

    let mut spec_bytes = vec![0u8; spec_len];
    reader
        .read_exact(&mut spec_bytes)
        .map_err(|_| Error::Checkpoint("truncated architecture".into()))?;
    if hex_digest(&spec_bytes) != spec_hash {
        return Err(Error::Checkpoint("architecture hash mismatch".into()));
    }
    let spec: ArchitectureSpec =
        serde_json::from_slice(&spec_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut blob = Vec::new();
    reader
        .read_to_end(&mut blob)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if hex_digest(&blob) != params_hash {
        return Err(Error::Checkpoint("parameter hash mismatch".into()));
    }
    let mut cursor = blob.as_slice();
    let take_u64 = |cursor: &mut &[u8]| -> Result<u64> {
        if cursor.len() < 8 {
            return Err(Error::Checkpoint("truncated parameters".into()));
        }
        let (head, rest) = cursor.split_at(8);
        *cursor = rest;
        Ok(u64::from_le_bytes(head.try_into().expect("8 bytes")))
    };
    let count = take_u64(&mut cursor)? as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let len = take_u64(&mut cursor)? as usize;
        if cursor.len() < len * 4 {
            return Err(Error::Checkpoint("truncated parameters".into()));
        }
        let (head, rest) = cursor.split_at(len * 4);
        values.push(
            head.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect::<Vec<f32>>(),
        );
        cursor = rest;
    }
    if !cursor.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let mut model = Autoencoder::new(spec, 0)?;
    model
        .load_parameters(&values)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(model)
}

/// Loads a checkpoint and checks it realizes `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchitectureSpec) -> Result<Autoencoder> {
    let model = load_checkpoint(path)?;
    if model.spec() != expected {
        return Err(Error::Checkpoint(
            "checkpoint architecture differs from the requested one".into(),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_plans() {
        let cfg = TrainConfig::default();
        let simple = plan_iterations(1700, Complexity::Simple, &cfg);
        assert_eq!(simple, 2500);
        assert_eq!(simple - cfg.complexity.n_eval, 500);
        assert_eq!(plan_iterations(1700, Complexity::Complex, &cfg), 24000);
        assert_eq!(plan_iterations(107_817, Complexity::Complex, &cfg), 67_400);
    }

    #[test]
    fn learning_rate_drops_once_at_eighty_percent() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_drop_iteration(2500, &cfg), 2000);
        let rates: Vec<f32> = (0..2500).map(|i| learning_rate_at(i, 2500, &cfg)).collect();
        let changes = rates.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
        assert_eq!(rates[1999], 5e-4);
        assert!((rates[2000] - 5e-5).abs() < 1e-10);
    }

    #[test]
    fn sampler_visits_each_frame_once_per_epoch() {
        let mut s = EpochSampler::new(10, 3);
        for _ in 0..4 {
            let mut seen: Vec<usize> = Vec::new();
            seen.extend(s.next_batch(4));
            seen.extend(s.next_batch(4));
            let last = s.next_batch(4);
            assert_eq!(last.len(), 2);
            seen.extend(last);
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn config_rejects_short_simple_schedule() {
        let cfg = TrainConfig {
            n_simple: 100,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::non_video(Preset::Image64Stride2)
            .validate()
            .is_ok());
    }

    #[test]
    fn progress_line_format() {
        let p = Progress {
            iteration: 12,
            stats: LossStats {
                total: 0.5,
                reconstruction: 0.25,
                noise: 0.25,
            },
            learning_rate: 5e-4,
        };
        assert_eq!(
            p.to_string(),
            "iter=12 loss=0.500000 l_rec=0.250000 l_noise=0.250000 lr=5e-4"
        );
    }
}
