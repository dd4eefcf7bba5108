//! Per-sequence stages shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use bgrecon_core::arch::{plan_architecture_with, Complexity};
use bgrecon_core::config::EffectiveParams;
use bgrecon_core::data_io::{
    list_indexed_images, load_groundtruth, load_sequence, write_frame, write_gray, write_mask,
    write_pfm, DatasetLayout, LayoutKind,
};
use bgrecon_core::evaluator::{aggregate, evaluate_mask_directory, ConfusionCounts, VideoScore};
use bgrecon_core::segmenter::segment_sequence_with;
use bgrecon_core::trainer::{
    load_checkpoint, probe_complexity, save_checkpoint, train_with, TrainedModel,
};
use bgrecon_core::{Autoencoder, Error, FrameSequence, Result, RunConfig};

pub const CHECKPOINT: &str = "model.ckpt";
pub const MASKS: &str = "masks";
pub const COUNTS: &str = "counts.json";

pub fn sequence_dir(config: &RunConfig, sequence: &str) -> PathBuf {
    config.output_dir.join(sequence)
}

/// Sequences from the config, or every directory under the dataset root that
/// holds input frames for the configured layout.
pub fn sequences(config: &RunConfig) -> Result<Vec<String>> {
    if !config.sequences.is_empty() {
        return Ok(config.sequences.clone());
    }
    let layout = config.layout();
    let mut found = Vec::new();
    let mut stack = vec![(String::new(), 0usize)];
    while let Some((prefix, depth)) = stack.pop() {
        let dir = config.dataset_root.join(&prefix);
        let entries = fs::read_dir(&dir).map_err(|_| Error::MissingDirectory(dir.clone()))?;
        for entry in entries.flatten() {
            if !entry.path().is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            let candidate = if prefix.is_empty() {
                name.clone()
            } else {
                format!("{prefix}/{name}")
            };
            if config.layout == LayoutKind::Lasiesta && name.ends_with("-GT") {
                continue;
            }
            if holds_frames(&layout, &candidate) {
                found.push(candidate);
            } else if depth == 0 {
                stack.push((candidate, depth + 1));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!(
            "no sequences found under {}",
            config.dataset_root.display()
        )));
    }
    Ok(found)
}

fn holds_frames(layout: &DatasetLayout, sequence: &str) -> bool {
    list_indexed_images(&layout.input_path(sequence)).is_ok_and(|f| !f.is_empty())
}

pub fn load(config: &RunConfig, sequence: &str) -> Result<FrameSequence> {
    let seq = load_sequence(&config.layout(), sequence)?;
    let (h, w) = seq.dim();
    println!("sequence={sequence} frames={} size={h}x{w}", seq.len());
    Ok(seq)
}

pub fn train(
    config: &RunConfig,
    params: &EffectiveParams,
    sequence: &str,
    seq: &FrameSequence,
) -> Result<TrainedModel> {
    let every = config.log_every;
    let trained = train_with(seq, &params.train, &mut |p| {
        if p.iteration % every == 0 {
            println!("{p}");
        }
    })?;
    let dir = sequence_dir(config, sequence);
    save_checkpoint(&trained.model, &dir.join(CHECKPOINT))?;
    let verdict = trained.verdict.map_or_else(
        || "verdict=none".to_string(),
        |v| {
            format!(
                "verdict={} mean_soft_mask={:.6}",
                complexity_name(v.complexity),
                v.mean_soft_mask
            )
        },
    );
    let summary = format!(
        "sequence={sequence} {verdict} iterations={} lr_drop_at={} loss={:.6} l_rec={:.6} l_noise={:.6}\n",
        trained.iterations,
        trained.lr_drop_at,
        trained.final_stats.total,
        trained.final_stats.reconstruction,
        trained.final_stats.noise
    );
    print!("{summary}");
    fs::write(dir.join("training.txt"), &summary).map_err(|e| Error::Io {
        path: dir.join("training.txt"),
        source: e,
    })?;
    Ok(trained)
}

pub fn complexity_name(c: Complexity) -> &'static str {
    match c {
        Complexity::Simple => "simple",
        Complexity::Complex => "complex",
    }
}

pub fn probe(
    params: &EffectiveParams,
    sequence: &str,
    seq: &FrameSequence,
    every: usize,
) -> Result<()> {
    let (verdict, _) = probe_complexity(seq, &params.train, &mut |p| {
        if p.iteration % every == 0 {
            println!("{p}");
        }
    })?;
    println!(
        "sequence={sequence} mean_soft_mask={:.6} tau0={} verdict={}",
        verdict.mean_soft_mask,
        params.train.complexity.tau0,
        complexity_name(verdict.complexity)
    );
    Ok(())
}

/// Loads a checkpoint and checks it fits the sequence's frame size.
pub fn load_model(path: &Path, seq: &FrameSequence) -> Result<Autoencoder> {
    let model = load_checkpoint(path)?;
    let spec = model.spec();
    if (spec.height, spec.width) != seq.dim() {
        return Err(Error::Invalid(format!(
            "checkpoint {} was trained on {}x{} frames, sequence has {:?}",
            path.display(),
            spec.height,
            spec.width,
            seq.dim()
        )));
    }
    Ok(model)
}

/// Writes masks and the requested per-frame artifacts.
pub fn segment(
    config: &RunConfig,
    params: &EffectiveParams,
    sequence: &str,
    seq: &FrameSequence,
    model: &Autoencoder,
) -> Result<()> {
    let dir = sequence_dir(config, sequence);
    let indices = seq.indices().to_vec();
    let mut foreground = 0usize;
    segment_sequence_with(
        model,
        seq,
        &params.segment,
        params.train.batch_size,
        &mut |pos, r| {
            let index = indices[pos];
            write_mask(&r.mask, &dir.join(MASKS).join(format!("bin{index:06}.png")))?;
            if config.dump_backgrounds {
                write_frame(
                    &r.background,
                    &dir.join("backgrounds").join(format!("bg{index:06}.png")),
                )?;
            }
            if config.dump_noise {
                write_gray(
                    &r.noise,
                    &dir.join("noise").join(format!("noise{index:06}.png")),
                )?;
            }
            if config.dump_thresholds {
                write_pfm(
                    &r.threshold,
                    &dir.join("thresholds").join(format!("tau{index:06}.pfm")),
                )?;
            }
            foreground += r.mask.iter().filter(|&&v| v).count();
            Ok(())
        },
    )?;
    println!(
        "sequence={sequence} segmented={} foreground_fraction={:.6}",
        seq.len(),
        foreground as f64 / (seq.len() * seq.dim().0 * seq.dim().1) as f64
    );
    Ok(())
}

/// Scores masks in `pred_dir`; `None` when the sequence has no ground truth.
pub fn evaluate(
    config: &RunConfig,
    sequence: &str,
    pred_dir: &Path,
) -> Result<Option<ConfusionCounts>> {
    let layout = config.layout();
    if !layout.has_groundtruth(sequence) {
        println!("sequence={sequence} groundtruth=absent");
        return Ok(None);
    }
    let inputs = list_indexed_images(&layout.input_path(sequence))?;
    let indices: Vec<u32> = inputs.iter().map(|f| f.index).collect();
    let gts = load_groundtruth(&layout, sequence)?;
    let counts = evaluate_mask_directory(pred_dir, &indices, &gts)?;
    let dir = sequence_dir(config, sequence);
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join(COUNTS);
    let json = serde_json::to_string_pretty(&counts).expect("counts serialize");
    fs::write(&path, json).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    println!(
        "sequence={sequence} tp={} fp={} fn={} tn={} f_measure={}",
        counts.tp,
        counts.fp,
        counts.fn_,
        counts.tn,
        bgrecon_core::evaluator::f_measure(&counts).map_or("n/a".into(), |f| format!("{f:.6}"))
    );
    Ok(Some(counts))
}

/// Gathers the stored counts of `sequences` into the report files.
pub fn report(config: &RunConfig, sequences: &[String]) -> Result<()> {
    let mut videos = Vec::new();
    for s in sequences {
        let path = sequence_dir(config, s).join(COUNTS);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let counts: ConfusionCounts = serde_json::from_str(&text)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let video = s.rsplit('/').next().unwrap_or(s);
        videos.push(VideoScore::new(video, RunConfig::category_of(s), counts));
    }
    if videos.is_empty() {
        println!("report=skipped reason=no-groundtruth");
        return Ok(());
    }
    let report = aggregate(videos, config.echo()?)?;
    report.write(&config.output_dir)?;
    println!(
        "overall_f_measure={}",
        report.overall.map_or("n/a".into(), |f| format!("{f:.6}"))
    );
    Ok(())
}

/// Saves the resolved configuration so the run can be repeated.
pub fn write_config(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.clone(),
        source: e,
    })?;
    let path = config.output_dir.join("config.toml");
    fs::write(&path, config.to_toml()).map_err(|e| Error::Io { path, source: e })
}

/// Checks that a frame size is supported before any training starts.
pub fn check_size(params: &EffectiveParams, seq: &FrameSequence) -> Result<()> {
    let (h, w) = seq.dim();
    let t = &params.train;
    plan_architecture_with(h, w, Complexity::Simple, t.preset, t.plan).map(|_| ())
}
