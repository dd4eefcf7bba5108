mod args;
mod pipeline;

use std::process::{Command as Process, ExitCode};

use args::{Cli, Command, EvalArgs, RunArgs, SegmentArgs, SynthArgs};
use bgrecon_core::synthetic::{generate, materialize, parse_spec, SyntheticSpec};
use bgrecon_core::{Error, Result, RunConfig};
use clap::Parser;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Train,
    Run,
    Complexity,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run_stages(&a, Stage::Run),
        Command::Train(a) => run_stages(&a, Stage::Train),
        Command::Complexity(a) => run_stages(&a, Stage::Complexity),
        Command::Segment(a) => cmd_segment(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run_stages(args: &RunArgs, stage: Stage) -> Result<()> {
    let config = args.resolve()?;
    let params = config.validate()?;
    let sequences = pipeline::sequences(&config)?;
    pipeline::write_config(&config)?;

    if args.jobs > 1 && sequences.len() > 1 {
        fan_out(args, &config, &sequences, stage)?;
    } else {
        for sequence in &sequences {
            let seq = pipeline::load(&config, sequence)?;
            pipeline::check_size(&params, &seq)?;
            match stage {
                Stage::Complexity => pipeline::probe(&params, sequence, &seq, config.log_every)?,
                Stage::Train => {
                    pipeline::train(&config, &params, sequence, &seq)?;
                }
                Stage::Run => {
                    let trained = pipeline::train(&config, &params, sequence, &seq)?;
                    pipeline::segment(&config, &params, sequence, &seq, &trained.model)?;
                    let masks = pipeline::sequence_dir(&config, sequence).join(pipeline::MASKS);
                    pipeline::evaluate(&config, sequence, &masks)?;
                }
            }
        }
    }
    if stage == Stage::Run && !args.no_report {
        pipeline::report(&config, &sequences)?;
    }
    Ok(())
}

/// Runs each sequence in a child process of this executable, at most
/// `jobs` at a time.
fn fan_out(args: &RunArgs, config: &RunConfig, sequences: &[String], stage: Stage) -> Result<()> {
    let exe = std::env::current_exe()
        .map_err(|e| Error::Invalid(format!("cannot locate executable: {e}")))?;
    let subcommand = match stage {
        Stage::Run => "run",
        Stage::Train => "train",
        Stage::Complexity => "complexity",
    };
    let config_path = config.output_dir.join("config.toml");
    let mut pending = sequences.iter();
    let mut running: Vec<(String, std::process::Child)> = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < args.jobs {
            let Some(sequence) = pending.next() else {
                break;
            };
            let child = Process::new(&exe)
                .arg(subcommand)
                .arg("--config")
                .arg(&config_path)
                .arg("--sequence")
                .arg(sequence)
                .arg("--no-report")
                .spawn()
                .map_err(|e| Error::Invalid(format!("cannot start worker: {e}")))?;
            running.push((sequence.clone(), child));
        }
        if running.is_empty() {
            break;
        }
        let (sequence, mut child) = running.remove(0);
        let status = child
            .wait()
            .map_err(|e| Error::Invalid(format!("worker for {sequence}: {e}")))?;
        if !status.success() {
            failed.push(sequence);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "failed sequences: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_segment(args: &SegmentArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let params = config.validate()?;
    let sequences = pipeline::sequences(&config)?;
    if args.checkpoint.is_some() && sequences.len() != 1 {
        return Err(Error::Config(
            "--checkpoint needs exactly one sequence".into(),
        ));
    }
    for sequence in &sequences {
        let seq = pipeline::load(&config, sequence)?;
        let path = args.checkpoint.clone().unwrap_or_else(|| {
            pipeline::sequence_dir(&config, sequence).join(pipeline::CHECKPOINT)
        });
        let model = pipeline::load_model(&path, &seq)?;
        pipeline::segment(&config, &params, sequence, &seq, &model)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let config = args.run.resolve()?;
    let sequences = pipeline::sequences(&config)?;
    if args.pred_dir.is_some() && sequences.len() != 1 {
        return Err(Error::Config(
            "--pred-dir needs exactly one sequence".into(),
        ));
    }
    for sequence in &sequences {
        let dir = args
            .pred_dir
            .clone()
            .unwrap_or_else(|| pipeline::sequence_dir(&config, sequence).join(pipeline::MASKS));
        pipeline::evaluate(&config, sequence, &dir)?;
    }
    pipeline::report(&config, &sequences)
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = match (&args.spec, args.scene.as_deref()) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_spec(&text).map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })?
        }
        (None, Some("static")) => SyntheticSpec::static_scene(args.seed),
        (None, Some("ramp")) => SyntheticSpec::noise_ramp(args.seed),
        (None, Some("pan")) => SyntheticSpec::panning(args.seed),
        (None, Some(other)) => return Err(Error::Config(format!("unknown scene `{other}`"))),
        (None, None) => return Err(Error::Config("pass --spec or --scene".into())),
    };
    let data = generate(&spec)?;
    materialize(&spec, &data, &args.out, &args.name)?;
    println!(
        "synthetic={} frames={} size={}x{} out={}",
        args.name,
        spec.frames,
        spec.height,
        spec.width,
        args.out.join(&args.name).display()
    );
    Ok(())
}
