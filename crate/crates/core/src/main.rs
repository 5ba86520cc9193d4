use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipgnet::data_synth::{export_scene, generate_split};
use ipgnet::detector::write_detections;
use ipgnet::gradcheck::{run_check, GradReport, CHECKS, GRADCHECK_TOL};
use ipgnet::harness::{run_experiment, Checkpoint, Config, Dataset, ExperimentOptions, RunOptions, Trainer};
use ipgnet::tensor::Tensor;
use ipgnet::{Error, Result};

#[derive(Parser)]
#[command(name = "ipgnet", version, about = "Image-pyramid guided detector: training, evaluation and checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the synthetic dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory for metrics.csv and checkpoints.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also write detections, one per line.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Run a single check (default: all).
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Write synthetic scenes as PFM images with box lists.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an ablation sweep.
    Experiment {
        name: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/experiments")]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn train(config: &Path, seed: Option<u64>, resume: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let mut config = Config::load(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let data = Dataset::synth(&config.data)?;
    let mut trainer = match &resume {
        Some(p) => Trainer::resume(&config, p, Some(&out))?,
        None => Trainer::new(&config)?,
    };
    let opts = RunOptions {
        out_dir: Some(out.clone()),
        checkpoints: true,
        verbose: true,
        ..RunOptions::default()
    };
    trainer.run(&data, &opts)?;
    println!("metrics written to {}", out.join("metrics.csv").display());
    Ok(())
}

fn eval(config: &Path, ckpt: &Path, dump: Option<PathBuf>) -> Result<()> {
    let config = Config::load(config)?;
    let mut trainer = Trainer::from_checkpoint(&config, &Checkpoint::load(ckpt)?)?;
    let data = Dataset::synth(&config.data)?;
    let r = trainer.evaluate(&data.val)?;
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("AP {}  AP_small {}  AP_medium {}  AP_large {}", f(r.ap), f(r.ap_small), f(r.ap_medium), f(r.ap_large));
    for (c, ap) in r.per_class.iter().enumerate() {
        println!("  class {c}: {}", f(*ap));
    }
    if let Some(path) = dump {
        let mut text = String::new();
        for (chunk_idx, chunk) in data.val.chunks(8).enumerate() {
            let images = Tensor::stack(&chunk.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
            for (i, dets) in trainer.detect(&images)?.iter().enumerate() {
                write_detections(&mut text, chunk_idx * 8 + i, dets);
            }
        }
        std::fs::write(&path, text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn gradcheck(module: Option<String>, seeds: u64) -> Result<bool> {
    let names: Vec<&str> = match &module {
        Some(m) => vec![m.as_str()],
        None => CHECKS.to_vec(),
    };
    let mut ok = true;
    for name in names {
        let mut worst: Option<GradReport> = None;
        let (mut checked, mut skipped) = (0, 0);
        for s in 0..seeds {
            let r = run_check(name, s)?;
            checked += r.outcome.checked;
            skipped += r.outcome.skipped;
            if worst.as_ref().is_none_or(|w| r.max_rel_err() > w.max_rel_err()) {
                worst = Some(r);
            }
        }
        let Some(worst) = worst else { continue };
        let pass = worst.max_rel_err() < GRADCHECK_TOL;
        ok &= pass;
        println!(
            "{:<18} max rel err {:.3e} over {checked} coords ({skipped} at kinks)  {}",
            name,
            worst.max_rel_err(),
            if pass { "ok" } else { "FAIL" }
        );
        if let (false, Some(w)) = (pass, &worst.outcome.worst) {
            println!(
                "    worst: seed {} {}[{}] analytic {:.6e} numeric {:.6e}",
                worst.seed, w.tensor, w.index, w.analytic, w.numeric
            );
        }
    }
    Ok(ok)
}

fn synth(out: &Path, count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Usage(format!("{}: {e}", out.display())))?;
    for scene in generate_split("synth", count, seed)?.iter() {
        export_scene(&scene, out)?;
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Train { config, seed, resume, out } => train(&config, seed, resume, out)?,
        Cmd::Eval { config, ckpt, dump } => eval(&config, &ckpt, dump)?,
        Cmd::Gradcheck { module, seeds } => return gradcheck(module, seeds),
        Cmd::Synth { out, count, seed } => synth(&out, count, seed)?,
        Cmd::Experiment {
            name,
            seeds,
            config,
            out,
            threads,
        } => {
            let mut opts = ExperimentOptions::new(seeds);
            if let Some(c) = config {
                opts.base = Config::load(&c)?;
            }
            opts.out_dir = Some(out.clone());
            opts.threads = threads;
            opts.verbose = true;
            let report = run_experiment(&name, &opts)?;
            print!("{}", report.summary_text());
            println!("tables written to {}", out.join(&name).display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ Error::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
