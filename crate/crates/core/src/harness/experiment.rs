//! Ablation sweeps: each variant is trained once per seed and the final
//! validation AP is tabulated.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::config::Config;
use super::train::{fmt_opt, Dataset, RunOptions, Trainer};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;

pub const EXPERIMENTS: &[&str] = &[
    "fusion_variants",
    "depth_sweep",
    "fusion_position",
    "deep_layer_effect",
    "baseline_vs_ipg",
];

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub seeds: usize,
    /// Every variant starts from this config; run `i` uses seed `base.seed + i`.
    pub base: Config,
    pub out_dir: Option<PathBuf>,
    /// Concurrent runs; defaults to the available parallelism.
    pub threads: Option<usize>,
    pub verbose: bool,
}

impl ExperimentOptions {
    pub fn new(seeds: usize) -> Self {
        ExperimentOptions {
            seeds,
            base: Config::default(),
            out_dir: None,
            threads: None,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub variant: String,
    pub seed: u64,
    pub ap: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub ap_mean: Option<f64>,
    pub ap_min: Option<f64>,
    pub ap_max: Option<f64>,
    pub ap_small_mean: Option<f64>,
    pub ap_small_min: Option<f64>,
    pub ap_small_max: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub name: String,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<VariantSummary>,
}

fn stats(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return (None, None, None);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(mean), Some(min), Some(max))
}

impl ExperimentReport {
    fn new(name: &str, variants: &[String], runs: Vec<RunRecord>) -> Self {
        let summary = variants
            .iter()
            .map(|v| {
                let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.variant == v).collect();
                let (ap_mean, ap_min, ap_max) = stats(mine.iter().map(|r| r.ap));
                let (ap_small_mean, ap_small_min, ap_small_max) = stats(mine.iter().map(|r| r.ap_small));
                VariantSummary {
                    variant: v.clone(),
                    runs: mine.len(),
                    ap_mean,
                    ap_min,
                    ap_max,
                    ap_small_mean,
                    ap_small_min,
                    ap_small_max,
                }
            })
            .collect();
        ExperimentReport {
            name: name.to_string(),
            runs,
            summary,
        }
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == name)
    }

    pub fn runs_csv(&self) -> Result<String> {
        to_csv(&self.runs)
    }

    pub fn summary_csv(&self) -> Result<String> {
        to_csv(&self.summary)
    }

    /// Per-seed table followed by mean [min, max] per variant.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.name);
        let _ = writeln!(s, "{:<12} {:>6} {:>8} {:>8} {:>8} {:>8}", "variant", "seed", "AP", "AP_s", "AP_m", "AP_l");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>8} {:>8} {:>8} {:>8}",
                r.variant,
                r.seed,
                fmt_opt(r.ap),
                fmt_opt(r.ap_small),
                fmt_opt(r.ap_medium),
                fmt_opt(r.ap_large)
            );
        }
        let _ = writeln!(s);
        for v in &self.summary {
            let _ = writeln!(
                s,
                "{:<12} AP {} [{}, {}]   AP_s {} [{}, {}]   ({} runs)",
                v.variant,
                fmt_opt(v.ap_mean),
                fmt_opt(v.ap_min),
                fmt_opt(v.ap_max),
                fmt_opt(v.ap_small_mean),
                fmt_opt(v.ap_small_min),
                fmt_opt(v.ap_small_max),
                v.runs
            );
        }
        s
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// The named sweep as (variant label, config) pairs.
pub fn variants(name: &str, base: &Config) -> Result<Vec<(String, Config)>> {
    let with = |label: &str, f: &dyn Fn(&mut Config)| {
        let mut c = base.clone();
        f(&mut c);
        (label.to_string(), c)
    };
    let ipg_stages = if base.model.fusion_stages.is_empty() {
        vec![3]
    } else {
        base.model.fusion_stages.clone()
    };
    let v = match name {
        "fusion_variants" => FusionKind::ALL
            .iter()
            .map(|&k| {
                with(k.as_str(), &|c| {
                    c.model.fusion_variant = k;
                    c.model.fusion_stages = ipg_stages.clone();
                })
            })
            .collect(),
        "depth_sweep" => [(4, false), (5, false), (6, false), (7, true)]
            .iter()
            .map(|&(n, keep)| {
                let label = if keep { format!("{n}(keep)") } else { n.to_string() };
                with(&label, &|c| {
                    c.model.n_stages = n;
                    c.model.keep_last3 = keep;
                    c.model.fusion_stages = ipg_stages.clone();
                })
            })
            .collect(),
        "fusion_position" => {
            let mut v = vec![with("plain", &|c| c.model.fusion_stages.clear())];
            for s in 1..=4 {
                v.push(with(&format!("stage{s}"), &|c| c.model.fusion_stages = vec![s]));
            }
            v
        }
        "deep_layer_effect" => {
            let deep = |c: &mut Config| {
                c.model.n_stages = 7;
                c.model.keep_last3 = true;
                c.model.fpn_last_k = Some(4);
            };
            vec![
                with("plain", &|c| {
                    deep(c);
                    c.model.fusion_stages.clear();
                }),
                with("ipg", &|c| {
                    deep(c);
                    c.model.fusion_stages = ipg_stages.clone();
                }),
            ]
        }
        "baseline_vs_ipg" => vec![
            with("plain", &|c| c.model.fusion_stages.clear()),
            with("ipg", &|c| c.model.fusion_stages = ipg_stages.clone()),
        ],
        other => {
            return Err(Error::Usage(format!(
                "unknown experiment `{other}`; valid: {}",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    for (_, c) in &v {
        c.validate()?;
    }
    Ok(v)
}

/// Trains every variant of `name` with `opts.seeds` seeds and tabulates
/// the final validation AP. Writes `runs.csv`, `summary.csv` and
/// `summary.txt` (plus one metrics log per run) under `out_dir/name`.
pub fn run_experiment(name: &str, opts: &ExperimentOptions) -> Result<ExperimentReport> {
    let variants = variants(name, &opts.base)?;
    if opts.seeds == 0 {
        return Err(Error::Usage("--seeds must be >= 1".into()));
    }
    let data = Dataset::synth(&opts.base.data)?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| (0..opts.seeds as u64).map(move |k| (v, opts.base.seed + k)))
        .collect();
    let dir = opts.out_dir.as_ref().map(|d| d.join(name));
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = opts
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());
    let worker = || loop {
        let j = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(v, seed)) = jobs.get(j) else { break };
        let (label, config) = &variants[v];
        let run = || -> Result<RunRecord> {
            let mut config = config.clone();
            config.seed = seed;
            let mut trainer = Trainer::new(&config)?;
            let run_opts = RunOptions {
                out_dir: dir.as_ref().map(|d| d.join(format!("{}_seed{seed}", sanitize(label)))),
                verbose: opts.verbose,
                ..RunOptions::default()
            };
            let res = trainer.run(&data, &run_opts)?;
            let r = match res.final_report {
                Some(r) => r,
                None => trainer.evaluate(&data.val)?,
            };
            if opts.verbose {
                eprintln!("{name}: {label} seed {seed}: AP {} AP_s {}", fmt_opt(r.ap), fmt_opt(r.ap_small));
            }
            Ok(RunRecord {
                variant: label.clone(),
                seed,
                ap: r.ap,
                ap_small: r.ap_small,
                ap_medium: r.ap_medium,
                ap_large: r.ap_large,
            })
        };
        let out = run();
        results.lock().expect("results lock")[j] = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(worker);
        }
    });
    let runs = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = variants.iter().map(|(l, _)| l.clone()).collect();
    let report = ExperimentReport::new(name, &labels, runs);
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [
            ("runs.csv", report.runs_csv()?),
            ("summary.csv", report.summary_csv()?),
            ("summary.txt", report.summary_text()),
        ] {
            let p = dir.join(file);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(report)
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}
