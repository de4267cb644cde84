//! Command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use makd_core::gradcheck;
use makd_core::train::LambdaPolicy;
use makd_core::{AffinityKind, MakdVariant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Arch, ExperimentConfig, PolicyConfig, Variants};
use crate::error::{HarnessError, Result};
use crate::harness::{self, Harness, RunTrace};
use crate::io;
use crate::record::{write_csv, write_json, write_records, RunRecord};

/// Gradient-check tolerance on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "makd", version, about = "Modular affinity-based distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's "out".
    #[arg(long, value_name = "DIR")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long, value_name = "U64")]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Variant name, e.g. "CS L2 SL1".
    #[arg(long, value_name = "NAME")]
    #[serde(default)]
    pub variant: Option<String>,
    /// GNoRP target ratio.
    #[arg(long = "r-gn", value_name = "F")]
    #[serde(default)]
    pub r_gn: Option<f64>,
    /// Static distillation weight.
    #[arg(long, value_name = "F")]
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Record wall time per run (makes result files non-reproducible).
    #[arg(long)]
    #[serde(default)]
    pub wall_time: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train plain classifiers for every teacher architecture (or --arch).
    TrainTeacher {
        #[command(flatten)]
        run: RunArgs,
        /// Architecture to train instead of the configured teachers, e.g. "2x16".
        #[arg(long, value_name = "TAG")]
        arch: Option<String>,
    },
    /// Distil students from their teachers.
    Distill {
        #[command(flatten)]
        run: RunArgs,
        /// Teacher checkpoint to use instead of training one.
        #[arg(long, value_name = "PATH")]
        teacher: Option<PathBuf>,
    },
    /// Calibrated, distillation-only search over variants scored by linear probes.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
    },
    /// GNoRP distillation across the r_gn grid.
    RgnSweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Random search for the best static weight.
    LambdaSearch {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Best static weight against GNoRP on the test split.
    GnorpAblation {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of the distillation gradients.
    Gradcheck {
        /// Check all 80 variants.
        #[arg(long)]
        all_variants: bool,
        #[arg(long, value_name = "NAME")]
        variant: Option<String>,
        #[arg(long, value_name = "U64", default_value_t = 0)]
        seed: u64,
        /// Random instances per variant.
        #[arg(long, value_name = "N", default_value_t = 3)]
        instances: usize,
    },
    /// Repeat a previous run from its manifest.
    Rerun {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
    },
}

/// Subcommand-specific options recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub options: RunArgs,
    #[serde(default)]
    pub arch: Option<String>,
    #[serde(default)]
    pub teacher: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub versions: Versions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Versions {
    pub makd: String,
    pub makd_core: String,
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serialises");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_variant(name: &str) -> Result<MakdVariant> {
    Ok(name.parse()?)
}

/// Applies command-line overrides to the configuration.
fn effective_config(mut cfg: ExperimentConfig, run: &RunArgs, command: &str) -> Result<ExperimentConfig> {
    if let Some(seed) = run.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(w) = run.workers {
        if w == 0 {
            return Err(HarnessError::Config("--workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    if let Some(name) = &run.variant {
        let v = parse_variant(name)?;
        cfg.variant = v;
        if command == "grid-search" {
            cfg.variants = Variants(vec![v]);
        }
    }
    match (run.lambda, run.r_gn) {
        (Some(_), Some(_)) => {
            return Err(HarnessError::Config(
                "--lambda and --r-gn are mutually exclusive".into(),
            ))
        }
        (Some(lambda), None) => cfg.lambda_policy = PolicyConfig::Static { lambda },
        (None, Some(r_gn)) => {
            cfg.lambda_policy = PolicyConfig::Gnorp { r_gn };
            if command == "rgn-sweep" {
                cfg.r_gn_grid = vec![r_gn];
            }
        }
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn records(&self, records: &[RunRecord]) -> Result<()> {
        write_records(&self.path("results.csv"), records)
    }

    fn traces(&self, traces: &[RunTrace]) -> Result<()> {
        let path = self.path("runs.jsonl");
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut w = BufWriter::new(f);
        for t in traces {
            let line = serde_json::to_string(t).map_err(|source| HarnessError::Json {
                path: path.clone(),
                source,
            })?;
            writeln!(w, "{line}").map_err(|e| HarnessError::io(&path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))
    }
}

#[derive(Serialize)]
struct RankRow {
    rank: usize,
    variant: String,
    mean_probe_val_acc: Option<f64>,
}

fn run_experiment(manifest: &Manifest, out: &Output) -> Result<()> {
    let cfg = &manifest.config;
    let mut h = Harness::from_config(cfg)?;
    h.wall_time = manifest.options.wall_time;
    let seeds = &cfg.seeds;
    match manifest.command.as_str() {
        "train-teacher" => {
            let archs: Vec<Arch> = match &manifest.arch {
                Some(tag) => vec![tag.parse().map_err(HarnessError::Config)?],
                None => {
                    let mut a: Vec<Arch> = cfg.pairs.iter().map(|p| p.teacher.clone()).collect();
                    a.sort();
                    a.dedup();
                    a
                }
            };
            let prefix = if manifest.arch.is_some() { "model" } else { "teacher" };
            let jobs: Vec<(Arch, u64)> = archs
                .iter()
                .flat_map(|a| seeds.iter().map(move |&s| (a.clone(), s)))
                .collect();
            let results = harness::run_parallel(&jobs, h.workers, |(a, s)| h.train_plain(a, *s));
            let mut records = Vec::new();
            let mut traces = Vec::new();
            for ((arch, seed), res) in jobs.iter().zip(results) {
                let (rec, trace, model) = res?;
                io::write_checkpoint(&out.path(&format!("{prefix}-{arch}-s{seed}.json")), &model, *seed)?;
                records.push(rec);
                traces.push(trace);
            }
            out.records(&records)?;
            out.traces(&traces)
        }
        "distill" => {
            let policy: LambdaPolicy = cfg.policy();
            let external = match &manifest.teacher {
                Some(p) => Some(io::read_checkpoint(p)?.model),
                None => None,
            };
            let teachers = match external {
                Some(_) => Default::default(),
                None => h.teachers(&cfg.pairs, seeds)?,
            };
            let mut jobs = Vec::new();
            for (p, pair) in cfg.pairs.iter().enumerate() {
                for &seed in seeds {
                    jobs.push((p, pair, seed));
                }
            }
            let results = harness::run_parallel(&jobs, h.workers, |&(_, pair, seed)| {
                let teacher = external
                    .as_ref()
                    .unwrap_or_else(|| &teachers[&(pair.teacher.clone(), seed)]);
                h.distill(pair, teacher, cfg.variant, policy, seed, &h.data.train, &h.data.val)
            });
            let mut records = Vec::new();
            let mut traces = Vec::new();
            for (&(_, pair, seed), res) in jobs.iter().zip(results) {
                let (rec, trace, model) = res?;
                io::write_checkpoint(
                    &out.path(&format!("student-{}-s{seed}.json", pair.student)),
                    &model,
                    seed,
                )?;
                records.push(rec);
                traces.push(trace);
            }
            out.records(&records)?;
            out.traces(&traces)
        }
        "grid-search" => {
            let teachers = h.teachers(&cfg.pairs, seeds)?;
            let report = harness::combinatorial_search(&h, &cfg.pairs, &teachers, &cfg.variants.0, seeds);
            for a in AffinityKind::ALL {
                log::info!(
                    "mean normalised probe accuracy, {a} affinity: {:?}",
                    report.grid.affinity_mean(a)
                );
            }
            out.records(&report.records)?;
            out.traces(&report.traces)?;
            write_json(&out.path("grid.json"), &report.grid)?;
            write_csv(&out.path("calibration.csv"), &report.calibration, None)?;
            let ranking: Vec<RankRow> = report
                .ranking
                .iter()
                .enumerate()
                .map(|(i, (v, m))| RankRow {
                    rank: i + 1,
                    variant: v.to_string(),
                    mean_probe_val_acc: *m,
                })
                .collect();
            write_csv(&out.path("ranking.csv"), &ranking, None)?;
            write_json(&out.path("failures.json"), &report.failures)
        }
        "rgn-sweep" => {
            let teachers = h.teachers(&cfg.pairs, seeds)?;
            let mut records = Vec::new();
            let mut traces = Vec::new();
            let mut curve = Vec::new();
            for pair in &cfg.pairs {
                let r = harness::rgn_sweep(&h, pair, &teachers, cfg.variant, &cfg.r_gn_grid, seeds);
                records.extend(r.records);
                traces.extend(r.traces);
                curve.extend(r.curve);
            }
            out.records(&records)?;
            out.traces(&traces)?;
            write_csv(&out.path("curve.csv"), &curve, None)
        }
        "lambda-search" => {
            let first = seeds[0];
            let teachers = h.teachers(&cfg.pairs, &[first])?;
            let mut records = Vec::new();
            let mut traces = Vec::new();
            let mut searches = Vec::new();
            for pair in &cfg.pairs {
                let teacher = &teachers[&(pair.teacher.clone(), first)];
                let s = &cfg.lambda_search;
                let (search, recs, trs) =
                    harness::lambda_random_search(&h, pair, teacher, cfg.variant, s.trials, s.log_range, first)?;
                searches.push(search);
                records.extend(recs);
                traces.extend(trs);
            }
            out.records(&records)?;
            out.traces(&traces)?;
            write_json(&out.path("search.json"), &searches)
        }
        "gnorp-ablation" => {
            let r_gn = match cfg.lambda_policy {
                PolicyConfig::Gnorp { r_gn } => r_gn,
                PolicyConfig::Static { .. } => 3.5,
            };
            let teachers = h.teachers(&cfg.pairs, seeds)?;
            let report =
                harness::gnorp_ablation(&h, &cfg.pairs, &teachers, cfg.variant, r_gn, seeds, cfg.lambda_search)?;
            out.records(&report.records)?;
            out.traces(&report.traces)?;
            write_csv(&out.path("ablation.csv"), &report.rows, None)?;
            write_json(&out.path("search.json"), &report.searches)
        }
        other => Err(HarnessError::Config(format!("unknown command {other:?} in manifest"))),
    }
}

fn start(command: &str, run: &RunArgs, arch: Option<String>, teacher: Option<PathBuf>) -> Result<()> {
    let cfg_path = run
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config(format!("{command} requires --config PATH")))?;
    let cfg = effective_config(ExperimentConfig::load(cfg_path)?, run, command)?;
    if let Some(a) = &arch {
        a.parse::<Arch>().map_err(HarnessError::Config)?;
    }
    if let Some(t) = &teacher {
        if !t.exists() {
            return Err(HarnessError::MissingCheckpoint(t.clone()));
        }
    }
    let dir = run
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set \"out\"".into()))?;
    let manifest = Manifest {
        command: command.into(),
        options: RunArgs {
            config: None,
            out: None,
            workers: None,
            ..run.clone()
        },
        arch,
        teacher,
        config_sha256: config_hash(&cfg),
        seeds: cfg.seeds.clone(),
        config: cfg,
        versions: Versions {
            makd: env!("CARGO_PKG_VERSION").into(),
            makd_core: makd_core::VERSION.into(),
        },
    };
    let out = Output::create(dir)?;
    write_json(&out.path("manifest.json"), &manifest)?;
    run_experiment(&manifest, &out)
}

fn rerun(path: &Path, out: Option<PathBuf>, workers: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    manifest.config.validate()?;
    if config_hash(&manifest.config) != manifest.config_sha256 {
        return Err(HarnessError::Config(format!(
            "{}: config does not match its recorded hash",
            path.display()
        )));
    }
    if let Some(w) = workers {
        if w == 0 {
            return Err(HarnessError::Config("--workers must be at least 1".into()));
        }
        manifest.config.workers = w;
    }
    let dir = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    let out = Output::create(dir)?;
    if out.path("manifest.json") != path {
        std::fs::copy(path, out.path("manifest.json")).map_err(|e| HarnessError::io(path, e))?;
    }
    run_experiment(&manifest, &out)
}

fn run_gradcheck(all: bool, variant: Option<String>, seed: u64, instances: usize) -> Result<bool> {
    let variants = match (all, variant) {
        (true, None) | (false, None) => MakdVariant::all(),
        (false, Some(name)) => vec![parse_variant(&name)?],
        (true, Some(_)) => {
            return Err(HarnessError::Config(
                "--all-variants and --variant are mutually exclusive".into(),
            ))
        }
    };
    if instances == 0 {
        return Err(HarnessError::Config("--instances must be positive".into()));
    }
    let results = gradcheck::check_all(seed, instances);
    let mut all_ok = true;
    let mut stdout = std::io::stdout().lock();
    for v in variants {
        let mine: Vec<_> = results.iter().filter(|r| r.variant == v).collect();
        let worst = mine.iter().map(|r| r.relative_error).fold(0.0, f64::max);
        let ok = mine.iter().all(|r| r.passed(GRADCHECK_TOL));
        all_ok &= ok;
        let _ = writeln!(
            stdout,
            "{} {v}: max relative error {worst:.3e} over {} instances",
            if ok { "PASS" } else { "FAIL" },
            mine.len()
        );
    }
    Ok(all_ok)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MAKD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::TrainTeacher { run, arch } => start("train-teacher", &run, arch, None),
        Command::Distill { run, teacher } => start("distill", &run, None, teacher),
        Command::GridSearch { run } => start("grid-search", &run, None, None),
        Command::RgnSweep { run } => start("rgn-sweep", &run, None, None),
        Command::LambdaSearch { run } => start("lambda-search", &run, None, None),
        Command::GnorpAblation { run } => start("gnorp-ablation", &run, None, None),
        Command::Gradcheck {
            all_variants,
            variant,
            seed,
            instances,
        } => match run_gradcheck(all_variants, variant, seed, instances) {
            Ok(true) => return 0,
            Ok(false) => return 2,
            Err(e) => Err(e),
        },
        Command::Rerun { manifest, out, workers } => rerun(&manifest, out, workers),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
