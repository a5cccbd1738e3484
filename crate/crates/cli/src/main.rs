//! `scanreg` — register point cloud pairs and run benchmark suites.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scanreg::classifier::{Decision, Stage};
use scanreg::descriptor::{estimate_normals, DescriptorBackend};
use scanreg::eval;
use scanreg::pipeline::register_pair;
use scanreg::PointCloud;

use scanreg_cli::config::{self, HarnessConfig};
use scanreg_cli::scene::{self, SceneSpec};
use scanreg_cli::{ablate, bench, io, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "scanreg",
    about = "Rigid point cloud registration with a dynamic two-stage pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration source flags shared by the subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (flat key = value text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: default, indoor, outdoor, or synthetic.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, fallback: &str) -> Result<HarnessConfig> {
        match (&self.config, &self.preset) {
            (Some(_), Some(_)) => Err(HarnessError::Config(
                "--config and --preset are mutually exclusive".into(),
            )),
            (Some(path), None) => config::load(path),
            (None, Some(name)) => config::preset(name),
            (None, None) => config::preset(fallback),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Register a source cloud onto a target cloud.
    Register {
        /// Source cloud file (.ply, .xyz, or .xyzn).
        src: PathBuf,
        /// Target cloud file (.ply, .xyz, or .xyzn).
        tgt: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the estimated pose here (4×4 row-major homogeneous
        /// matrix); defaults to printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a per-stage trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a benchmark suite and write its report.
    Bench {
        /// Suite CSV produced by `scanreg suite`.
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Worker thread count.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Report CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize a built-in benchmark suite as a CSV file.
    Suite {
        /// Which suite: easy, low-overlap, or exact.
        #[arg(long)]
        preset: String,
        /// Number of pairs.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Base seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Suite CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a component-swap study over a suite.
    Ablate {
        /// Which study: encoder, classifier, node, iteration, or scorer.
        #[arg(long)]
        which: String,
        /// Suite CSV; defaults to a built-in suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Built-in suite when --suite is absent: easy, low-overlap, or
        /// exact.
        #[arg(long, default_value = "low-overlap")]
        suite_preset: String,
        /// Pair count of the built-in suite.
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        /// Base seed of the built-in suite.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
        /// Worker thread count.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Study CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two pose files.
    Metrics {
        /// Estimated pose file.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth pose file.
        #[arg(long)]
        gt: PathBuf,
    },
}

fn built_in_suite(preset: &str, pairs: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    match preset {
        "easy" => Ok(scene::easy_suite(pairs, seed)),
        "low-overlap" => Ok(scene::low_overlap_suite(pairs, seed)),
        "exact" => Ok(scene::exact_suite(pairs, seed)),
        other => Err(HarnessError::Config(format!(
            "unknown suite preset {other:?}; expected easy, low-overlap, or exact"
        ))),
    }
}

/// Gives a histogram-descriptor cloud normals if the file had none.
fn ensure_normals(cloud: PointCloud, cfg: &HarnessConfig) -> Result<PointCloud> {
    match (&cfg.pipeline.descriptor, cloud.normals()) {
        (DescriptorBackend::Histogram(_), None) => {
            log::info!("input carries no normals; estimating from 16 neighbors");
            estimate_normals(&cloud, 16, &nalgebra::Point3::origin()).map_err(HarnessError::from)
        }
        (DescriptorBackend::Oracle(_), _) if cloud.features().is_none() => {
            Err(HarnessError::Config(
                "the oracle descriptor needs clouds with planted feature keys; \
                 use a histogram configuration (for example --preset indoor) for plain files"
                    .into(),
            ))
        }
        _ => Ok(cloud),
    }
}

fn stage_name(stage: Stage) -> String {
    match stage {
        Stage::Global => "global".into(),
        Stage::Local(i) => format!("local-{i}"),
    }
}

fn decision_name(decision: Decision) -> &'static str {
    match decision {
        Decision::ExitSuccess => "exit-success",
        Decision::Continue => "continue",
        Decision::ExitDegraded => "exit-degraded",
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Register { src, tgt, config, out, trace } => {
            let cfg = config.resolve("indoor")?;
            let src_cloud = ensure_normals(io::load_cloud_auto(&src)?, &cfg)?;
            let tgt_cloud = ensure_normals(io::load_cloud_auto(&tgt)?, &cfg)?;
            let (est, trace_record) = register_pair(&src_cloud, &tgt_cloud, &cfg.pipeline)
                .map_err(HarnessError::from)?;

            eprintln!(
                "registered in {} stage(s), exit: {}",
                trace_record.stages.len(),
                trace_record.exit
            );
            if let Some(path) = trace {
                let mut csv = String::from(
                    "stage,score,correspondences,decision,src_nodes,tgt_nodes,wall_s\n",
                );
                for s in &trace_record.stages {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{}",
                        stage_name(s.stage),
                        s.score,
                        s.correspondence_count,
                        decision_name(s.decision),
                        s.src_nodes,
                        s.tgt_nodes,
                        s.wall_time
                    );
                }
                std::fs::write(&path, csv).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            match out {
                Some(path) => io::save_pose(&path, &est)?,
                None => print!("{}", io::format_pose(&est)),
            }
            Ok(())
        }
        Command::Bench { suite, config, workers, out } => {
            let cfg = config.resolve("synthetic")?;
            let specs = scene::load_suite(&suite)?;
            log::info!("running {} pairs on {workers} worker(s)", specs.len());
            let report = bench::run_benchmark(&specs, &cfg, workers)?;
            bench::save_report(&out, &report)?;
            let a = &report.aggregate;
            println!(
                "recall {:.4}  median rre {:.6}°  median rte {:.6} m  mean stages {:.3}",
                a.recall, a.median_rre_deg, a.median_rte_m, a.mean_stages
            );
            Ok(())
        }
        Command::Suite { preset, pairs, seed, out } => {
            let specs = built_in_suite(&preset, pairs, seed)?;
            scene::save_suite(&out, &specs)?;
            println!("wrote {} pair specs to {}", specs.len(), out.display());
            Ok(())
        }
        Command::Ablate {
            which,
            suite,
            suite_preset,
            pairs,
            seed,
            config,
            workers,
            out,
        } => {
            let cfg = config.resolve("synthetic")?;
            let study: ablate::Study = which.parse()?;
            let specs = match suite {
                Some(path) => scene::load_suite(&path)?,
                None => built_in_suite(&suite_preset, pairs, seed)?,
            };
            let results = ablate::run_study(study, &specs, &cfg, workers)?;
            std::fs::write(&out, ablate::emit_study_csv(&results)).map_err(|source| {
                HarnessError::Io { path: out.clone(), source }
            })?;
            print!("{}", ablate::summarize(&results));
            Ok(())
        }
        Command::Metrics { est, gt } => {
            let est = io::load_pose(&est)?;
            let gt = io::load_pose(&gt)?;
            println!("rre_deg = {}", eval::rre(&est, &gt));
            println!("rte_m = {}", eval::rte(&est, &gt));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
