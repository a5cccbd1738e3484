//! The flat `key = value` configuration format.
//!
//! One assignment per line, `#` starts a comment, dotted prefixes group
//! related keys. Every pipeline parameter is addressable; a handful of
//! `bench.*` keys configure how the benchmark judges a registration.
//! Unknown and duplicated keys are hard errors — a typo never silently
//! becomes a default.
//!
//! [`emit`] produces the canonical text (every key, fixed order); a
//! parse of emitted text reproduces the configuration exactly, and the
//! [`fingerprint`] that stamps benchmark reports is a digest of that
//! canonical text.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use scanreg::classifier::LocalRule;
use scanreg::descriptor::{DescriptorBackend, HistogramParams, OracleParams};
use scanreg::eval::{MetricConfig, RecallMode};
use scanreg::pipeline::TimingMode;
use scanreg::PipelineConfig;
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

/// How the benchmark decides that a pair registered.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    /// Pose-based (rotation and translation bounds) or RMSE-based.
    pub recall: RecallMode,
    /// The thresholds behind both recall modes.
    pub metrics: MetricConfig<f64>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            recall: RecallMode::PoseBased,
            metrics: MetricConfig::default(),
        }
    }
}

/// Pipeline configuration plus benchmark judgment settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HarnessConfig {
    /// Registration pipeline parameters.
    pub pipeline: PipelineConfig,
    /// Benchmark recall settings.
    pub bench: BenchSettings,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(format!("{key}: expected a finite number, got {value:?}")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: expected a non-negative integer, got {value:?}")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: expected a non-negative integer, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|item| parse_f64(key, item.trim()))
        .collect()
}

fn parse_opt<T>(value: &str, inner: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        inner(value).map(Some)
    }
}

/// Parses configuration text into a [`HarnessConfig`].
pub fn parse(text: &str) -> Result<HarnessConfig> {
    let mut assignments: Vec<(String, String)> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| bad(format!("line {line}: expected `key = value`, got {raw:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(bad(format!("line {line}: empty key or value in {raw:?}")));
        }
        if !seen.insert(key.clone()) {
            return Err(bad(format!("line {line}: duplicate key {key}")));
        }
        assignments.push((key, value));
    }

    let mut cfg = HarnessConfig::default();
    let mut descriptor_backend: Option<String> = None;
    let mut descriptor_keys: Vec<(String, String)> = Vec::new();

    for (key, value) in &assignments {
        let p = &mut cfg.pipeline;
        match key.as_str() {
            "descriptor.backend" => descriptor_backend = Some(value.clone()),
            "descriptor.radius" | "descriptor.noise" | "descriptor.outlier_fraction"
            | "descriptor.seed" | "descriptor.scale" => {
                descriptor_keys.push((key.clone(), value.clone()));
            }
            "sampling.base_voxel" => p.sampling.base_voxel = parse_f64(key, value)?,
            "sampling.levels" => p.sampling.levels = parse_usize(key, value)?,
            "node_level" => p.node_level = parse_opt(value, |v| parse_usize(key, v))?,
            "global.coarse_k" => p.global.coarse_k = parse_usize(key, value)?,
            "global.patch_cap" => p.global.patch_cap = parse_usize(key, value)?,
            "global.fine_level" => p.global.fine_level = parse_usize(key, value)?,
            "global.sinkhorn_iterations" => {
                p.global.params.sinkhorn_iterations = parse_usize(key, value)?
            }
            "global.dustbin_logit" => p.global.params.dustbin_logit = parse_f64(key, value)?,
            "global.kernel_scale" => p.global.params.kernel_scale = parse_f64(key, value)?,
            "local.coarse_k" => p.local.coarse_k = parse_usize(key, value)?,
            "local.patch_cap" => p.local.patch_cap = parse_usize(key, value)?,
            "local.fine_level" => p.local.fine_level = parse_usize(key, value)?,
            "local.sinkhorn_iterations" => {
                p.local.params.sinkhorn_iterations = parse_usize(key, value)?
            }
            "local.dustbin_logit" => p.local.params.dustbin_logit = parse_f64(key, value)?,
            "local.kernel_scale" => p.local.params.kernel_scale = parse_f64(key, value)?,
            "unique_local_params" => p.unique_local_params = parse_bool(key, value)?,
            "solver.acceptance_threshold" => {
                p.solver.acceptance_threshold = parse_f64(key, value)?
            }
            "solver.refinement_rounds" => p.solver.refinement_rounds = parse_usize(key, value)?,
            "classifier.sigma_d" => p.classifier.sigma_d = parse_f64(key, value)?,
            "classifier.global_threshold" => {
                p.classifier.global_threshold = parse_f64(key, value)?
            }
            "classifier.local_thresholds" => {
                p.classifier.local_thresholds = parse_opt(value, |v| parse_f64_list(key, v))?
            }
            "classifier.local_start_fraction" => {
                p.classifier.local_start_fraction = parse_f64(key, value)?
            }
            "classifier.local_step" => p.classifier.local_step = parse_f64(key, value)?,
            "classifier.local_rule" => {
                p.classifier.local_rule = match value.as_str() {
                    "delta" => LocalRule::Delta,
                    "raw" => LocalRule::Raw,
                    _ => return Err(bad(format!("{key}: expected delta or raw, got {value:?}"))),
                }
            }
            "classifier.enabled" => p.classifier.enabled = parse_bool(key, value)?,
            "refine.eps" => p.refine.cluster.eps = parse_f64(key, value)?,
            "refine.min_pts" => p.refine.cluster.min_pts = parse_usize(key, value)?,
            "refine.eps_growth" => p.refine.cluster.eps_growth = parse_f64(key, value)?,
            "refine.min_pts_step" => p.refine.cluster.min_pts_step = parse_usize(key, value)?,
            "refine.similarity_floor" => {
                p.refine.cluster.similarity_floor = parse_opt(value, |v| parse_f64(key, v))?
            }
            "refine.weighted_range_query" => {
                p.refine.cluster.weighted_range_query = parse_bool(key, value)?
            }
            "refine.radius_schedule" => p.refine.radius_schedule = parse_f64_list(key, value)?,
            "refine.search_level" => p.refine.search_level = parse_usize(key, value)?,
            "refine.node_budget" => {
                p.refine.node_budget = parse_opt(value, |v| parse_usize(key, v))?
            }
            "max_iterations" => p.max_iterations = parse_usize(key, value)?,
            "seed" => p.seed = parse_u64(key, value)?,
            "timing" => {
                p.timing = match value.as_str() {
                    "wall" => TimingMode::Wall,
                    "off" => TimingMode::Off,
                    _ => return Err(bad(format!("{key}: expected wall or off, got {value:?}"))),
                }
            }
            "bench.recall" => {
                cfg.bench.recall = match value.as_str() {
                    "pose" => RecallMode::PoseBased,
                    "rmse" => RecallMode::RmseBased,
                    _ => return Err(bad(format!("{key}: expected pose or rmse, got {value:?}"))),
                }
            }
            "bench.rmse_threshold" => cfg.bench.metrics.rmse_threshold = parse_f64(key, value)?,
            "bench.rre_threshold" => cfg.bench.metrics.rre_threshold = parse_f64(key, value)?,
            "bench.rte_threshold" => cfg.bench.metrics.rte_threshold = parse_f64(key, value)?,
            _ => return Err(bad(format!("unknown key {key}"))),
        }
    }

    // The descriptor keys depend on the chosen backend, so they are
    // applied after all assignments are known.
    let backend = descriptor_backend.as_deref().unwrap_or("oracle");
    cfg.pipeline.descriptor = match backend {
        "oracle" => {
            let mut params = OracleParams::default();
            for (key, value) in &descriptor_keys {
                match key.as_str() {
                    "descriptor.noise" => params.noise = parse_f64(key, value)?,
                    "descriptor.outlier_fraction" => {
                        params.outlier_fraction = parse_f64(key, value)?
                    }
                    "descriptor.seed" => params.seed = parse_u64(key, value)?,
                    "descriptor.scale" => params.scale = parse_f64(key, value)?,
                    _ => {
                        return Err(bad(format!(
                            "{key} only applies to the histogram backend"
                        )))
                    }
                }
            }
            DescriptorBackend::Oracle(params)
        }
        "histogram" => {
            let mut params = HistogramParams { radius: 0.3 };
            for (key, value) in &descriptor_keys {
                match key.as_str() {
                    "descriptor.radius" => params.radius = parse_f64(key, value)?,
                    _ => {
                        return Err(bad(format!("{key} only applies to the oracle backend")))
                    }
                }
            }
            DescriptorBackend::Histogram(params)
        }
        other => {
            return Err(bad(format!(
                "descriptor.backend: expected oracle or histogram, got {other:?}"
            )))
        }
    };

    cfg.pipeline.validate()?;
    cfg.bench.metrics.validate().map_err(HarnessError::from)?;
    Ok(cfg)
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "none".into(),
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Emits the canonical text of a configuration: every key, fixed order.
pub fn emit(cfg: &HarnessConfig) -> String {
    let p = &cfg.pipeline;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };

    kv("sampling.base_voxel", p.sampling.base_voxel.to_string());
    kv("sampling.levels", p.sampling.levels.to_string());
    match &p.descriptor {
        DescriptorBackend::Oracle(o) => {
            kv("descriptor.backend", "oracle".into());
            kv("descriptor.noise", o.noise.to_string());
            kv("descriptor.outlier_fraction", o.outlier_fraction.to_string());
            kv("descriptor.seed", o.seed.to_string());
            kv("descriptor.scale", o.scale.to_string());
        }
        DescriptorBackend::Histogram(h) => {
            kv("descriptor.backend", "histogram".into());
            kv("descriptor.radius", h.radius.to_string());
        }
    }
    kv("node_level", fmt_opt(&p.node_level));
    for (name, stage) in [("global", &p.global), ("local", &p.local)] {
        kv(&format!("{name}.coarse_k"), stage.coarse_k.to_string());
        kv(&format!("{name}.patch_cap"), stage.patch_cap.to_string());
        kv(&format!("{name}.fine_level"), stage.fine_level.to_string());
        kv(
            &format!("{name}.sinkhorn_iterations"),
            stage.params.sinkhorn_iterations.to_string(),
        );
        kv(&format!("{name}.dustbin_logit"), stage.params.dustbin_logit.to_string());
        kv(&format!("{name}.kernel_scale"), stage.params.kernel_scale.to_string());
    }
    kv("unique_local_params", p.unique_local_params.to_string());
    kv("solver.acceptance_threshold", p.solver.acceptance_threshold.to_string());
    kv("solver.refinement_rounds", p.solver.refinement_rounds.to_string());
    kv("classifier.sigma_d", p.classifier.sigma_d.to_string());
    kv("classifier.global_threshold", p.classifier.global_threshold.to_string());
    kv(
        "classifier.local_thresholds",
        match &p.classifier.local_thresholds {
            Some(list) => fmt_list(list),
            None => "none".into(),
        },
    );
    kv(
        "classifier.local_start_fraction",
        p.classifier.local_start_fraction.to_string(),
    );
    kv("classifier.local_step", p.classifier.local_step.to_string());
    kv(
        "classifier.local_rule",
        match p.classifier.local_rule {
            LocalRule::Delta => "delta".into(),
            LocalRule::Raw => "raw".into(),
        },
    );
    kv("classifier.enabled", p.classifier.enabled.to_string());
    kv("refine.eps", p.refine.cluster.eps.to_string());
    kv("refine.min_pts", p.refine.cluster.min_pts.to_string());
    kv("refine.eps_growth", p.refine.cluster.eps_growth.to_string());
    kv("refine.min_pts_step", p.refine.cluster.min_pts_step.to_string());
    kv("refine.similarity_floor", fmt_opt(&p.refine.cluster.similarity_floor));
    kv(
        "refine.weighted_range_query",
        p.refine.cluster.weighted_range_query.to_string(),
    );
    kv("refine.radius_schedule", fmt_list(&p.refine.radius_schedule));
    kv("refine.search_level", p.refine.search_level.to_string());
    kv("refine.node_budget", fmt_opt(&p.refine.node_budget));
    kv("max_iterations", p.max_iterations.to_string());
    kv("seed", p.seed.to_string());
    kv(
        "timing",
        match p.timing {
            TimingMode::Wall => "wall".into(),
            TimingMode::Off => "off".into(),
        },
    );
    kv(
        "bench.recall",
        match cfg.bench.recall {
            RecallMode::PoseBased => "pose".into(),
            RecallMode::RmseBased => "rmse".into(),
        },
    );
    kv("bench.rmse_threshold", cfg.bench.metrics.rmse_threshold.to_string());
    kv("bench.rre_threshold", cfg.bench.metrics.rre_threshold.to_string());
    kv("bench.rte_threshold", cfg.bench.metrics.rte_threshold.to_string());
    out
}

/// Digest of the canonical text; stamps benchmark reports so a report
/// can be matched to the exact configuration that produced it.
pub fn fingerprint(cfg: &HarnessConfig) -> String {
    let digest = Sha256::digest(emit(cfg).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Loads and parses a configuration file.
pub fn load(path: &std::path::Path) -> Result<HarnessConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text).map_err(|e| match e {
        HarnessError::Config(msg) => {
            HarnessError::Config(format!("{}: {msg}", path.display()))
        }
        other => other,
    })
}

/// Built-in configurations by name.
///
/// - `default` — the library defaults.
/// - `indoor` — histogram descriptor, room-scale radii and thresholds.
/// - `outdoor` — histogram descriptor, coarse voxels and wide radii for
///   street-scale clouds.
/// - `synthetic` — oracle descriptor tuned for the procedural benchmark
///   scenes; the configuration behind the bundled suites.
pub fn preset(name: &str) -> Result<HarnessConfig> {
    let mut cfg = HarnessConfig::default();
    match name {
        "default" => {}
        "indoor" => {
            let p = &mut cfg.pipeline;
            p.descriptor = DescriptorBackend::Histogram(HistogramParams { radius: 0.25 });
            p.sampling.base_voxel = 0.025;
            p.sampling.levels = 4;
            p.refine.radius_schedule = vec![0.125, 0.25, 0.375, 0.5];
            p.solver.acceptance_threshold = 0.1;
            p.classifier.sigma_d = 0.1;
        }
        "outdoor" => {
            let p = &mut cfg.pipeline;
            p.descriptor = DescriptorBackend::Histogram(HistogramParams { radius: 2.5 });
            p.sampling.base_voxel = 0.3;
            p.sampling.levels = 4;
            p.refine.radius_schedule = vec![30.0];
            p.solver.acceptance_threshold = 0.6;
            p.classifier.sigma_d = 0.6;
            cfg.bench.metrics.rre_threshold = 5.0;
            cfg.bench.metrics.rte_threshold = 2.0;
        }
        "synthetic" => {
            let p = &mut cfg.pipeline;
            p.descriptor = DescriptorBackend::Oracle(OracleParams {
                scale: 4.0,
                ..OracleParams::default()
            });
            p.sampling.base_voxel = 0.2;
            p.sampling.levels = 3;
            p.global.coarse_k = 64;
            p.global.patch_cap = 24;
            p.global.fine_level = 0;
            p.global.params.sinkhorn_iterations = 30;
            p.global.params.kernel_scale = 0.15;
            p.local.coarse_k = 48;
            p.local.patch_cap = 16;
            p.local.fine_level = 0;
            p.local.params.sinkhorn_iterations = 30;
            p.local.params.kernel_scale = 0.1;
            p.solver.acceptance_threshold = 0.05;
            p.solver.refinement_rounds = 5;
            p.classifier.sigma_d = 0.05;
            p.classifier.global_threshold = 60.0;
            p.refine.radius_schedule = vec![0.4, 0.55, 0.7, 0.85];
            p.refine.search_level = 1;
            p.timing = TimingMode::Off;
        }
        other => {
            return Err(bad(format!(
                "unknown preset {other:?}; expected default, indoor, outdoor, or synthetic"
            )))
        }
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}
