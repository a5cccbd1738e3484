//! Two-stage registration pipeline with an early-exit classifier.
//!
//! The flow: build a sampling pyramid per cloud, describe the points,
//! run sparse global matching (nodes → patches → point pairs), solve for
//! a rigid motion, and score the surviving correspondences for spatial
//! consistency. Easy pairs exit right there. Hard pairs iterate: cluster
//! the matched inliers, recruit fresh nodes around the cluster centers,
//! and re-run matching and solving locally with their own parameter set,
//! until the score stops improving or the iteration cap is reached. The
//! returned transform always comes from the best-scoring completed stage,
//! so a degraded final iteration can never worsen the result.

use std::time::Instant;

use nalgebra::Point3;
use num_traits::Float;

use crate::classifier::{decide, ClassifierConfig, Decision, Stage};
use crate::cloud::PointCloud;
use crate::descriptor::{describe, DescriptorBackend};
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::matching::{
    assign_patches, coarse_match_with, fine_match, group_points, CorrespondenceSet, MatchParams,
    PatchAssignment,
};
use crate::pyramid::build_pyramid;
use crate::refine::{adaptive_dbscan, cluster_centroids, neighborhood_augmentation, ClusterConfig};
use crate::scalar::Scalar;
use crate::solver::{local_to_global, SolverConfig};
use crate::transform::RigidTransform;

/// Pyramid construction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams<T: Scalar> {
    /// Voxel size of the first downsampled level (meters); each further
    /// level doubles it.
    pub base_voxel: T,
    /// Number of downsampled levels (the pyramid stores this plus the
    /// raw level 0).
    pub levels: usize,
}

impl<T: Scalar> Default for SamplingParams<T> {
    fn default() -> Self {
        Self {
            base_voxel: T::cast(0.025),
            levels: 5,
        }
    }
}

/// Matching parameters for one stage (global or local).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingStage<T: Scalar> {
    /// How many node correspondences the coarse matcher keeps.
    pub coarse_k: usize,
    /// Patch size cap around each node.
    pub patch_cap: usize,
    /// Pyramid level supplying the points that get matched inside
    /// patches.
    pub fine_level: usize,
    /// Kernel and transport parameters.
    pub params: MatchParams<T>,
}

impl<T: Scalar> MatchingStage<T> {
    fn validate(&self, what: &str) -> Result<(), T> {
        self.params.validate()?;
        if self.coarse_k == 0 || self.patch_cap == 0 {
            return Err(Error::InvalidConfig(format!(
                "{what} matching needs coarse_k ≥ 1 and patch_cap ≥ 1"
            )));
        }
        Ok(())
    }
}

/// Node refinement schedule for the local stages.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinePlan<T: Scalar> {
    /// Clustering parameters; the range (`eps`) is replaced per iteration
    /// by `radius_schedule`.
    pub cluster: ClusterConfig<T>,
    /// Clustering range per local iteration (meters); iterations past the
    /// end clamp to the last entry.
    pub radius_schedule: Vec<T>,
    /// Pyramid level from which augmentation recruits fresh nodes.
    pub search_level: usize,
    /// Refined node count per side; `None` matches the global stage's
    /// node count on that side.
    pub node_budget: Option<usize>,
}

impl<T: Scalar> Default for RefinePlan<T> {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            radius_schedule: vec![T::cast(0.125), T::cast(0.25), T::cast(0.375), T::cast(0.5)],
            search_level: 2,
            node_budget: None,
        }
    }
}

/// Whether stage records carry wall-clock timings.
///
/// `Off` writes 0.0 everywhere, which keeps traces bit-identical across
/// runs — benchmark reports that must be reproducible use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingMode {
    /// Measure each stage with the monotonic clock.
    #[default]
    Wall,
    /// Record 0.0 for every stage.
    Off,
}

/// Full configuration of [`register_pair`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T: Scalar> {
    /// Pyramid construction.
    pub sampling: SamplingParams<T>,
    /// Feature backend applied to the raw clouds (features propagate to
    /// coarser levels by averaging).
    pub descriptor: DescriptorBackend<T>,
    /// Pyramid level acting as registration nodes; `None` means the
    /// coarsest level.
    pub node_level: Option<usize>,
    /// Global-stage matching parameters.
    pub global: MatchingStage<T>,
    /// Local-stage matching parameters.
    pub local: MatchingStage<T>,
    /// When false, local stages reuse the global parameters (ablation of
    /// the dedicated local parameter set).
    pub unique_local_params: bool,
    /// Alignment solver shared by all stages.
    pub solver: SolverConfig<T>,
    /// Early-exit classifier.
    pub classifier: ClassifierConfig<T>,
    /// Node refinement between iterations.
    pub refine: RefinePlan<T>,
    /// Local iteration cap; 0 runs the global stage only.
    pub max_iterations: usize,
    /// Seed forwarded to refinement strategies that randomize.
    pub seed: u64,
    /// Wall-clock measurement mode for stage records.
    pub timing: TimingMode,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            sampling: SamplingParams::default(),
            descriptor: DescriptorBackend::Oracle(crate::descriptor::OracleParams::default()),
            node_level: None,
            global: MatchingStage {
                coarse_k: 256,
                patch_cap: 32,
                fine_level: 2,
                params: MatchParams::default(),
            },
            local: MatchingStage {
                coarse_k: 128,
                patch_cap: 16,
                fine_level: 1,
                params: MatchParams {
                    kernel_scale: T::cast(0.5),
                    ..MatchParams::default()
                },
            },
            unique_local_params: true,
            solver: SolverConfig::default(),
            classifier: ClassifierConfig::default(),
            refine: RefinePlan::default(),
            max_iterations: 4,
            seed: 0,
            timing: TimingMode::Wall,
        }
    }
}

impl<T: Scalar> PipelineConfig<T> {
    /// The node level actually used (defaults to the coarsest).
    pub fn effective_node_level(&self) -> usize {
        self.node_level.unwrap_or(self.sampling.levels)
    }

    /// Checks every sub-configuration and the cross-field level layout.
    pub fn validate(&self) -> Result<(), T> {
        if self.sampling.levels < 2 {
            return Err(Error::InvalidConfig(format!(
                "pyramid needs at least 2 levels, got {}",
                self.sampling.levels
            )));
        }
        if !(self.sampling.base_voxel > T::zero()) || !Float::is_finite(self.sampling.base_voxel) {
            return Err(Error::InvalidConfig(
                "base voxel must be positive and finite".into(),
            ));
        }
        self.global.validate("global")?;
        self.local.validate("local")?;
        self.solver.validate()?;
        self.classifier.validate()?;
        self.refine.cluster.validate()?;

        let node_level = self.effective_node_level();
        if node_level > self.sampling.levels {
            return Err(Error::InvalidConfig(format!(
                "node level {node_level} exceeds the coarsest level {}",
                self.sampling.levels
            )));
        }
        for (what, stage) in [("global", &self.global), ("local", &self.local)] {
            if stage.fine_level >= node_level {
                return Err(Error::InvalidConfig(format!(
                    "{what} fine level {} must be finer than node level {node_level}",
                    stage.fine_level
                )));
            }
        }
        if self.refine.search_level > self.sampling.levels {
            return Err(Error::InvalidConfig(format!(
                "refine search level {} exceeds the coarsest level {}",
                self.refine.search_level, self.sampling.levels
            )));
        }
        if self.max_iterations > 0 {
            if self.refine.radius_schedule.is_empty() {
                return Err(Error::InvalidConfig(
                    "radius schedule must not be empty when local iterations run".into(),
                ));
            }
            if let Some(budget) = self.refine.node_budget {
                if budget == 0 {
                    return Err(Error::InvalidConfig("node budget must be ≥ 1".into()));
                }
            }
        }
        for r in &self.refine.radius_schedule {
            if !(*r > T::zero()) || !Float::is_finite(*r) {
                return Err(Error::InvalidConfig(
                    "clustering radii must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Why the pipeline stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    /// The global stage's score cleared the success threshold.
    EarlySuccess,
    /// A local stage's score fell below its comparison threshold; the
    /// best earlier result is kept.
    Degraded,
    /// All allowed iterations ran without a terminal decision.
    IterationCap,
    /// A local stage could not build refined nodes (clustering rejected
    /// everything or the pool was empty); the best result so far is kept.
    RefineFailure,
    /// A local stage's matching or solving collapsed (too few pairs or
    /// degenerate geometry); the best result so far is kept.
    LocalFailure,
    /// The global stage itself failed — only ever seen inside a
    /// registration-failure error's trace.
    GlobalFailure,
}

impl std::fmt::Display for ExitReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExitReason::EarlySuccess => "early-success",
            ExitReason::Degraded => "degraded",
            ExitReason::IterationCap => "iteration-cap",
            ExitReason::RefineFailure => "refine-failure",
            ExitReason::LocalFailure => "local-failure",
            ExitReason::GlobalFailure => "global-failure",
        };
        f.write_str(s)
    }
}

/// One completed stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord<T: Scalar> {
    /// Which stage this is.
    pub stage: Stage,
    /// The transform this stage solved for.
    pub transform: RigidTransform<T>,
    /// Surviving correspondences after the solver's inlier selection.
    pub correspondence_count: usize,
    /// Spatial-consistency score of the surviving set.
    pub score: T,
    /// The classifier's verdict after this stage.
    pub decision: Decision,
    /// Node count on the source side for this stage.
    pub src_nodes: usize,
    /// Node count on the target side for this stage.
    pub tgt_nodes: usize,
    /// Stage wall time in seconds (0.0 when timing is off).
    pub wall_time: f64,
}

/// Everything the pipeline did for one pair, stage by stage.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T: Scalar> {
    /// Completed stages in execution order (global first).
    pub stages: Vec<StageRecord<T>>,
    /// Why execution stopped.
    pub exit: ExitReason,
}

impl<T: Scalar> IterationTrace<T> {
    /// The best-scoring completed stage (earliest wins ties); `None` only
    /// for the empty trace inside a global-failure error.
    pub fn best_stage(&self) -> Option<&StageRecord<T>> {
        let mut best: Option<&StageRecord<T>> = None;
        for record in &self.stages {
            if best.map_or(true, |b| record.score > b.score) {
                best = Some(record);
            }
        }
        best
    }

    /// The transform of the best-scoring stage.
    pub fn final_transform(&self) -> Option<&RigidTransform<T>> {
        self.best_stage().map(|r| &r.transform)
    }

    /// The stage at which execution stopped.
    pub fn exit_stage(&self) -> Option<Stage> {
        self.stages.last().map(|r| r.stage)
    }
}

/// Inputs handed to a node-refinement strategy for one side of one local
/// iteration.
pub struct RefineInput<'a, T: Scalar> {
    /// Positions of this side's currently matched points.
    pub matched: &'a [Point3<T>],
    /// Pairing weights, aligned with `matched`.
    pub weights: &'a [T],
    /// Candidate pool the refined nodes must come from (a described
    /// pyramid level).
    pub pool: &'a PointCloud<T>,
    /// Clustering parameters with the iteration's range already set.
    pub cluster: ClusterConfig<T>,
    /// How many nodes to produce.
    pub budget: usize,
    /// Seed for strategies that randomize.
    pub seed: u64,
    /// Local iteration number (1-based).
    pub iteration: usize,
}

/// Strategy that turns matched points into the next iteration's nodes.
///
/// The built-in strategy clusters and augments; the ablation harness
/// supplies alternatives (random nodes, a single average center).
/// Returning [`Error::EmptyClustering`] or [`Error::UndersizedInput`]
/// makes the pipeline exit cleanly with the best result so far; other
/// errors propagate.
pub trait NodeRefinement<T: Scalar> {
    /// Produces the refined node cloud for one side.
    fn refine(&self, input: &RefineInput<'_, T>) -> Result<PointCloud<T>, T>;
    /// Short name for reports.
    fn name(&self) -> &'static str;
}

/// Everything a stage-scoring strategy may look at.
pub struct ScoreInput<'a, T: Scalar> {
    /// Correspondences that survived the solver's inlier selection.
    pub surviving: &'a CorrespondenceSet<T>,
    /// All candidate correspondences the stage produced before selection.
    pub candidates: &'a CorrespondenceSet<T>,
    /// The stage's estimated transform.
    pub transform: &'a RigidTransform<T>,
    /// Fine-level source cloud the correspondences index into.
    pub src: &'a PointCloud<T>,
    /// Fine-level target cloud the correspondences index into.
    pub tgt: &'a PointCloud<T>,
    /// Classifier parameters (consistency kernel width, thresholds).
    pub classifier: &'a ClassifierConfig<T>,
    /// Residual bound the solver used for inlier selection.
    pub acceptance_threshold: T,
}

/// Strategy that scores a completed stage.
pub trait StageScorer<T: Scalar> {
    /// Scores the stage; higher is better.
    fn score(&self, input: &ScoreInput<'_, T>) -> Result<T, T>;
    /// Short name for reports.
    fn name(&self) -> &'static str;
}

/// Built-in refinement: weighted density clustering of the matched
/// points, then nearest-pool-point recruitment around the cluster
/// centers.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterRefinement;

impl<T: Scalar> NodeRefinement<T> for ClusterRefinement {
    fn refine(&self, input: &RefineInput<'_, T>) -> Result<PointCloud<T>, T> {
        // Transport masses scale with patch size; the cluster metric wants
        // unit similarity for the strongest pair.
        let weights = crate::refine::unit_scaled_weights(input.weights);
        let clustering = adaptive_dbscan(input.matched, &weights, &input.cluster)?;
        let centers = cluster_centroids(input.matched, &clustering);
        if centers.is_empty() {
            return Err(Error::EmptyClustering);
        }
        let picked = neighborhood_augmentation(input.pool, &centers, input.budget)?;
        Ok(input.pool.select(&picked))
    }

    fn name(&self) -> &'static str {
        "dbscan"
    }
}

/// Built-in scorer: maximum row sum of the spatial-consistency matrix.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConsistencyScorer;

impl<T: Scalar> StageScorer<T> for ConsistencyScorer {
    fn score(&self, input: &ScoreInput<'_, T>) -> Result<T, T> {
        crate::classifier::stage_score(
            input.surviving,
            input.src,
            input.tgt,
            input.classifier.sigma_d,
        )
    }

    fn name(&self) -> &'static str {
        "sc"
    }
}

/// Pluggable strategies for [`register_pair_with`]; `None` fields use the
/// built-ins.
#[derive(Default)]
pub struct PipelineHooks<'a, T: Scalar> {
    /// Node refinement between iterations.
    pub refiner: Option<&'a dyn NodeRefinement<T>>,
    /// Stage scoring.
    pub scorer: Option<&'a dyn StageScorer<T>>,
}

/// Registers `src` onto `tgt` with the built-in strategies.
///
/// Returns the transform of the best-scoring completed stage together
/// with the full stage trace. Errors with
/// [`Error::RegistrationFailure`] only when the global stage cannot
/// produce a usable alignment; local-stage collapses exit cleanly with
/// the best result so far.
pub fn register_pair<T: Scalar>(
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    config: &PipelineConfig<T>,
) -> Result<(RigidTransform<T>, IterationTrace<T>), T> {
    register_pair_with(src, tgt, config, &PipelineHooks::default())
}

/// [`register_pair`] with pluggable refinement and scoring strategies.
pub fn register_pair_with<T: Scalar>(
    src: &PointCloud<T>,
    tgt: &PointCloud<T>,
    config: &PipelineConfig<T>,
    hooks: &PipelineHooks<'_, T>,
) -> Result<(RigidTransform<T>, IterationTrace<T>), T> {
    config.validate()?;
    for (what, cloud) in [("source", src), ("target", tgt)] {
        if cloud.len() < 3 {
            return Err(Error::UndersizedInput {
                what: match what {
                    "source" => "source cloud",
                    _ => "target cloud",
                },
                needed: 3,
                got: cloud.len(),
                unit: "points",
            });
        }
    }

    let refiner = hooks.refiner.unwrap_or(&ClusterRefinement);
    let scorer = hooks.scorer.unwrap_or(&ConsistencyScorer);

    // Describe once at full resolution; coarser levels inherit averaged
    // features through the pyramid.
    let src = described(src, config, 0)?;
    let tgt = described(tgt, config, 1)?;
    let src_pyr = build_pyramid(&src, config.sampling.base_voxel, config.sampling.levels)?;
    let tgt_pyr = build_pyramid(&tgt, config.sampling.base_voxel, config.sampling.levels)?;

    let node_level = config.effective_node_level();
    let mut trace = IterationTrace {
        stages: Vec::with_capacity(1 + config.max_iterations),
        exit: ExitReason::IterationCap,
    };

    // ----- Global stage -----
    let clock = StageClock::start(config.timing);
    let src_nodes = src_pyr.level(node_level);
    let tgt_nodes = tgt_pyr.level(node_level);
    let stage_cfg = &config.global;
    let node_corr = coarse_match_with(src_nodes, tgt_nodes, stage_cfg.coarse_k, &stage_cfg.params)?;

    let src_patches = group_points(&src_pyr, node_level, stage_cfg.fine_level, stage_cfg.patch_cap)?;
    let tgt_patches = group_points(&tgt_pyr, node_level, stage_cfg.fine_level, stage_cfg.patch_cap)?;
    let fine_src = src_pyr.level(stage_cfg.fine_level);
    let fine_tgt = tgt_pyr.level(stage_cfg.fine_level);

    let (patch_corrs, all_corrs) = match_patches(
        &node_corr,
        &src_patches,
        &tgt_patches,
        fine_src,
        fine_tgt,
        &stage_cfg.params,
    )?;

    if all_corrs.len() < 3 {
        trace.exit = ExitReason::GlobalFailure;
        return Err(Error::RegistrationFailure {
            stage: "global matching".into(),
            reason: format!(
                "only {} fine correspondences; at least 3 are needed",
                all_corrs.len()
            ),
            trace: Box::new(trace),
        });
    }

    let (transform, surviving) =
        match local_to_global(&patch_corrs, &all_corrs, fine_src, fine_tgt, &config.solver) {
            Ok(solved) => solved,
            Err(err) => {
                trace.exit = ExitReason::GlobalFailure;
                return Err(Error::RegistrationFailure {
                    stage: "global solve".into(),
                    reason: err.to_string(),
                    trace: Box::new(trace),
                });
            }
        };

    let score = scorer.score(&ScoreInput {
        surviving: &surviving,
        candidates: &all_corrs,
        transform: &transform,
        src: fine_src,
        tgt: fine_tgt,
        classifier: &config.classifier,
        acceptance_threshold: config.solver.acceptance_threshold,
    })?;
    let decision = decide(Stage::Global, score, None, &config.classifier)?;
    trace.stages.push(StageRecord {
        stage: Stage::Global,
        transform: transform.clone(),
        correspondence_count: surviving.len(),
        score,
        decision,
        src_nodes: src_nodes.len(),
        tgt_nodes: tgt_nodes.len(),
        wall_time: clock.stop(),
    });

    if decision == Decision::ExitSuccess {
        trace.exit = ExitReason::EarlySuccess;
        return Ok(finish(trace));
    }

    // ----- Local iterations -----
    let budget_src = config.refine.node_budget.unwrap_or(src_nodes.len());
    let budget_tgt = config.refine.node_budget.unwrap_or(tgt_nodes.len());
    let mut matched_src: Vec<Point3<T>> = Vec::new();
    let mut matched_tgt: Vec<Point3<T>> = Vec::new();
    let mut weights: Vec<T> = Vec::new();
    collect_matched(
        &surviving, fine_src, fine_tgt, &mut matched_src, &mut matched_tgt, &mut weights,
    );
    let mut previous_score = score;

    for iteration in 1..=config.max_iterations {
        let clock = StageClock::start(config.timing);
        let stage_cfg = if config.unique_local_params {
            &config.local
        } else {
            &config.global
        };
        let radius_idx = (iteration - 1).min(config.refine.radius_schedule.len() - 1);
        let mut cluster = config.refine.cluster.clone();
        cluster.eps = config.refine.radius_schedule[radius_idx];

        let pool_src = src_pyr.level(config.refine.search_level);
        let pool_tgt = tgt_pyr.level(config.refine.search_level);
        let refined = refine_both(
            refiner,
            (&matched_src, &matched_tgt),
            &weights,
            (pool_src, pool_tgt),
            &cluster,
            (budget_src, budget_tgt),
            config.seed,
            iteration,
        );
        let (refined_src, refined_tgt) = match refined {
            Ok(nodes) => nodes,
            Err(Error::EmptyClustering) | Err(Error::UndersizedInput { .. }) => {
                trace.exit = ExitReason::RefineFailure;
                return Ok(finish(trace));
            }
            Err(err) => return Err(err),
        };

        let node_corr =
            coarse_match_with(&refined_src, &refined_tgt, stage_cfg.coarse_k, &stage_cfg.params)?;
        let fine_src = src_pyr.level(stage_cfg.fine_level);
        let fine_tgt = tgt_pyr.level(stage_cfg.fine_level);
        let spacing = src_pyr.voxel_of_level(config.refine.search_level);
        let src_patches = assign_patches(&refined_src, fine_src, spacing, stage_cfg.patch_cap)?;
        let tgt_patches = assign_patches(&refined_tgt, fine_tgt, spacing, stage_cfg.patch_cap)?;

        let (patch_corrs, all_corrs) = match_patches(
            &node_corr,
            &src_patches,
            &tgt_patches,
            fine_src,
            fine_tgt,
            &stage_cfg.params,
        )?;

        if all_corrs.len() < 3 {
            trace.exit = ExitReason::LocalFailure;
            return Ok(finish(trace));
        }
        let (transform, surviving) =
            match local_to_global(&patch_corrs, &all_corrs, fine_src, fine_tgt, &config.solver) {
                Ok(solved) => solved,
                Err(Error::DegenerateGeometry(_)) | Err(Error::UndersizedInput { .. }) => {
                    trace.exit = ExitReason::LocalFailure;
                    return Ok(finish(trace));
                }
                Err(err) => return Err(err),
            };

        let score = scorer.score(&ScoreInput {
            surviving: &surviving,
            candidates: &all_corrs,
            transform: &transform,
            src: fine_src,
            tgt: fine_tgt,
            classifier: &config.classifier,
            acceptance_threshold: config.solver.acceptance_threshold,
        })?;
        let decision = decide(
            Stage::Local(iteration),
            score,
            Some(previous_score),
            &config.classifier,
        )?;
        trace.stages.push(StageRecord {
            stage: Stage::Local(iteration),
            transform,
            correspondence_count: surviving.len(),
            score,
            decision,
            src_nodes: refined_src.len(),
            tgt_nodes: refined_tgt.len(),
            wall_time: clock.stop(),
        });

        match decision {
            Decision::ExitDegraded => {
                trace.exit = ExitReason::Degraded;
                return Ok(finish(trace));
            }
            Decision::ExitSuccess => {
                trace.exit = ExitReason::EarlySuccess;
                return Ok(finish(trace));
            }
            Decision::Continue => {}
        }

        previous_score = score;
        matched_src.clear();
        matched_tgt.clear();
        weights.clear();
        collect_matched(
            &surviving, fine_src, fine_tgt, &mut matched_src, &mut matched_tgt, &mut weights,
        );
    }

    trace.exit = ExitReason::IterationCap;
    Ok(finish(trace))
}

/// Applies the configured descriptor backend to a raw cloud.
///
/// `salt` separates the two sides' random streams (0 for source, 1 for
/// target): with a shared seed, the oracle backend would corrupt the
/// same indices with the same replacement keys on both clouds, planting
/// perfectly matched false correspondences between unrelated locations.
fn described<T: Scalar>(
    cloud: &PointCloud<T>,
    config: &PipelineConfig<T>,
    salt: u64,
) -> Result<PointCloud<T>, T> {
    let backend = match &config.descriptor {
        DescriptorBackend::Oracle(params) => {
            let mut params = params.clone();
            params.seed = params.seed.wrapping_add(salt);
            DescriptorBackend::Oracle(params)
        }
        other => other.clone(),
    };
    let index = SpatialIndex::new(cloud.points(), config.sampling.base_voxel)?;
    describe(cloud, &backend, &index)
}

/// Runs per-patch point matching for every node correspondence and merges
/// the results into one fine-level set, in the node correspondences'
/// deterministic order.
fn match_patches<T: Scalar>(
    node_corr: &CorrespondenceSet<T>,
    src_patches: &PatchAssignment,
    tgt_patches: &PatchAssignment,
    fine_src: &PointCloud<T>,
    fine_tgt: &PointCloud<T>,
    params: &MatchParams<T>,
) -> Result<(Vec<CorrespondenceSet<T>>, CorrespondenceSet<T>), T> {
    let mut patch_corrs = Vec::with_capacity(node_corr.len());
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut weights: Vec<T> = Vec::new();
    // Each fine point belongs to exactly one patch per side, so distinct
    // node pairs cannot produce the same fine pair; the set is defensive.
    let mut seen: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    for &(a, b) in node_corr.pairs() {
        let src_idx = src_patches.members(a);
        let tgt_idx = tgt_patches.members(b);
        if src_idx.is_empty() || tgt_idx.is_empty() {
            patch_corrs.push(CorrespondenceSet::empty());
            continue;
        }
        let src_patch = fine_src.select(src_idx);
        let tgt_patch = fine_tgt.select(tgt_idx);
        let local = fine_match(&src_patch, &tgt_patch, params)?;

        let mut patch_pairs = Vec::with_capacity(local.len());
        let mut patch_weights = Vec::with_capacity(local.len());
        for (i, j, w) in local.iter() {
            let cell = (src_idx[i], tgt_idx[j]);
            patch_pairs.push(cell);
            patch_weights.push(w);
            if seen.insert(cell) {
                pairs.push(cell);
                weights.push(w);
            }
        }
        patch_corrs.push(CorrespondenceSet::new(
            patch_pairs,
            patch_weights,
            fine_src.len(),
            fine_tgt.len(),
        )?);
    }
    let all = CorrespondenceSet::new(pairs, weights, fine_src.len(), fine_tgt.len())?;
    Ok((patch_corrs, all))
}

/// Extracts matched positions and weights from a correspondence set.
fn collect_matched<T: Scalar>(
    corr: &CorrespondenceSet<T>,
    fine_src: &PointCloud<T>,
    fine_tgt: &PointCloud<T>,
    out_src: &mut Vec<Point3<T>>,
    out_tgt: &mut Vec<Point3<T>>,
    out_weights: &mut Vec<T>,
) {
    for (i, j, w) in corr.iter() {
        out_src.push(fine_src.point(i));
        out_tgt.push(fine_tgt.point(j));
        out_weights.push(w);
    }
}

/// Runs the refinement hook on both sides.
#[allow(clippy::too_many_arguments)]
fn refine_both<T: Scalar>(
    refiner: &dyn NodeRefinement<T>,
    matched: (&[Point3<T>], &[Point3<T>]),
    weights: &[T],
    pools: (&PointCloud<T>, &PointCloud<T>),
    cluster: &ClusterConfig<T>,
    budgets: (usize, usize),
    seed: u64,
    iteration: usize,
) -> Result<(PointCloud<T>, PointCloud<T>), T> {
    let src = refiner.refine(&RefineInput {
        matched: matched.0,
        weights,
        pool: pools.0,
        cluster: cluster.clone(),
        budget: budgets.0,
        seed,
        iteration,
    })?;
    let tgt = refiner.refine(&RefineInput {
        matched: matched.1,
        weights,
        pool: pools.1,
        cluster: cluster.clone(),
        budget: budgets.1,
        seed: seed.wrapping_add(1),
        iteration,
    })?;
    Ok((src, tgt))
}

/// Packages the best stage's transform with the trace.
fn finish<T: Scalar>(trace: IterationTrace<T>) -> (RigidTransform<T>, IterationTrace<T>) {
    let transform = trace
        .final_transform()
        .expect("finish is only called with at least one completed stage")
        .clone();
    (transform, trace)
}

/// Measures one stage's wall time, or nothing.
enum StageClock {
    Running(Instant),
    Off,
}

impl StageClock {
    fn start(mode: TimingMode) -> Self {
        match mode {
            TimingMode::Wall => StageClock::Running(Instant::now()),
            TimingMode::Off => StageClock::Off,
        }
    }

    fn stop(self) -> f64 {
        match self {
            StageClock::Running(t0) => t0.elapsed().as_secs_f64(),
            StageClock::Off => 0.0,
        }
    }
}
