//! Component-swap studies over the benchmark suites.
//!
//! Each study replaces exactly one piece of the pipeline and reruns the
//! same suite per variant: the dedicated local parameter set versus
//! reusing the global one, the early-exit classifier on versus off, the
//! node refinement strategy (density clustering versus random nodes
//! versus one average center), the local iteration cap 0–4, and the
//! stage scorer (spatial consistency versus inlier ratio versus its
//! second-order variant).

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Point3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanreg::classifier::{sc_matrix, sc_score, LocalRule};
use scanreg::cloud::PointCloud as GenericCloud;
use scanreg::pipeline::{
    ClusterRefinement, ConsistencyScorer, NodeRefinement, RefineInput, ScoreInput, StageScorer,
};
use scanreg::refine::neighborhood_augmentation;
use scanreg::solver::count_inliers;

use crate::bench::{self, BenchmarkReport};
use crate::config::HarnessConfig;
use crate::scene::SceneSpec;
use crate::{HarnessError, Result};

// ---------------------------------------------------------------------
// Alternative node refinement strategies
// ---------------------------------------------------------------------

/// Baseline refinement: the next nodes are a seeded uniform sample of
/// the pool, ignoring where the matches concentrate.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomNodes;

impl NodeRefinement<f64> for RandomNodes {
    fn refine(&self, input: &RefineInput<'_, f64>) -> scanreg::Result<GenericCloud<f64>> {
        let n = input.pool.len();
        let take = input.budget.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(
            input.seed ^ (input.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, take).into_vec();
        picked.sort_unstable();
        Ok(input.pool.select(&picked))
    }

    fn name(&self) -> &'static str {
        "random"
    }
}

/// Baseline refinement: recruit every node around the single weighted
/// average of the matched points, collapsing all spatial structure of
/// the match distribution into one center.
#[derive(Debug, Clone, Copy, Default)]
pub struct AverageCenter;

impl NodeRefinement<f64> for AverageCenter {
    fn refine(&self, input: &RefineInput<'_, f64>) -> scanreg::Result<GenericCloud<f64>> {
        let total: f64 = input.weights.iter().sum();
        let mut center = Point3::origin();
        if total > 0.0 {
            for (p, w) in input.matched.iter().zip(input.weights) {
                center += p.coords * (w / total);
            }
        } else {
            let n = input.matched.len().max(1) as f64;
            for p in input.matched {
                center += p.coords / n;
            }
        }
        let picked = neighborhood_augmentation(input.pool, &[center], input.budget)?;
        Ok(input.pool.select(&picked))
    }

    fn name(&self) -> &'static str {
        "average-center"
    }
}

/// Node refinement strategies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinerChoice {
    /// Weighted density clustering with neighborhood recruitment.
    Dbscan,
    /// Seeded uniform node sample.
    Random,
    /// One weighted average center.
    AverageCenter,
}

static DBSCAN_REFINER: ClusterRefinement = ClusterRefinement;
static RANDOM_REFINER: RandomNodes = RandomNodes;
static AVERAGE_REFINER: AverageCenter = AverageCenter;

impl RefinerChoice {
    /// The strategy object behind the choice.
    pub fn strategy(self) -> &'static dyn NodeRefinement<f64> {
        match self {
            RefinerChoice::Dbscan => &DBSCAN_REFINER,
            RefinerChoice::Random => &RANDOM_REFINER,
            RefinerChoice::AverageCenter => &AVERAGE_REFINER,
        }
    }
}

// ---------------------------------------------------------------------
// Alternative stage scorers
// ---------------------------------------------------------------------

/// Scores a stage by the fraction of its candidate correspondences that
/// the estimated motion explains within the acceptance threshold.
///
/// A ratio in [0, 1]: thresholds must be rescaled accordingly (the
/// studies use 0.3 where the consistency scorer uses a count-scale
/// threshold).
#[derive(Debug, Clone, Copy, Default)]
pub struct InlierRatioScorer;

impl StageScorer<f64> for InlierRatioScorer {
    fn score(&self, input: &ScoreInput<'_, f64>) -> scanreg::Result<f64> {
        if input.candidates.is_empty() {
            return Ok(0.0);
        }
        let inliers = count_inliers(
            input.transform,
            input.candidates,
            input.src,
            input.tgt,
            input.acceptance_threshold,
        );
        Ok(inliers as f64 / input.candidates.len() as f64)
    }

    fn name(&self) -> &'static str {
        "ir"
    }
}

/// Scores a stage by second-order spatial consistency: the square of
/// the consistency matrix counts, for every pair of correspondences,
/// the mass of third correspondences consistent with both.
///
/// The score is √(max row sum of SC²), which for a perfectly
/// consistent set of n correspondences equals n — the same scale as the
/// first-order scorer, so the classifier thresholds carry over.
#[derive(Debug, Clone, Copy, Default)]
pub struct SecondOrderScorer;

impl StageScorer<f64> for SecondOrderScorer {
    fn score(&self, input: &ScoreInput<'_, f64>) -> scanreg::Result<f64> {
        let n = input.surviving.len();
        if n < 2 {
            return Ok(n as f64);
        }
        let sc = sc_matrix(input.surviving, input.src, input.tgt, input.classifier.sigma_d)?;
        let squared = &sc * &sc;
        Ok(sc_score(&squared).sqrt())
    }

    fn name(&self) -> &'static str {
        "sc2"
    }
}

/// Stage scorers selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerChoice {
    /// Max row sum of the spatial-consistency matrix.
    Consistency,
    /// Inlier ratio over the stage's candidate correspondences.
    InlierRatio,
    /// Second-order spatial consistency.
    SecondOrder,
}

static SC_SCORER: ConsistencyScorer = ConsistencyScorer;
static IR_SCORER: InlierRatioScorer = InlierRatioScorer;
static SC2_SCORER: SecondOrderScorer = SecondOrderScorer;

impl ScorerChoice {
    /// The strategy object behind the choice.
    pub fn strategy(self) -> &'static dyn StageScorer<f64> {
        match self {
            ScorerChoice::Consistency => &SC_SCORER,
            ScorerChoice::InlierRatio => &IR_SCORER,
            ScorerChoice::SecondOrder => &SC2_SCORER,
        }
    }
}

// ---------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------

/// One variant's benchmark outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    /// Human-readable variant label.
    pub label: String,
    /// The variant's full benchmark report.
    pub report: BenchmarkReport,
}

/// The available studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    /// Dedicated versus shared local matching parameters.
    Encoder,
    /// Early-exit classifier on versus off.
    Classifier,
    /// Node refinement strategy comparison.
    Node,
    /// Local iteration caps 0 through 4.
    Iteration,
    /// Stage scorer comparison.
    Scorer,
}

impl FromStr for Study {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(Study::Encoder),
            "classifier" => Ok(Study::Classifier),
            "node" => Ok(Study::Node),
            "iteration" => Ok(Study::Iteration),
            "scorer" => Ok(Study::Scorer),
            other => Err(HarnessError::Config(format!(
                "unknown study {other:?}; expected encoder, classifier, node, iteration, or scorer"
            ))),
        }
    }
}

/// Runs every variant of a study over the same suite.
pub fn run_study(
    study: Study,
    suite: &[SceneSpec],
    cfg: &HarnessConfig,
    workers: usize,
) -> Result<Vec<AblationResult>> {
    let mut results = Vec::new();
    let mut push = |label: &str, report: BenchmarkReport| {
        results.push(AblationResult { label: label.to_string(), report });
    };
    match study {
        Study::Encoder => {
            for (label, dedicated) in
                [("shared-local-params", false), ("dedicated-local-params", true)]
            {
                let mut v = cfg.clone();
                v.pipeline.unique_local_params = dedicated;
                push(label, bench::run_benchmark(suite, &v, workers)?);
            }
        }
        Study::Classifier => {
            for (label, enabled) in [("classifier-off", false), ("classifier-on", true)] {
                let mut v = cfg.clone();
                v.pipeline.classifier.enabled = enabled;
                push(label, bench::run_benchmark(suite, &v, workers)?);
            }
        }
        Study::Node => {
            for (label, refiner) in [
                ("dbscan", RefinerChoice::Dbscan),
                ("random", RefinerChoice::Random),
                ("average-center", RefinerChoice::AverageCenter),
            ] {
                let report = bench::run_benchmark_with(
                    suite,
                    cfg,
                    workers,
                    refiner,
                    ScorerChoice::Consistency,
                )?;
                push(label, report);
            }
        }
        Study::Iteration => {
            for cap in 0..=4usize {
                let mut v = cfg.clone();
                v.pipeline.max_iterations = cap;
                push(&format!("iterations-{cap}"), bench::run_benchmark(suite, &v, workers)?);
            }
        }
        Study::Scorer => {
            for (label, scorer) in [
                ("sc", ScorerChoice::Consistency),
                ("ir", ScorerChoice::InlierRatio),
                ("sc2", ScorerChoice::SecondOrder),
            ] {
                let mut v = cfg.clone();
                if scorer == ScorerChoice::InlierRatio {
                    // The inlier ratio lives in [0, 1]; count-scale
                    // thresholds would never trigger.
                    v.pipeline.classifier.global_threshold = 0.3;
                    v.pipeline.classifier.local_rule = LocalRule::Raw;
                    v.pipeline.classifier.local_thresholds = Some(vec![0.35]);
                }
                let report =
                    bench::run_benchmark_with(suite, &v, workers, RefinerChoice::Dbscan, scorer)?;
                push(label, report);
            }
        }
    }
    Ok(results)
}

/// Serializes study results as one CSV with a leading `variant` column.
pub fn emit_study_csv(results: &[AblationResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant", "kind", "id", "registered", "rre_deg", "rte_m", "rmse_m", "stages", "wall_s",
    ])
    .expect("in-memory csv write");
    for result in results {
        let body = bench::emit_csv(&result.report);
        for line in body.lines().skip(1) {
            let mut record = vec![result.label.as_str()];
            record.extend(line.split(','));
            w.write_record(&record).expect("in-memory csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// A fixed-width text table of the per-variant aggregates.
pub fn summarize(results: &[AblationResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>8} {:>14} {:>14} {:>12} {:>10}",
        "variant", "recall", "median-rre", "median-rte", "mean-stages", "wall-s"
    );
    for r in results {
        let a = &r.report.aggregate;
        let _ = writeln!(
            out,
            "{:<24} {:>8.4} {:>14.6} {:>14.6} {:>12.3} {:>10.3}",
            r.label, a.recall, a.median_rre_deg, a.median_rte_m, a.mean_stages, a.total_wall_s
        );
    }
    out
}
