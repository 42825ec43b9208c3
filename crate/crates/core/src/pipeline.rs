//! End-to-end registration: direction clustering, rotation enumeration,
//! per-candidate translation search and final refinement.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cluster::{
    cluster_2d_vanishing, cluster_3d_parallel, merge_and_rank_2d, merge_and_rank_3d, ClusterConfig, ClusterError,
    DirectionCluster,
};
use crate::geom::{CameraIntrinsics, LineSegment2D, LineSegment3D, Pose};
use crate::refine::{line_residuals, refine_pose, RefineConfig, RefineError};
use crate::rotation::{enumerate_rotations, RotationCandidate, RotationError};
use crate::scalar::Real;
use crate::translation::{
    estimate_translation, select_best, Correspondence, CorrespondenceSet, LineProblem, RansacConfig, RansacError, SamplingPools,
    TranslationEstimate,
};

/// Clustering draws from this stream; candidate searches use stream 1.
const CLUSTER_STREAM: u64 = 0;
const CANDIDATE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("clustering failed: {0}")]
    Cluster(#[from] ClusterError),
    #[error("rotation enumeration failed: {0}")]
    Rotation(#[from] RotationError),
    #[error("translation search failed: {0}")]
    Ransac(#[from] RansacError),
    #[error("refinement failed: {0}")]
    Refine(#[from] RefineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig<T: Real> {
    pub cluster: ClusterConfig<T>,
    pub ransac: RansacConfig<T>,
    pub refine: RefineConfig<T>,
    /// Skip the final least-squares stage and report the hypothesis pose.
    pub refine_enabled: bool,
    pub seed: u64,
}

impl<T: Real> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            ransac: RansacConfig::default(),
            refine: RefineConfig::default(),
            refine_enabled: true,
            seed: 0,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub clustering: f64,
    pub rotation: f64,
    pub translation: f64,
    pub refinement: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<T: Real> {
    pub cluster_populations_2d: Vec<usize>,
    pub cluster_populations_3d: Vec<usize>,
    pub candidate_count: usize,
    /// Score per candidate, zero for failed searches.
    pub candidate_scores: Vec<usize>,
    pub selected_candidate: usize,
    pub ransac_score: usize,
    /// Accepted LM costs, all runs concatenated.
    pub refine_cost_history: Vec<T>,
    pub outlier_rounds: usize,
    /// Refinements repeated after matching again at the refined pose.
    pub reassociations: usize,
    pub converged: bool,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration<T: Real> {
    pub pose: Pose<T>,
    pub correspondences: CorrespondenceSet,
    pub diagnostics: Diagnostics<T>,
}

/// Output of the clustering stage, reusable across searches on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionStructure<T: Real> {
    pub clusters2d: Vec<DirectionCluster<T>>,
    pub clusters3d: Vec<DirectionCluster<T>>,
}

pub fn cluster_directions<T: Real>(
    segs2d: &[LineSegment2D<T>],
    segs3d: &[LineSegment3D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &ClusterConfig<T>,
    seed: u64,
) -> Result<DirectionStructure<T>, ClusterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CLUSTER_STREAM);
    let raw2d = cluster_2d_vanishing(segs2d, k, cfg, &mut rng)?;
    let clusters2d = merge_and_rank_2d(raw2d, segs2d, k, cfg)?;
    let raw3d = cluster_3d_parallel(segs3d, cfg, &mut rng)?;
    let clusters3d = merge_and_rank_3d(raw3d, segs3d, cfg)?;
    Ok(DirectionStructure { clusters2d, clusters3d })
}

/// Runs the translation search for every candidate in parallel; result order
/// follows candidate order regardless of scheduling.
pub fn search_candidates<T: Real>(
    candidates: &[RotationCandidate<T>],
    structure: &DirectionStructure<T>,
    problem: &LineProblem<'_, T>,
    cfg: &RansacConfig<T>,
    seed: u64,
) -> Vec<Result<TranslationEstimate<T>, RansacError>> {
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, cand)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            rng.set_stream(CANDIDATE_STREAM);
            let pools = SamplingPools::from_clusters(&structure.clusters2d, &structure.clusters3d, cand);
            estimate_translation(cand, problem, cfg, Some(&pools), &mut rng)
        })
        .collect()
}

/// Extra refine passes allowed after re-matching at the refined pose.
pub const MAX_REASSOCIATIONS: usize = 3;

struct Refined<T: Real> {
    pose: Pose<T>,
    correspondences: CorrespondenceSet,
    history: Vec<T>,
    outlier_rounds: usize,
    reassociations: usize,
    converged: bool,
}

/// Keeps, per image segment, the scene segment with the smallest
/// reprojection cost at `pose`.
pub fn one_per_image_segment<T: Real>(
    corrs: &[Correspondence],
    pose: &Pose<T>,
    segs2d: &[LineSegment2D<T>],
    segs3d: &[LineSegment3D<T>],
    k: &CameraIntrinsics<T>,
) -> CorrespondenceSet {
    let mut best: BTreeMap<usize, (T, usize)> = BTreeMap::new();
    for c in corrs {
        let Ok([a, b]) = line_residuals(pose, &segs2d[c.idx2d].line(), &segs3d[c.idx3d], k) else { continue };
        let cost = a * a + b * b;
        let e = best.entry(c.idx2d).or_insert((cost, c.idx3d));
        if cost < e.0 {
            *e = (cost, c.idx3d);
        }
    }
    best.into_iter().map(|(i, (_, j))| Correspondence::new(i, j)).collect()
}

/// Refines, then matches again at the refined pose (hypothesis test plus the
/// pixel threshold) and refines the new set, until the matches stop changing.
fn refine_with_reassociation<T: Real>(
    pose0: &Pose<T>,
    corrs: &[Correspondence],
    problem: &LineProblem<'_, T>,
    cfg: &RefineConfig<T>,
) -> Result<Refined<T>, RefineError> {
    let (s2, s3, k) = (problem.segs2d, problem.segs3d, &problem.intrinsics);
    let mut set = one_per_image_segment(corrs, pose0, s2, s3, k);
    let mut out = refine_pose(pose0, &set, s2, s3, k, cfg)?;
    let mut history: Vec<T> = out.cost_history.iter().flatten().copied().collect();
    let (mut rounds, mut converged, mut reassociations) = (out.outlier_rounds, out.converged, 0);
    while reassociations < MAX_REASSOCIATIONS {
        let rematched: Vec<Correspondence> = problem
            .count_inliers(&out.pose.rotation, &out.pose.translation)
            .correspondences
            .into_iter()
            .filter(|c| {
                line_residuals(&out.pose, &s2[c.idx2d].line(), &s3[c.idx3d], k)
                    .is_ok_and(|r| r.iter().all(|e| e.abs() <= cfg.outlier_px))
            })
            .collect();
        let next = one_per_image_segment(&rematched, &out.pose, s2, s3, k);
        if next == out.inliers || next == set || next.len() < 3 {
            break;
        }
        let Ok(again) = refine_pose(&out.pose, &next, s2, s3, k, cfg) else { break };
        reassociations += 1;
        history.extend(again.cost_history.iter().flatten().copied());
        rounds += again.outlier_rounds;
        converged = again.converged;
        set = next;
        out = again;
    }
    Ok(Refined { pose: out.pose, correspondences: out.inliers, history, outlier_rounds: rounds, reassociations, converged })
}

/// Estimates the pose mapping scene coordinates into the camera of `segs2d`.
pub fn register<T: Real>(
    segs2d: &[LineSegment2D<T>],
    segs3d: &[LineSegment3D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &PipelineConfig<T>,
) -> Result<Registration<T>, RegistrationError> {
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let structure = cluster_directions(segs2d, segs3d, k, &cfg.cluster, cfg.seed)?;
    timings.clustering = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let c2 = &structure.clusters2d;
    let c3 = &structure.clusters3d;
    for found in [c2.len(), c3.len()] {
        if found < 2 {
            return Err(ClusterError::FewerThanKeep { found, keep: 2 }.into());
        }
    }
    let candidates = enumerate_rotations([c2[0].direction, c2[1].direction], [c3[0].direction, c3[1].direction])?;
    timings.rotation = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let problem = LineProblem::new(segs2d, segs3d, k, &cfg.ransac);
    let results = search_candidates(&candidates, &structure, &problem, &cfg.ransac, cfg.seed);
    let selected = select_best(&results)?;
    let best = results[selected].as_ref().expect("selected result is valid");
    timings.translation = t.elapsed().as_secs_f64();

    let ransac_pose = Pose::new(candidates[selected].rotation, best.translation);
    let t = Instant::now();
    let refined = if cfg.refine_enabled {
        refine_with_reassociation(&ransac_pose, &best.inliers.correspondences, &problem, &cfg.refine)?
    } else {
        Refined {
            pose: ransac_pose,
            correspondences: best.inliers.correspondences.clone(),
            history: Vec::new(),
            outlier_rounds: 0,
            reassociations: 0,
            converged: true,
        }
    };
    timings.refinement = t.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();

    let diagnostics = Diagnostics {
        cluster_populations_2d: c2.iter().map(|c| c.population()).collect(),
        cluster_populations_3d: c3.iter().map(|c| c.population()).collect(),
        candidate_count: candidates.len(),
        candidate_scores: results.iter().map(|r| r.as_ref().map_or(0, |e| e.score())).collect(),
        selected_candidate: selected,
        ransac_score: best.score(),
        refine_cost_history: refined.history,
        outlier_rounds: refined.outlier_rounds,
        reassociations: refined.reassociations,
        converged: refined.converged,
        timings,
    };
    Ok(Registration { pose: refined.pose, correspondences: refined.correspondences, diagnostics })
}
