//! Translation and correspondence estimation by hypothesis testing.
//!
//! With the rotation fixed, a matched 2D/3D line pair constrains the
//! translation to a plane: the transformed 3D center must lie in the
//! interpretation plane of the image segment. Three pairs fix the translation;
//! each hypothesis is scored by how many image segments find a coplanar 3D
//! segment whose projection overlaps them.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::{Rng, RngExt};
use thiserror::Error;

use crate::cluster::DirectionCluster;
use crate::geom::{interpretation_plane_normal, CameraIntrinsics, LineSegment2D, LineSegment3D, UnitDirection, MIN_DEPTH};
use crate::rotation::RotationCandidate;
use crate::scalar::Real;

/// Upper bound on the Frobenius condition number of the stacked normals.
pub const MAX_CONDITION: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RansacError {
    #[error("the three interpretation-plane normals do not span 3D space")]
    DegenerateNormals,
    #[error("every sampled triple was degenerate")]
    NoValidHypothesis,
    #[error("need at least 3 usable segments per side, got {n2d} 2D and {n3d} 3D")]
    InsufficientSegments { n2d: usize, n3d: usize },
    #[error("no rotation candidate produced a scoring hypothesis")]
    AllCandidatesFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Correspondence {
    pub idx2d: usize,
    pub idx3d: usize,
}

impl Correspondence {
    pub fn new(idx2d: usize, idx3d: usize) -> Self {
        Self { idx2d, idx3d }
    }
}

pub type CorrespondenceSet = Vec<Correspondence>;

/// Angles in degrees, 2D lengths in pixels, 3D lengths in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig<T: Real> {
    /// Hypotheses drawn per rotation candidate.
    pub max_iters: usize,
    pub overlap_fraction: T,
    pub early_exit_fraction: T,
    pub coplanarity_angle: T,
    /// Maximum angle between a projected segment and its image partner.
    pub orientation_gate: T,
    pub min_2d_length: T,
    /// `None` uses 5% of the 3D bounding-box diagonal.
    pub min_3d_length: Option<T>,
    /// Draw pairs from the direction clusters matched by the rotation candidate
    /// instead of from all segments.
    pub guided_sampling: bool,
}

impl<T: Real> Default for RansacConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            overlap_fraction: T::lit(0.5),
            early_exit_fraction: T::lit(0.9),
            coplanarity_angle: T::lit(2.0),
            orientation_gate: T::lit(5.0),
            min_2d_length: T::lit(20.0),
            min_3d_length: None,
            guided_sampling: true,
        }
    }
}

/// Bounding-box diagonal of all 3D endpoints.
pub fn scene_diameter<T: Real>(segs: &[LineSegment3D<T>]) -> T {
    let mut it = segs.iter().flat_map(|s| [s.p, s.q]);
    let Some(first) = it.next() else { return T::zero() };
    let (lo, hi) = it.fold((first.coords, first.coords), |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords)));
    (hi - lo).norm()
}

/// Translation satisfying `n_i . (R P_i + t) = 0` for three segment centers.
pub fn solve_translation<T: Real>(
    rotation: &Matrix3<T>,
    triples: &[(LineSegment3D<T>, UnitDirection<T>); 3],
) -> Result<Vector3<T>, RansacError> {
    let centers = [triples[0].0.center(), triples[1].0.center(), triples[2].0.center()];
    let normals = [*triples[0].1.as_vector(), *triples[1].1.as_vector(), *triples[2].1.as_vector()];
    solve_from_points(rotation, &centers, &normals)
}

fn solve_from_points<T: Real>(
    rotation: &Matrix3<T>,
    points: &[Point3<T>; 3],
    normals: &[Vector3<T>; 3],
) -> Result<Vector3<T>, RansacError> {
    let a = Matrix3::from_rows(&[normals[0].transpose(), normals[1].transpose(), normals[2].transpose()]);
    let inv = a.try_inverse().ok_or(RansacError::DegenerateNormals)?;
    let cond = a.norm() * inv.norm();
    if !(cond < T::lit(MAX_CONDITION)) {
        return Err(RansacError::DegenerateNormals);
    }
    let b = Vector3::from_fn(|i, _| -normals[i].dot(&(rotation * points[i].coords)));
    Ok(inv * b)
}

/// Length (pixels) of the overlap between projected endpoints `proj` and `seg`,
/// measured along `seg`. Zero when the two directions differ by more than
/// `orientation_gate` degrees.
pub fn overlap_length<T: Real>(proj: [Point2<T>; 2], seg: &LineSegment2D<T>, orientation_gate: T) -> T {
    let cos_gate = T::deg_to_rad(orientation_gate).cos();
    overlap_with_gate(&proj[0], &proj[1], seg, cos_gate)
}

#[inline]
fn overlap_with_gate<T: Real>(a: &Point2<T>, b: &Point2<T>, seg: &LineSegment2D<T>, cos_gate: T) -> T {
    let axis = seg.q - seg.p;
    let len = axis.norm();
    let span = b - a;
    let span_len = span.norm();
    if !(span_len > T::zero()) || !(len > T::zero()) {
        return T::zero();
    }
    let u = axis / len;
    if (span.dot(&u) / span_len).abs() < cos_gate {
        return T::zero();
    }
    let (mut s0, mut s1) = ((a - seg.p).dot(&u), (b - seg.p).dot(&u));
    if s0 > s1 {
        std::mem::swap(&mut s0, &mut s1);
    }
    (s1.min(len) - s0.max(T::zero())).max(T::zero())
}

/// Correspondences found for one pose hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct InlierSet<T: Real> {
    pub correspondences: CorrespondenceSet,
    /// Distinct image segments with at least one match.
    pub score: usize,
    /// Mean of `|(RP+t).n| / |RP+t|` over the correspondences.
    pub mean_residual: T,
}

#[derive(Debug, Clone, Copy)]
struct Transformed<T: Real> {
    center: Vector3<T>,
    center_norm: T,
    p: Point2<T>,
    q: Point2<T>,
}

/// Segments and cached per-segment data shared by every hypothesis of one scene.
#[derive(Debug, Clone)]
pub struct LineProblem<'a, T: Real> {
    pub segs2d: &'a [LineSegment2D<T>],
    pub segs3d: &'a [LineSegment3D<T>],
    pub intrinsics: CameraIntrinsics<T>,
    active2d: Vec<usize>,
    active3d: Vec<usize>,
    normals: Vec<Option<Vector3<T>>>,
    lengths2d: Vec<T>,
    centers: Vec<Point3<T>>,
    sin_coplanar: T,
    cos_gate: T,
    overlap_fraction: T,
}

impl<'a, T: Real> LineProblem<'a, T> {
    /// Drops segments shorter than the configured minimum lengths.
    pub fn new(
        segs2d: &'a [LineSegment2D<T>],
        segs3d: &'a [LineSegment3D<T>],
        intrinsics: &CameraIntrinsics<T>,
        cfg: &RansacConfig<T>,
    ) -> Self {
        let normals: Vec<_> = segs2d
            .iter()
            .map(|s| interpretation_plane_normal(intrinsics, s).ok().map(|n| *n.as_vector()))
            .collect();
        let lengths2d: Vec<T> = segs2d.iter().map(|s| s.length()).collect();
        let active2d = (0..segs2d.len())
            .filter(|&i| normals[i].is_some() && lengths2d[i] >= cfg.min_2d_length)
            .collect();
        let min3d = cfg.min_3d_length.unwrap_or_else(|| T::lit(0.05) * scene_diameter(segs3d));
        let active3d = (0..segs3d.len()).filter(|&j| segs3d[j].length() >= min3d).collect();
        Self {
            segs2d,
            segs3d,
            intrinsics: *intrinsics,
            active2d,
            active3d,
            normals,
            lengths2d,
            centers: segs3d.iter().map(|s| s.center()).collect(),
            sin_coplanar: T::deg_to_rad(cfg.coplanarity_angle).sin(),
            cos_gate: T::deg_to_rad(cfg.orientation_gate).cos(),
            overlap_fraction: cfg.overlap_fraction,
        }
    }

    /// Image segments that survived filtering.
    pub fn active_2d(&self) -> &[usize] {
        &self.active2d
    }

    /// 3D segments that survived filtering.
    pub fn active_3d(&self) -> &[usize] {
        &self.active3d
    }

    pub fn is_active_2d(&self, i: usize) -> bool {
        self.active2d.binary_search(&i).is_ok()
    }

    pub fn is_active_3d(&self, j: usize) -> bool {
        self.active3d.binary_search(&j).is_ok()
    }

    /// Interpretation-plane normal of image segment `i`, if it has one.
    pub fn normal(&self, i: usize) -> Option<Vector3<T>> {
        self.normals[i]
    }

    fn transform(&self, rotation: &Matrix3<T>, t: &Vector3<T>, j: usize) -> Option<Transformed<T>> {
        let seg = &self.segs3d[j];
        let pc = rotation * seg.p.coords + t;
        let qc = rotation * seg.q.coords + t;
        let min = T::lit(MIN_DEPTH);
        if pc.z <= min || qc.z <= min {
            return None;
        }
        let center = rotation * self.centers[j].coords + t;
        Some(Transformed {
            center,
            center_norm: center.norm(),
            p: self.intrinsics.project_unchecked(&pc),
            q: self.intrinsics.project_unchecked(&qc),
        })
    }

    #[inline]
    fn coplanar_residual(&self, i: usize, tr: &Transformed<T>) -> T {
        let n = self.normals[i].expect("active segment has a normal");
        tr.center.dot(&n).abs() / tr.center_norm
    }

    #[inline]
    fn overlaps(&self, i: usize, tr: &Transformed<T>) -> bool {
        overlap_with_gate(&tr.p, &tr.q, &self.segs2d[i], self.cos_gate) > self.overlap_fraction * self.lengths2d[i]
    }

    /// Full coplanarity + overlap test for a single pair at a given pose.
    pub fn is_inlier(&self, rotation: &Matrix3<T>, t: &Vector3<T>, c: Correspondence) -> bool {
        if !self.is_active_2d(c.idx2d) || !self.is_active_3d(c.idx3d) {
            return false;
        }
        match self.transform(rotation, t, c.idx3d) {
            Some(tr) => self.coplanar_residual(c.idx2d, &tr) < self.sin_coplanar && self.overlaps(c.idx2d, &tr),
            None => false,
        }
    }

    /// Scores one pose hypothesis.
    pub fn count_inliers(&self, rotation: &Matrix3<T>, t: &Vector3<T>) -> InlierSet<T> {
        let transformed: Vec<(usize, Transformed<T>)> = self
            .active3d
            .iter()
            .filter_map(|&j| self.transform(rotation, t, j).map(|tr| (j, tr)))
            .collect();
        let mut correspondences = Vec::new();
        let mut score = 0;
        let mut residual_sum = T::zero();
        for &i in &self.active2d {
            let mut matched = false;
            for (j, tr) in &transformed {
                let r = self.coplanar_residual(i, tr);
                if r < self.sin_coplanar && self.overlaps(i, tr) {
                    correspondences.push(Correspondence::new(i, *j));
                    residual_sum += r;
                    matched = true;
                }
            }
            score += matched as usize;
        }
        let mean_residual = if correspondences.is_empty() {
            T::zero()
        } else {
            residual_sum / T::from_usize(correspondences.len()).expect("count fits")
        };
        InlierSet { correspondences, score, mean_residual }
    }

    /// Least-squares translation over `corrs` at rotation `R`: both endpoints of
    /// each matched segment on its interpretation plane, residuals scaled to
    /// angles at the current `t`. Uses one match per image segment, the one
    /// with the smallest coplanarity residual.
    pub fn refit_translation(&self, rotation: &Matrix3<T>, t: &Vector3<T>, corrs: &[Correspondence]) -> Option<Vector3<T>> {
        let mut chosen: Vec<(usize, usize, T)> = Vec::new();
        for c in corrs {
            let Some(tr) = self.transform(rotation, t, c.idx3d) else { continue };
            let r = self.coplanar_residual(c.idx2d, &tr);
            match chosen.last_mut() {
                Some(last) if last.0 == c.idx2d => {
                    if r < last.2 {
                        *last = (c.idx2d, c.idx3d, r);
                    }
                }
                _ => chosen.push((c.idx2d, c.idx3d, r)),
            }
        }
        if chosen.len() < 3 {
            return None;
        }
        let mut ata = Matrix3::zeros();
        let mut atb = Vector3::zeros();
        for &(i, j, _) in &chosen {
            let n = self.normals[i].expect("active segment has a normal");
            let seg = &self.segs3d[j];
            for p in [seg.p, seg.q] {
                let rp = rotation * p.coords;
                let w = T::one() / (rp + t).norm_squared();
                ata += n * n.transpose() * w;
                atb -= n * (n.dot(&rp) * w);
            }
        }
        let inv = ata.try_inverse()?;
        if !(ata.norm() * inv.norm() < T::lit(MAX_CONDITION)) {
            return None;
        }
        Some(inv * atb)
    }

    /// Whether every pair of a minimal sample is itself an overlapping match at `t`.
    fn sample_consistent(&self, rotation: &Matrix3<T>, t: &Vector3<T>, pairs: &[(usize, usize); 3]) -> bool {
        pairs.iter().all(|&(i, j)| self.transform(rotation, t, j).is_some_and(|tr| self.overlaps(i, &tr)))
    }
}

/// Scores a pose against raw segment lists; see [`LineProblem::count_inliers`].
pub fn count_inliers<T: Real>(
    rotation: &Matrix3<T>,
    t: &Vector3<T>,
    segs2d: &[LineSegment2D<T>],
    segs3d: &[LineSegment3D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &RansacConfig<T>,
) -> InlierSet<T> {
    LineProblem::new(segs2d, segs3d, k, cfg).count_inliers(rotation, t)
}

/// Segment pools matched by a rotation candidate: `families[f]` holds the
/// image members of one vanishing cluster and the 3D members of the
/// orientation cluster assigned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPools {
    pub families: [(Vec<usize>, Vec<usize>); 2],
}

impl SamplingPools {
    pub fn from_clusters<T: Real>(
        clusters2d: &[DirectionCluster<T>],
        clusters3d: &[DirectionCluster<T>],
        candidate: &RotationCandidate<T>,
    ) -> Self {
        let fam = |i: usize| {
            let j = candidate.assignment.partner(i);
            (clusters2d[i].members.clone(), clusters3d[j].members.clone())
        };
        Self { families: [fam(0), fam(1)] }
    }

    fn restricted<T: Real>(&self, problem: &LineProblem<'_, T>) -> Self {
        let keep = |(a, b): &(Vec<usize>, Vec<usize>)| {
            (
                a.iter().copied().filter(|&i| problem.is_active_2d(i)).collect(),
                b.iter().copied().filter(|&j| problem.is_active_3d(j)).collect(),
            )
        };
        Self { families: [keep(&self.families[0]), keep(&self.families[1])] }
    }
}

/// Best hypothesis found for one rotation candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationEstimate<T: Real> {
    pub translation: Vector3<T>,
    pub inliers: InlierSet<T>,
    /// Hypotheses drawn, including degenerate and rejected ones.
    pub iterations: usize,
    /// Hypotheses that reached full scoring.
    pub scored: usize,
    pub early_exit: bool,
}

impl<T: Real> TranslationEstimate<T> {
    pub fn score(&self) -> usize {
        self.inliers.score
    }
}

/// Picks `k` distinct entries of `pool`.
fn pick_distinct<R: Rng + ?Sized, const K: usize>(pool: &[usize], rng: &mut R) -> [usize; K] {
    let mut out = [0usize; K];
    let mut n = 0;
    while n < K {
        let v = pool[rng.random_range(0..pool.len())];
        if !out[..n].contains(&v) {
            out[n] = v;
            n += 1;
        }
    }
    out
}

enum Sampler {
    Uniform,
    /// Two pairs from `families[double]`, one from the other family.
    Guided { pools: SamplingPools, doubles: Vec<usize> },
}

impl Sampler {
    fn new<T: Real>(problem: &LineProblem<'_, T>, pools: Option<&SamplingPools>) -> Self {
        let Some(pools) = pools else { return Sampler::Uniform };
        let pools = pools.restricted(problem);
        let f = &pools.families;
        let doubles: Vec<usize> = (0..2)
            .filter(|&d| {
                let o = 1 - d;
                f[d].0.len() >= 2 && f[d].1.len() >= 2 && !f[o].0.is_empty() && !f[o].1.is_empty()
            })
            .collect();
        if doubles.is_empty() {
            Sampler::Uniform
        } else {
            Sampler::Guided { pools, doubles }
        }
    }

    fn draw<T: Real, R: Rng + ?Sized>(&self, problem: &LineProblem<'_, T>, rng: &mut R) -> [(usize, usize); 3] {
        match self {
            Sampler::Uniform => {
                let a3: [usize; 3] = pick_distinct(problem.active_2d(), rng);
                let pool3 = problem.active_3d();
                a3.map(|i| (i, pool3[rng.random_range(0..pool3.len())]))
            }
            Sampler::Guided { pools, doubles } => {
                let d = doubles[rng.random_range(0..doubles.len())];
                let (dbl, single) = (&pools.families[d], &pools.families[1 - d]);
                let [i0, i1] = pick_distinct::<_, 2>(&dbl.0, rng);
                let [j0, j1] = pick_distinct::<_, 2>(&dbl.1, rng);
                let i2 = single.0[rng.random_range(0..single.0.len())];
                let j2 = single.1[rng.random_range(0..single.1.len())];
                [(i0, j0), (i1, j1), (i2, j2)]
            }
        }
    }
}

const LOCAL_OPT_ROUNDS: usize = 5;

/// Re-estimates `t` from its inliers while the score (then the mean residual)
/// improves.
fn local_optimization<T: Real>(
    problem: &LineProblem<'_, T>,
    rotation: &Matrix3<T>,
    mut t: Vector3<T>,
    mut inliers: InlierSet<T>,
) -> (Vector3<T>, InlierSet<T>) {
    for _ in 0..LOCAL_OPT_ROUNDS {
        let Some(t2) = problem.refit_translation(rotation, &t, &inliers.correspondences) else { break };
        let next = problem.count_inliers(rotation, &t2);
        let better = next.score > inliers.score || (next.score == inliers.score && next.mean_residual < inliers.mean_residual);
        if !better {
            break;
        }
        t = t2;
        inliers = next;
    }
    (t, inliers)
}

/// Hypothesis-tests translations for one rotation.
pub fn estimate_translation<T: Real, R: Rng + ?Sized>(
    candidate: &RotationCandidate<T>,
    problem: &LineProblem<'_, T>,
    cfg: &RansacConfig<T>,
    pools: Option<&SamplingPools>,
    rng: &mut R,
) -> Result<TranslationEstimate<T>, RansacError> {
    estimate_translation_audited(candidate, problem, cfg, pools, rng, None)
}

/// [`estimate_translation`], optionally recording the score of every fully
/// scored hypothesis in `audit`.
pub fn estimate_translation_audited<T: Real, R: Rng + ?Sized>(
    candidate: &RotationCandidate<T>,
    problem: &LineProblem<'_, T>,
    cfg: &RansacConfig<T>,
    pools: Option<&SamplingPools>,
    rng: &mut R,
    mut audit: Option<&mut Vec<usize>>,
) -> Result<TranslationEstimate<T>, RansacError> {
    let (n2d, n3d) = (problem.active_2d().len(), problem.active_3d().len());
    if n2d < 3 || n3d < 3 {
        return Err(RansacError::InsufficientSegments { n2d, n3d });
    }
    let sampler = if cfg.guided_sampling { Sampler::new(problem, pools) } else { Sampler::Uniform };
    let rotation = &candidate.rotation;
    let exit_score = cfg.early_exit_fraction * T::from_usize(n2d).expect("count fits");

    let mut best: Option<(Vector3<T>, InlierSet<T>)> = None;
    let mut first_solution: Option<Vector3<T>> = None;
    let (mut iterations, mut scored, mut early_exit) = (0, 0, false);
    while iterations < cfg.max_iters {
        iterations += 1;
        let pairs = sampler.draw(problem, rng);
        let points = pairs.map(|(_, j)| problem.centers[j]);
        let normals = pairs.map(|(i, _)| problem.normal(i).expect("active segment has a normal"));
        let Ok(t) = solve_from_points(rotation, &points, &normals) else { continue };
        first_solution.get_or_insert(t);
        if !problem.sample_consistent(rotation, &t, &pairs) {
            continue;
        }
        let inliers = problem.count_inliers(rotation, &t);
        scored += 1;
        if let Some(a) = audit.as_deref_mut() {
            a.push(inliers.score);
        }
        if best.as_ref().is_none_or(|(_, b)| inliers.score > b.score) {
            let (t, inliers) = local_optimization(problem, rotation, t, inliers);
            let reached = T::from_usize(inliers.score).expect("count fits") > exit_score;
            best = Some((t, inliers));
            if reached {
                early_exit = true;
                break;
            }
        }
    }
    let (translation, inliers) = match best {
        Some(b) => b,
        None => {
            let t = first_solution.ok_or(RansacError::NoValidHypothesis)?;
            (t, InlierSet { correspondences: Vec::new(), score: 0, mean_residual: T::zero() })
        }
    };
    Ok(TranslationEstimate { translation, inliers, iterations, scored, early_exit })
}

/// Index of the highest-scoring estimate; ties go to the smaller mean
/// coplanarity residual, then the lower index.
pub fn select_best<T: Real>(results: &[Result<TranslationEstimate<T>, RansacError>]) -> Result<usize, RansacError> {
    let mut best: Option<(usize, &TranslationEstimate<T>)> = None;
    for (idx, r) in results.iter().enumerate() {
        let Ok(est) = r else { continue };
        if est.score() == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                est.score() > b.score() || (est.score() == b.score() && est.inliers.mean_residual < b.inliers.mean_residual)
            }
        };
        if better {
            best = Some((idx, est));
        }
    }
    best.map(|(i, _)| i).ok_or(RansacError::AllCandidatesFailed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project_point, Pose};
    use crate::rotation::Assignment;
    use nalgebra::{Rotation3, Unit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap()
    }

    fn candidate(rotation: Matrix3<f64>) -> RotationCandidate<f64> {
        RotationCandidate { rotation, assignment: Assignment { swapped: false, negated: [false, false] } }
    }

    fn rv(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
        let axis = Unit::new_normalize(rv(rng, 1.0));
        let r = *Rotation3::from_axis_angle(&axis, rng.random_range(0.0..3.0)).matrix();
        // Camera 4-6 units from a scene around the origin, looking roughly at it.
        let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(4.0..6.0));
        Pose::new(r, t)
    }

    /// Random scene segments and their exact projections under `pose`.
    fn scene(rng: &mut ChaCha8Rng, pose: &Pose<f64>, n: usize) -> (Vec<LineSegment2D<f64>>, Vec<LineSegment3D<f64>>) {
        let mut s2 = Vec::new();
        let mut s3 = Vec::new();
        while s3.len() < n {
            let c = rv(rng, 1.0);
            let d = rv(rng, 1.0).normalize() * rng.random_range(0.2..0.4);
            let seg = LineSegment3D::new(Point3::from(c - d), Point3::from(c + d)).unwrap();
            let (Ok(p), Ok(q)) = (project_point(&k(), pose, &seg.p), project_point(&k(), pose, &seg.q)) else { continue };
            let Ok(s) = LineSegment2D::new(p, q) else { continue };
            if s.length() < 25.0 {
                continue;
            }
            s2.push(s);
            s3.push(seg);
        }
        (s2, s3)
    }

    fn normal(s: &LineSegment2D<f64>) -> UnitDirection<f64> {
        interpretation_plane_normal(&k(), s).unwrap()
    }

    #[test]
    fn exact_triples_recover_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut solved = 0;
        while solved < 200 {
            let pose = random_pose(&mut rng);
            let (s2, s3) = scene(&mut rng, &pose, 3);
            let triples = [(s3[0], normal(&s2[0])), (s3[1], normal(&s2[1])), (s3[2], normal(&s2[2]))];
            let Ok(t) = solve_translation(&pose.rotation, &triples) else { continue };
            solved += 1;
            assert!((t - pose.translation).norm() < 1e-9, "{t} vs {}", pose.translation);
            for (seg, n) in &triples {
                assert!(n.as_vector().dot(&pose.transform(&seg.center())).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_pose_gives_zero_translation() {
        let segs3: Vec<_> = [
            ([0.0, 0.0, 5.0], [1.0, 0.0, 5.0]),
            ([0.0, 0.0, 4.0], [0.0, 1.0, 5.0]),
            ([-1.0, 1.0, 6.0], [0.0, 2.0, 6.0]),
        ]
        .iter()
        .map(|(a, b)| LineSegment3D::new(Point3::from(*a), Point3::from(*b)).unwrap())
        .collect();
        let id = Pose::identity();
        let triples = [0, 1, 2].map(|i| {
            let s = &segs3[i];
            let s2 = LineSegment2D::new(project_point(&k(), &id, &s.p).unwrap(), project_point(&k(), &id, &s.q).unwrap()).unwrap();
            (*s, normal(&s2))
        });
        let t = solve_translation(&Matrix3::identity(), &triples).unwrap();
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn coplanar_normals_are_degenerate() {
        // Horizontal image lines: all interpretation planes contain the x axis.
        let triples = [100.0, 200.0, 300.0].map(|y| {
            let s2 = LineSegment2D::from_coords(100.0, y, 500.0, y).unwrap();
            let s3 = LineSegment3D::new(Point3::new(-1.0, y / 100.0, 5.0), Point3::new(1.0, y / 100.0, 5.0)).unwrap();
            (s3, normal(&s2))
        });
        assert_eq!(solve_translation(&Matrix3::identity(), &triples), Err(RansacError::DegenerateNormals));
    }

    #[test]
    fn overlap_examples() {
        let seg = LineSegment2D::<f64>::from_coords(0.0, 0.0, 100.0, 0.0).unwrap();
        assert_eq!(overlap_length([seg.p, seg.q], &seg, 5.0), 100.0);
        assert_eq!(overlap_length([seg.q, seg.p], &seg, 5.0), 100.0);
        let proj = [Point2::new(50.0, 1.0), Point2::new(150.0, 1.0)];
        assert!((overlap_length(proj, &seg, 5.0) - 50.0).abs() < 1e-12);
        let disjoint = [Point2::new(120.0, 0.0), Point2::new(180.0, 0.0)];
        assert_eq!(overlap_length(disjoint, &seg, 5.0), 0.0);
        let perpendicular = [Point2::new(50.0, -50.0), Point2::new(50.0, 50.0)];
        assert_eq!(overlap_length(perpendicular, &seg, 5.0), 0.0);
        let tilted = [Point2::new(0.0, 0.0), Point2::new(100.0, 100.0 * 4f64.to_radians().tan())];
        assert!(overlap_length(tilted, &seg, 5.0) > 99.0);
        let point = [Point2::new(10.0, 0.0), Point2::new(10.0, 0.0)];
        assert_eq!(overlap_length(point, &seg, 5.0), 0.0);
    }

    #[test]
    fn ground_truth_pose_matches_every_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let (s2, s3) = scene(&mut rng, &pose, 30);
        let cfg = RansacConfig { min_3d_length: Some(0.0), ..RansacConfig::default() };
        let set = count_inliers(&pose.rotation, &pose.translation, &s2, &s3, &k(), &cfg);
        for i in 0..s2.len() {
            assert!(set.correspondences.contains(&Correspondence::new(i, i)));
        }
        assert_eq!(set.score, s2.len());
        assert!(set.correspondences.len() >= s2.len());
    }

    #[test]
    fn distant_camera_matches_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = random_pose(&mut rng);
        let (s2, s3) = scene(&mut rng, &pose, 30);
        let far = pose.translation + Vector3::new(0.0, 0.0, 1000.0 * scene_diameter(&s3));
        let set = count_inliers(&pose.rotation, &far, &s2, &s3, &k(), &RansacConfig::default());
        assert!(set.score <= 1, "{} inliers", set.score);
        let empty = count_inliers(&pose.rotation, &pose.translation, &s2, &[], &k(), &RansacConfig::default());
        assert!(empty.correspondences.is_empty());
    }

    #[test]
    fn short_segments_never_matched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let (s2, s3) = scene(&mut rng, &pose, 30);
        let cfg = RansacConfig { min_2d_length: 60.0, min_3d_length: Some(0.5), ..RansacConfig::default() };
        let set = count_inliers(&pose.rotation, &pose.translation, &s2, &s3, &k(), &cfg);
        assert!(!set.correspondences.is_empty());
        for c in &set.correspondences {
            assert!(s2[c.idx2d].length() >= 60.0);
            assert!(s3[c.idx3d].length() >= 0.5);
        }
    }

    #[test]
    fn uniform_sampling_finds_small_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = random_pose(&mut rng);
        let (s2, s3) = scene(&mut rng, &pose, 8);
        let cfg = RansacConfig { guided_sampling: false, min_3d_length: Some(0.0), ..RansacConfig::default() };
        let problem = LineProblem::new(&s2, &s3, &k(), &cfg);
        let mut audit = Vec::new();
        let est = estimate_translation_audited(&candidate(pose.rotation), &problem, &cfg, None, &mut rng, Some(&mut audit)).unwrap();
        assert!(est.early_exit);
        assert!((est.translation - pose.translation).norm() < 1e-6);
        assert!(audit.iter().all(|&s| s <= est.score()));
        for c in &est.inliers.correspondences {
            assert!(problem.is_inlier(&pose.rotation, &est.translation, *c));
        }
    }

    #[test]
    fn estimation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pose = random_pose(&mut rng);
        let (s2, s3) = scene(&mut rng, &pose, 10);
        let cfg = RansacConfig { guided_sampling: false, max_iters: 3000, ..RansacConfig::default() };
        let problem = LineProblem::new(&s2, &s3, &k(), &cfg);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            estimate_translation(&candidate(pose.rotation), &problem, &cfg, None, &mut rng).unwrap()
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn insufficient_after_filtering() {
        let s2 = vec![LineSegment2D::from_coords(0.0, 0.0, 5.0, 0.0).unwrap(); 5];
        let s3 = vec![LineSegment3D::new(Point3::origin(), Point3::new(1.0, 0.0, 0.0)).unwrap(); 5];
        let cfg = RansacConfig::default();
        let problem = LineProblem::new(&s2, &s3, &k(), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            estimate_translation(&candidate(Matrix3::identity()), &problem, &cfg, None, &mut rng),
            Err(RansacError::InsufficientSegments { n2d: 0, n3d: 5 })
        );
    }

    fn est(score: usize, residual: f64) -> Result<TranslationEstimate<f64>, RansacError> {
        Ok(TranslationEstimate {
            translation: Vector3::zeros(),
            inliers: InlierSet { correspondences: Vec::new(), score, mean_residual: residual },
            iterations: 1,
            scored: 1,
            early_exit: false,
        })
    }

    #[test]
    fn select_best_argmax_and_ties() {
        let results: Vec<_> = [3, 120, 7, 5, 2, 0, 4, 1].iter().map(|&s| est(s, 0.0)).collect();
        assert_eq!(select_best(&results), Ok(1));
        let tied = vec![est(5, 0.02), est(5, 0.01), est(5, 0.01), Err(RansacError::NoValidHypothesis)];
        assert_eq!(select_best(&tied), Ok(1));
        let zeros: Vec<_> = (0..8).map(|_| est(0, 0.0)).collect();
        assert_eq!(select_best(&zeros), Err(RansacError::AllCandidatesFailed));
    }
}
