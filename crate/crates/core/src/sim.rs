//! Monte Carlo harness: random scenes of parallel line families seen by a
//! random camera, the registration pipeline and a full six-pair RANSAC
//! baseline run on identical scenes, and aggregate statistics.

use std::time::Instant;

use nalgebra::{Matrix3, Point2, Point3, SMatrix, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{
    orthonormalize_rotation, project_point, rotation_geodesic_error, CameraIntrinsics, LineSegment2D, LineSegment3D,
    Pose, UnitDirection,
};
use crate::pipeline::{register, PipelineConfig};
use crate::refine::refine_pose;
use crate::translation::{Correspondence, LineProblem, RansacConfig};

/// Minimum angle (degrees) between any two family directions.
pub const MIN_FAMILY_SEPARATION_DEG: f64 = 30.0;
/// Scenes with fewer projected family lines are redrawn.
pub const MIN_VISIBLE_LINES: usize = 10;
pub const SUCCESS_ROTATION_RAD: f64 = 0.1;
pub const SUCCESS_TRANSLATION_REL: f64 = 0.1;

const SCENE_STREAM: u64 = 0;
const BASELINE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("{name} must lie in [0, 1), got {value}")]
    FractionOutOfRange { name: &'static str, value: f64 },
    #[error("n_lines must be at least {MIN_VISIBLE_LINES}, got {0}")]
    TooFewLines(usize),
    #[error("n_families must be at least 2, got {0}")]
    TooFewFamilies(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("campaign sweep has no values")]
    EmptySweep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Total 3D line count, outliers included.
    pub n_lines: usize,
    pub n_families: usize,
    /// Share of the 3D set that belongs to no family.
    pub outlier_frac_3d: f64,
    /// Share of the 2D set that is spurious.
    pub outlier_frac_2d: f64,
    /// Share of family lines left out of the image.
    pub occlusion_frac: f64,
    pub noise_sigma: f64,
    pub image_w: f64,
    pub image_h: f64,
    pub f: f64,
    pub scene_box: f64,
    pub n_trials: usize,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_lines: 60,
            n_families: 2,
            outlier_frac_3d: 0.0,
            outlier_frac_2d: 0.0,
            occlusion_frac: 0.0,
            noise_sigma: 2.0,
            image_w: 640.0,
            image_h: 480.0,
            f: 800.0,
            scene_box: 1.0,
            n_trials: 50,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("outlier_frac_3d", self.outlier_frac_3d),
            ("outlier_frac_2d", self.outlier_frac_2d),
            ("occlusion_frac", self.occlusion_frac),
        ] {
            if !(0.0..1.0).contains(&value) {
                return Err(SimError::FractionOutOfRange { name, value });
            }
        }
        if self.n_lines < MIN_VISIBLE_LINES {
            return Err(SimError::TooFewLines(self.n_lines));
        }
        if self.n_families < 2 {
            return Err(SimError::TooFewFamilies(self.n_families));
        }
        for (name, value) in [("image_w", self.image_w), ("image_h", self.image_h), ("f", self.f), ("scene_box", self.scene_box)] {
            if !(value > 0.0) {
                return Err(SimError::NonPositive { name, value });
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SimError::NonPositive { name: "noise_sigma", value: self.noise_sigma });
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(self.f, self.f, self.image_w / 2.0, self.image_h / 2.0).expect("validated focal length")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub segs2d: Vec<LineSegment2D<f64>>,
    pub segs3d: Vec<LineSegment3D<f64>>,
    pub intrinsics: CameraIntrinsics<f64>,
    pub gt: Pose<f64>,
    /// True matches, sorted by 2D index.
    pub pairing: Vec<Correspondence>,
    pub family_directions: Vec<UnitDirection<f64>>,
    pub scene_box: f64,
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

fn random_family_directions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let min_cos = MIN_FAMILY_SEPARATION_DEG.to_radians().cos();
    loop {
        let dirs: Vec<_> = (0..n).map(|_| random_unit(rng)).collect();
        let separated = (0..n).all(|a| (a + 1..n).all(|b| dirs[a].dot(&dirs[b]).abs() < min_cos));
        if separated {
            return dirs;
        }
    }
}

fn random_segment_3d<R: Rng + ?Sized>(dir: &Vector3<f64>, half: f64, rng: &mut R) -> LineSegment3D<f64> {
    let c = Vector3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half));
    let d = dir * (rng.random_range(0.2..0.8) * half / 2.0);
    LineSegment3D::new(Point3::from(c - d), Point3::from(c + d)).expect("positive length")
}

/// Camera at distance 3 to 5 half-extents looking at the origin, random roll.
fn random_look_at_pose<R: Rng + ?Sized>(half: f64, rng: &mut R) -> Pose<f64> {
    let center = random_unit(rng) * (rng.random_range(3.0..5.0) * half);
    let z = (-center).normalize();
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = z.cross(&helper).normalize();
    let y0 = z.cross(&x0);
    let roll = rng.random_range(0.0..std::f64::consts::TAU);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::new(rotation, -(rotation * center))
}

/// Liang-Barsky clipping of `p`-`q` to `[0, w] x [0, h]`.
pub fn clip_to_image(p: Point2<f64>, q: Point2<f64>, w: f64, h: f64) -> Option<(Point2<f64>, Point2<f64>)> {
    let d = q - p;
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (den, num) in [(-d.x, p.x), (d.x, w - p.x), (-d.y, p.y), (d.y, h - p.y)] {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
            continue;
        }
        let r = num / den;
        if den < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
        if t0 > t1 {
            return None;
        }
    }
    Some((p + d * t0, p + d * t1))
}

/// Projected, clipped image of `seg`; `None` if it leaves no visible part.
fn image_of(seg: &LineSegment3D<f64>, pose: &Pose<f64>, k: &CameraIntrinsics<f64>, cfg: &SimConfig) -> Option<LineSegment2D<f64>> {
    let p = project_point(k, pose, &seg.p).ok()?;
    let q = project_point(k, pose, &seg.q).ok()?;
    let (a, b) = clip_to_image(p, q, cfg.image_w, cfg.image_h)?;
    if (b - a).norm() < 1.0 {
        return None;
    }
    LineSegment2D::new(a, b).ok()
}

fn jitter<R: Rng + ?Sized>(seg: &LineSegment2D<f64>, sigma: f64, rng: &mut R) -> LineSegment2D<f64> {
    if sigma == 0.0 {
        return *seg;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let mut j = |p: Point2<f64>| Point2::new(p.x + n.sample(rng), p.y + n.sample(rng));
        if let Ok(s) = LineSegment2D::new(j(seg.p), j(seg.q)) {
            return s;
        }
    }
}

fn random_image_segment<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> LineSegment2D<f64> {
    loop {
        let c = Point2::new(rng.random_range(0.0..cfg.image_w), rng.random_range(0.0..cfg.image_h));
        let a = rng.random_range(0.0..std::f64::consts::PI);
        let d = nalgebra::Vector2::new(a.cos(), a.sin()) * (rng.random_range(30.0..150.0) / 2.0);
        if let Some((p, q)) = clip_to_image(c - d, c + d, cfg.image_w, cfg.image_h) {
            if let Ok(s) = LineSegment2D::new(p, q) {
                if s.length() >= 1.0 {
                    return s;
                }
            }
        }
    }
}

/// Draws a scene; redraws until at least [`MIN_VISIBLE_LINES`] family lines
/// project into the image.
pub fn generate_scene<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Scene, SimError> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let half = cfg.scene_box;
    let n_out3d = (cfg.n_lines as f64 * cfg.outlier_frac_3d).round() as usize;
    let n_in = cfg.n_lines - n_out3d;
    let n_occluded = (n_in as f64 * cfg.occlusion_frac).round() as usize;
    loop {
        let families = random_family_directions(cfg.n_families, rng);
        let inliers: Vec<_> = (0..n_in).map(|i| random_segment_3d(&families[i % cfg.n_families], half, rng)).collect();
        let outliers: Vec<_> = (0..n_out3d).map(|_| random_segment_3d(&random_unit(rng), half, rng)).collect();
        let gt = random_look_at_pose(half, rng);

        let mut hidden = vec![false; n_in];
        let mut order: Vec<usize> = (0..n_in).collect();
        order.shuffle(rng);
        for &i in order.iter().take(n_occluded) {
            hidden[i] = true;
        }
        let mut images: Vec<(LineSegment2D<f64>, Option<usize>)> = Vec::new();
        for (i, seg) in inliers.iter().enumerate() {
            if hidden[i] {
                continue;
            }
            if let Some(img) = image_of(seg, &gt, &k, cfg) {
                images.push((jitter(&img, cfg.noise_sigma, rng), Some(i)));
            }
        }
        if images.len() < MIN_VISIBLE_LINES {
            continue;
        }
        let f2 = cfg.outlier_frac_2d;
        let n_out2d = (images.len() as f64 * f2 / (1.0 - f2)).round() as usize;
        for _ in 0..n_out2d {
            images.push((random_image_segment(cfg, rng), None));
        }

        let mut segs3d: Vec<(LineSegment3D<f64>, Option<usize>)> =
            inliers.into_iter().enumerate().map(|(i, s)| (s, Some(i))).chain(outliers.into_iter().map(|s| (s, None))).collect();
        segs3d.shuffle(rng);
        images.shuffle(rng);
        let mut position3d = vec![0; n_in];
        for (j, (_, src)) in segs3d.iter().enumerate() {
            if let Some(i) = src {
                position3d[*i] = j;
            }
        }
        let pairing = images
            .iter()
            .enumerate()
            .filter_map(|(i, (_, src))| src.map(|s| Correspondence::new(i, position3d[s])))
            .collect();
        return Ok(Scene {
            segs2d: images.into_iter().map(|(s, _)| s).collect(),
            segs3d: segs3d.into_iter().map(|(s, _)| s).collect(),
            intrinsics: k,
            gt,
            pairing,
            family_directions: families.into_iter().map(|d| UnitDirection::new(d).expect("unit")).collect(),
            scene_box: half,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Geodesic rotation error, radians; `PI` when no pose was produced.
    pub r_e: f64,
    pub t_rel: f64,
    pub t_abs: f64,
    pub success: bool,
    pub runtime: f64,
    pub n_correspondences: usize,
    pub error: Option<String>,
}

pub fn is_success(r_e: f64, t_rel: f64) -> bool {
    r_e < SUCCESS_ROTATION_RAD && t_rel < SUCCESS_TRANSLATION_REL
}

impl TrialResult {
    pub fn from_pose(pose: &Pose<f64>, scene: &Scene, runtime: f64, n_correspondences: usize) -> Self {
        let r_e = rotation_geodesic_error(&pose.rotation, &scene.gt.rotation);
        let t_abs = (pose.translation - scene.gt.translation).norm();
        let gt_norm = scene.gt.translation.norm();
        let t_rel = if gt_norm < 1e-9 { t_abs / scene.scene_box } else { t_abs / gt_norm };
        Self { r_e, t_rel, t_abs, success: is_success(r_e, t_rel), runtime, n_correspondences, error: None }
    }

    pub fn failure(error: String, runtime: f64) -> Self {
        Self {
            r_e: std::f64::consts::PI,
            t_rel: f64::INFINITY,
            t_abs: f64::INFINITY,
            success: false,
            runtime,
            n_correspondences: 0,
            error: Some(error),
        }
    }

    pub fn produced_pose(&self) -> bool {
        self.error.is_none()
    }
}

/// Registers `scene` and scores the result against its ground truth.
pub fn run_pipeline(scene: &Scene, cfg: &PipelineConfig<f64>) -> TrialResult {
    let start = Instant::now();
    let out = register(&scene.segs2d, &scene.segs3d, &scene.intrinsics, cfg);
    let runtime = start.elapsed().as_secs_f64();
    match out {
        Ok(reg) => TrialResult::from_pose(&reg.pose, scene, runtime, reg.correspondences.len()),
        Err(e) => TrialResult::failure(e.to_string(), runtime),
    }
}

/// Linear pose from six pairs: both endpoints of each 3D segment must lie on
/// the plane of its image line, one equation each in the twelve unknowns of
/// `[R | t]`.
pub fn solve_six_pairs(normals: &[Vector3<f64>; 6], segs: &[LineSegment3D<f64>; 6]) -> Option<Pose<f64>> {
    let mut a = SMatrix::<f64, 12, 12>::zeros();
    for (k, (n, s)) in normals.iter().zip(segs).enumerate() {
        for (e, p) in [s.p, s.q].iter().enumerate() {
            let row = 2 * k + e;
            for i in 0..3 {
                for j in 0..3 {
                    a[(row, 3 * i + j)] = n[i] * p[j];
                }
                a[(row, 9 + i)] = n[i];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let imin = svd.singular_values.imin();
    let x = v_t.row(imin).transpose();
    let mut r = Matrix3::from_row_slice(&x.as_slice()[..9]);
    let mut t = Vector3::new(x[9], x[10], x[11]);
    let scale = r.singular_values().mean();
    if !(scale > 1e-12) {
        return None;
    }
    r /= scale;
    t /= scale;
    if r.determinant() < 0.0 {
        r = -r;
        t = -t;
    }
    let rotation = orthonormalize_rotation(&r).ok()?;
    // Re-fit translation for the projected rotation.
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (n, s) in normals.iter().zip(segs) {
        for p in [s.p, s.q] {
            ata += n * n.transpose();
            atb -= n * n.dot(&(rotation * p.coords));
        }
    }
    let t = ata.try_inverse().map_or(t, |inv| inv * atb);
    Some(Pose::new(rotation, t))
}

/// Plain RANSAC over six random pairs per hypothesis, scored with the same
/// inlier test and budget as the pipeline and refined identically.
pub fn baseline_full_ransac<R: Rng + ?Sized>(scene: &Scene, cfg: &PipelineConfig<f64>, rng: &mut R) -> TrialResult {
    let start = Instant::now();
    let out = baseline_pose(scene, cfg, rng);
    let runtime = start.elapsed().as_secs_f64();
    match out {
        Ok((pose, n)) => TrialResult::from_pose(&pose, scene, runtime, n),
        Err(e) => TrialResult::failure(e, runtime),
    }
}

fn baseline_pose<R: Rng + ?Sized>(scene: &Scene, cfg: &PipelineConfig<f64>, rng: &mut R) -> Result<(Pose<f64>, usize), String> {
    let rc: &RansacConfig<f64> = &cfg.ransac;
    let problem = LineProblem::new(&scene.segs2d, &scene.segs3d, &scene.intrinsics, rc);
    let (a2, a3) = (problem.active_2d(), problem.active_3d());
    if a2.len() < 6 || a3.len() < 6 {
        return Err(format!("need 6 segments per side, got {} and {}", a2.len(), a3.len()));
    }
    let exit_score = rc.early_exit_fraction * a2.len() as f64;
    let mut best: Option<(Pose<f64>, crate::translation::InlierSet<f64>)> = None;
    for _ in 0..rc.max_iters {
        let idx2: [usize; 6] = a2.sample_array(rng).expect("six active segments");
        let normals = idx2.map(|i| problem.normal(i).expect("active segment"));
        let segs: [LineSegment3D<f64>; 6] = std::array::from_fn(|_| scene.segs3d[a3[rng.random_range(0..a3.len())]]);
        let Some(pose) = solve_six_pairs(&normals, &segs) else { continue };
        let inliers = problem.count_inliers(&pose.rotation, &pose.translation);
        if best.as_ref().is_none_or(|(_, b)| inliers.score > b.score) {
            let reached = inliers.score as f64 > exit_score;
            best = Some((pose, inliers));
            if reached {
                break;
            }
        }
    }
    let (pose, inliers) = best.filter(|(_, b)| b.score > 0).ok_or("no hypothesis matched any segment")?;
    if !cfg.refine_enabled {
        return Ok((pose, inliers.correspondences.len()));
    }
    let out = refine_pose(&pose, &inliers.correspondences, &scene.segs2d, &scene.segs3d, &scene.intrinsics, &cfg.refine)
        .map_err(|e| e.to_string())?;
    Ok((out.pose, out.inliers.len()))
}

/// Parameter varied across a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NLines,
    OutlierFrac3d,
    OutlierFrac2d,
    OcclusionFrac,
    NoiseSigma,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] =
        [SweepParam::NLines, SweepParam::OutlierFrac3d, SweepParam::OutlierFrac2d, SweepParam::OcclusionFrac, SweepParam::NoiseSigma];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::NLines => "n_lines",
            SweepParam::OutlierFrac3d => "outlier_frac_3d",
            SweepParam::OutlierFrac2d => "outlier_frac_2d",
            SweepParam::OcclusionFrac => "occlusion_frac",
            SweepParam::NoiseSigma => "noise_sigma",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn apply(self, cfg: &mut SimConfig, value: f64) {
        match self {
            SweepParam::NLines => cfg.n_lines = value.round() as usize,
            SweepParam::OutlierFrac3d => cfg.outlier_frac_3d = value,
            SweepParam::OutlierFrac2d => cfg.outlier_frac_2d = value,
            SweepParam::OcclusionFrac => cfg.occlusion_frac = value,
            SweepParam::NoiseSigma => cfg.noise_sigma = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vp,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Vp => "vp",
            Method::Baseline => "ransac",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Method::Vp, Method::Baseline].into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Scene settings; `n_trials` and `rng_seed` apply to every sweep point.
    pub base: SimConfig,
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub pipeline: PipelineConfig<f64>,
    pub methods: Vec<Method>,
}

/// Trial seed: master seed mixed with trial and sweep indices.
pub fn trial_seed(master: u64, trial: usize, sweep_index: usize) -> u64 {
    master ^ (trial as u64) ^ ((sweep_index as u64) << 32)
}

/// Scene for one trial; both methods see the same one.
pub fn trial_scene(cfg: &SimConfig, seed: u64) -> Result<Scene, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCENE_STREAM);
    generate_scene(cfg, &mut rng)
}

pub fn run_method(method: Method, scene: &Scene, cfg: &PipelineConfig<f64>, seed: u64) -> TrialResult {
    let cfg = PipelineConfig { seed, ..*cfg };
    match method {
        Method::Vp => run_pipeline(scene, &cfg),
        Method::Baseline => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(BASELINE_STREAM);
            baseline_full_ransac(scene, &cfg, &mut rng)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignRow {
    pub sweep_value: f64,
    pub method: Method,
    pub n_trials: usize,
    pub success_rate: f64,
    pub mean_re_deg: f64,
    pub std_re_deg: f64,
    pub mean_t_abs: f64,
    pub std_t_abs: f64,
    pub mean_runtime_s: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates trials; pose errors average over trials that produced a pose.
pub fn summarize(sweep_value: f64, method: Method, trials: &[TrialResult]) -> CampaignRow {
    let posed: Vec<&TrialResult> = trials.iter().filter(|t| t.produced_pose()).collect();
    let re: Vec<f64> = posed.iter().map(|t| t.r_e.to_degrees()).collect();
    let ta: Vec<f64> = posed.iter().map(|t| t.t_abs).collect();
    let (mean_re_deg, std_re_deg) = mean_std(&re);
    let (mean_t_abs, std_t_abs) = mean_std(&ta);
    let n = trials.len().max(1) as f64;
    CampaignRow {
        sweep_value,
        method,
        n_trials: trials.len(),
        success_rate: trials.iter().filter(|t| t.success).count() as f64 / n,
        mean_re_deg,
        std_re_deg,
        mean_t_abs,
        std_t_abs,
        mean_runtime_s: trials.iter().map(|t| t.runtime).sum::<f64>() / n,
    }
}

/// Per sweep point and method, the trial results in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub rows: Vec<CampaignRow>,
    pub trials: Vec<Vec<TrialResult>>,
}

pub fn campaign(cfg: &CampaignConfig) -> Result<CampaignOutput, SimError> {
    if cfg.values.is_empty() {
        return Err(SimError::EmptySweep);
    }
    let points: Vec<SimConfig> = cfg
        .values
        .iter()
        .map(|&v| {
            let mut c = cfg.base;
            cfg.sweep.apply(&mut c, v);
            c.validate().map(|_| c)
        })
        .collect::<Result<_, _>>()?;
    let mut out = CampaignOutput { rows: Vec::new(), trials: Vec::new() };
    for (si, (point, &value)) in points.iter().zip(&cfg.values).enumerate() {
        let per_trial: Vec<Vec<TrialResult>> = (0..point.n_trials)
            .into_par_iter()
            .map(|trial| {
                let seed = trial_seed(point.rng_seed, trial, si);
                let scene = trial_scene(point, seed).expect("validated config");
                cfg.methods.iter().map(|&m| run_method(m, &scene, &cfg.pipeline, seed)).collect()
            })
            .collect();
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let trials: Vec<TrialResult> = per_trial.iter().map(|t| t[mi].clone()).collect();
            out.rows.push(summarize(value, method, &trials));
            out.trials.push(trials);
        }
    }
    Ok(out)
}

pub const CAMPAIGN_HEADER: &str =
    "sweep_param,method,n_trials,success_rate,mean_Re_deg,std_Re_deg,mean_t_abs,std_t_abs,mean_runtime_s";

/// CSV table of `rows`; with `timings == false` the runtime column is written
/// as 0 so that output depends only on the seed.
pub fn campaign_csv(rows: &[CampaignRow], timings: bool) -> String {
    let mut s = String::from(CAMPAIGN_HEADER);
    s.push('\n');
    for r in rows {
        let runtime = if timings { r.mean_runtime_s } else { 0.0 };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.sweep_value,
            r.method.name(),
            r.n_trials,
            r.success_rate,
            r.mean_re_deg,
            r.std_re_deg,
            r.mean_t_abs,
            r.std_t_abs,
            runtime
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{cluster_2d_vanishing, merge_and_rank_2d, ClusterConfig};
    use crate::refine::line_residuals;

    fn scene(cfg: &SimConfig, seed: u64) -> Scene {
        trial_scene(cfg, seed).unwrap()
    }

    #[test]
    fn clipping() {
        let w = 640.0;
        let h = 480.0;
        let (a, b) = clip_to_image(Point2::new(-100.0, 240.0), Point2::new(700.0, 240.0), w, h).unwrap();
        assert_eq!((a, b), (Point2::new(0.0, 240.0), Point2::new(640.0, 240.0)));
        assert!(clip_to_image(Point2::new(-10.0, -10.0), Point2::new(-1.0, 500.0), w, h).is_none());
        let inside = (Point2::new(10.0, 20.0), Point2::new(30.0, 40.0));
        assert_eq!(clip_to_image(inside.0, inside.1, w, h), Some(inside));
    }

    #[test]
    fn noise_free_pairs_reproject_exactly() {
        let cfg = SimConfig { noise_sigma: 0.0, outlier_frac_2d: 0.2, outlier_frac_3d: 0.2, ..Default::default() };
        for seed in 0..10 {
            let s = scene(&cfg, seed);
            assert!(s.pairing.len() >= MIN_VISIBLE_LINES);
            for c in &s.pairing {
                let r = line_residuals(&s.gt, &s.segs2d[c.idx2d].line(), &s.segs3d[c.idx3d], &s.intrinsics).unwrap();
                assert!(r[0].abs() < 1e-8 && r[1].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn counts_follow_fractions() {
        let cfg = SimConfig { n_lines: 50, outlier_frac_3d: 0.2, outlier_frac_2d: 0.25, ..Default::default() };
        let s = scene(&cfg, 3);
        assert_eq!(s.segs3d.len(), 50);
        let n_vis = s.pairing.len();
        assert_eq!(s.segs2d.len(), n_vis + (n_vis as f64 / 3.0).round() as usize);
        let occluded = SimConfig { occlusion_frac: 0.5, noise_sigma: 0.0, ..cfg };
        assert!(scene(&occluded, 3).pairing.len() <= 20);
    }

    #[test]
    fn camera_sees_scene_center() {
        let cfg = SimConfig::default();
        for seed in 0..20 {
            let s = scene(&cfg, seed);
            let u = project_point(&s.intrinsics, &s.gt, &Point3::origin()).unwrap();
            assert!((u - Point2::new(320.0, 240.0)).norm() < 1e-9);
            let d = s.gt.camera_center().norm();
            assert!((3.0..=5.0).contains(&d));
            assert!((s.gt.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SimConfig { outlier_frac_2d: 0.3, ..Default::default() };
        assert_eq!(scene(&cfg, 42), scene(&cfg, 42));
        assert_ne!(scene(&cfg, 42).gt, scene(&cfg, 43).gt);
    }

    /// Compares the clustered vanishing directions with a fit over the true
    /// members of each family.
    #[test]
    fn family_vanishing_points_are_recoverable() {
        let cfg = SimConfig::default();
        let ccfg = ClusterConfig::default();
        let (mut found, mut oracle) = (Vec::new(), Vec::new());
        for seed in 0..50 {
            let s = scene(&cfg, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = cluster_2d_vanishing(&s.segs2d, &s.intrinsics, &ccfg, &mut rng).unwrap();
            let top = merge_and_rank_2d(raw, &s.segs2d, &s.intrinsics, &ccfg).unwrap();
            for fam in &s.family_directions {
                let vp = UnitDirection::new(s.gt.rotation * fam.as_vector()).unwrap();
                let members = s.pairing.iter().filter(|c| s.segs3d[c.idx3d].direction().line_angle(fam) < 1e-6);
                let fit = crate::cluster::refit_vanishing(members.map(|c| {
                    let n = crate::geom::interpretation_plane_normal(&s.intrinsics, &s.segs2d[c.idx2d]).unwrap();
                    n.as_vector() * s.segs2d[c.idx2d].length()
                }))
                .unwrap();
                oracle.push(fit.line_angle(&vp).to_degrees());
                found.push(top.iter().map(|c| c.direction.line_angle(&vp).to_degrees()).fold(f64::INFINITY, f64::min));
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let near = found.iter().filter(|&&e| e < 10.0).count() as f64 / found.len() as f64;
        assert!(near >= 0.95, "fraction within 10 deg: {near}");
        let (mf, mo) = (median(&mut found), median(&mut oracle));
        assert!(mf < 2.0 * mo, "median {mf} deg against oracle {mo} deg");
    }

    #[test]
    fn six_pair_solver_is_exact_without_noise() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let gt = Pose::new(
            *nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.5).matrix(),
            Vector3::new(0.1, -0.2, 4.0),
        );
        for _ in 0..10 {
            let mut normals = [Vector3::zeros(); 6];
            let mut segs = Vec::new();
            for n in normals.iter_mut() {
                let mut pt = || Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let (p, q) = (pt(), pt());
                let (a, b) = (gt.transform(&p), gt.transform(&q));
                *n = a.cross(&b).normalize();
                segs.push(LineSegment3D::new(p, q).unwrap());
            }
            let pose = solve_six_pairs(&normals, &segs.try_into().unwrap()).unwrap();
            assert!(rotation_geodesic_error(&pose.rotation, &gt.rotation) < 1e-9);
            assert!((pose.translation - gt.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn baseline_sometimes_succeeds_on_small_scenes() {
        let cfg = SimConfig { n_lines: 10, n_families: 3, noise_sigma: 0.0, ..Default::default() };
        let pcfg = PipelineConfig::default();
        let wins: Vec<bool> = (0..5)
            .map(|seed| {
                let s = scene(&cfg, seed);
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let t = baseline_full_ransac(&s, &pcfg, &mut r);
                t.success
            })
            .collect();
        assert!(wins.iter().any(|&w| w), "{wins:?}");
    }

    #[test]
    fn success_flag_matches_thresholds() {
        let cfg = SimConfig { noise_sigma: 0.0, ..Default::default() };
        let s = scene(&cfg, 1);
        let t = TrialResult::from_pose(&s.gt, &s, 0.0, 0);
        assert!(t.success && t.r_e < 1e-6 && t.t_abs < 1e-12);
        let off = Pose::new(s.gt.rotation, s.gt.translation * 1.2);
        let t = TrialResult::from_pose(&off, &s, 0.0, 0);
        assert_eq!(t.success, is_success(t.r_e, t.t_rel));
        assert!(!t.success);
    }

    #[test]
    fn trial_seeds_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for si in 0..5 {
            for t in 0..200 {
                assert!(seen.insert(trial_seed(7, t, si)));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SimConfig { outlier_frac_3d: 1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(SimError::FractionOutOfRange { .. })));
        assert_eq!(SimConfig { n_lines: 5, ..Default::default() }.validate(), Err(SimError::TooFewLines(5)));
        assert_eq!(SimConfig { n_families: 1, ..Default::default() }.validate(), Err(SimError::TooFewFamilies(1)));
    }

    #[test]
    fn summary_statistics() {
        let mk = |r: f64, ok: bool| TrialResult {
            r_e: r.to_radians(),
            t_rel: 0.0,
            t_abs: r,
            success: ok,
            runtime: 1.0,
            n_correspondences: 0,
            error: None,
        };
        let trials = vec![mk(1.0, true), mk(3.0, false), TrialResult::failure("x".into(), 2.0)];
        let row = summarize(0.5, Method::Vp, &trials);
        assert!((row.mean_re_deg - 2.0).abs() < 1e-12);
        assert!((row.std_re_deg - 2f64.sqrt()).abs() < 1e-12);
        assert!((row.success_rate - 1.0 / 3.0).abs() < 1e-12);
        assert!((row.mean_runtime_s - 4.0 / 3.0).abs() < 1e-12);
        let csv = campaign_csv(&[row], false);
        assert!(csv.starts_with(CAMPAIGN_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("0.5,vp,3,"));
        assert!(csv.trim_end().ends_with(",0"));
    }
}
