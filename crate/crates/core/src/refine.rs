//! Levenberg-Marquardt refinement of the pose over line correspondences with
//! iterative hard outlier rejection.
//!
//! Each correspondence contributes two residuals: the signed pixel distances
//! of the projected 3D endpoints to the infinite image line.

use nalgebra::{Matrix6, SMatrix, Vector6};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, ImageLine, LineSegment2D, LineSegment3D, Pose, PoseTangent, MIN_DEPTH};
use crate::scalar::Real;
use crate::translation::{Correspondence, CorrespondenceSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefineError {
    #[error("need at least 3 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("a segment endpoint lies behind the camera")]
    BehindCamera,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig<T: Real> {
    pub max_lm_iters: usize,
    pub max_outlier_rounds: usize,
    /// Endpoint distance (pixels) beyond which a correspondence is dropped.
    pub outlier_px: T,
    /// Cap on the share of correspondences dropped in one round; the worst
    /// offenders go first.
    pub max_drop_fraction: T,
    pub lm_init_damping: T,
    /// Relative cost decrease below which an LM run stops.
    pub convergence_tol: T,
}

impl<T: Real> Default for RefineConfig<T> {
    fn default() -> Self {
        Self {
            max_lm_iters: 50,
            max_outlier_rounds: 10,
            outlier_px: T::lit(3.0),
            max_drop_fraction: T::lit(0.25),
            lm_init_damping: T::lit(1e-3),
            convergence_tol: T::lit(1e-10),
        }
    }
}

/// Signed distances (pixels) of both projected endpoints of `seg` to `line`.
pub fn line_residuals<T: Real>(
    pose: &Pose<T>,
    line: &ImageLine<T>,
    seg: &LineSegment3D<T>,
    k: &CameraIntrinsics<T>,
) -> Result<[T; 2], RefineError> {
    let mut out = [T::zero(); 2];
    for (o, p) in out.iter_mut().zip([seg.p, seg.q]) {
        let pc = pose.transform(&p);
        if pc.z <= T::lit(MIN_DEPTH) {
            return Err(RefineError::BehindCamera);
        }
        *o = line.signed_distance(&k.project_unchecked(&pc));
    }
    Ok(out)
}

/// Jacobian of the pixel projection with respect to a left perturbation of the
/// pose, evaluated at camera-frame point `(x, y, z)`.
fn projection_jacobian<T: Real>(k: &CameraIntrinsics<T>, x: T, y: T, z: T) -> SMatrix<T, 2, 6> {
    let (fx, fy) = (k.fx, k.fy);
    let zi = T::one() / z;
    let zi2 = zi * zi;
    let o = T::zero();
    SMatrix::<T, 2, 6>::from_row_slice(&[
        fx * zi,
        o,
        -fx * x * zi2,
        -fx * x * y * zi2,
        fx + fx * x * x * zi2,
        -fx * y * zi,
        o,
        fy * zi,
        -fy * y * zi2,
        -fy - fy * y * y * zi2,
        fy * x * y * zi2,
        fy * x * zi,
    ])
}

/// Rows: derivative of each endpoint residual with respect to the tangent
/// perturbation `[translation; rotation]`.
pub fn residual_jacobian<T: Real>(
    pose: &Pose<T>,
    line: &ImageLine<T>,
    seg: &LineSegment3D<T>,
    k: &CameraIntrinsics<T>,
) -> Result<SMatrix<T, 2, 6>, RefineError> {
    let h = line.coeffs();
    let mut jac = SMatrix::<T, 2, 6>::zeros();
    for (row, p) in [seg.p, seg.q].iter().enumerate() {
        let pc = pose.transform(p);
        if pc.z <= T::lit(MIN_DEPTH) {
            return Err(RefineError::BehindCamera);
        }
        let j = projection_jacobian(k, pc.x, pc.y, pc.z);
        let r = j.row(0) * h.x + j.row(1) * h.y;
        jac.set_row(row, &r);
    }
    Ok(jac)
}

/// Same Jacobian assembled as `de/du * du/dP' * dP'/dxi` with explicit factors;
/// kept to cross-check the closed form above.
#[cfg(test)]
fn residual_jacobian_chain(pose: &Pose<f64>, line: &ImageLine<f64>, seg: &LineSegment3D<f64>, k: &CameraIntrinsics<f64>) -> SMatrix<f64, 2, 6> {
    let h = line.coeffs();
    let mut jac = SMatrix::<f64, 2, 6>::zeros();
    for (row, p) in [seg.p, seg.q].iter().enumerate() {
        let pc = pose.transform(p);
        let du_dp = nalgebra::Matrix2x3::new(k.fx / pc.z, 0.0, -k.fx * pc.x / (pc.z * pc.z), 0.0, k.fy / pc.z, -k.fy * pc.y / (pc.z * pc.z));
        let mut dp_dxi = nalgebra::Matrix3x6::zeros();
        dp_dxi.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
        dp_dxi.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-crate::geom::skew(&pc)));
        let r = nalgebra::RowVector2::new(h.x, h.y) * du_dp * dp_dxi;
        jac.set_row(row, &r);
    }
    jac
}

/// Outcome of [`refine_pose`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome<T: Real> {
    pub pose: Pose<T>,
    pub inliers: CorrespondenceSet,
    /// Accepted costs of every LM run, starting with that run's initial cost.
    pub cost_history: Vec<Vec<T>>,
    /// Rounds in which at least one correspondence was dropped.
    pub outlier_rounds: usize,
    pub lm_iterations: usize,
    /// `false` when an LM run hit its iteration cap.
    pub converged: bool,
}

impl<T: Real> RefineOutcome<T> {
    pub fn final_cost(&self) -> T {
        self.cost_history.last().and_then(|r| r.last()).copied().unwrap_or_else(T::zero)
    }
}

struct Term<T: Real> {
    line: ImageLine<T>,
    seg: LineSegment3D<T>,
}

/// Half sum of squared residuals, `None` if any endpoint falls behind the camera.
fn total_cost<T: Real>(pose: &Pose<T>, terms: &[Term<T>], k: &CameraIntrinsics<T>) -> Option<T> {
    let mut c = T::zero();
    for t in terms {
        let [a, b] = line_residuals(pose, &t.line, &t.seg, k).ok()?;
        c += a * a + b * b;
    }
    Some(c * T::lit(0.5))
}

struct LmRun<T: Real> {
    pose: Pose<T>,
    costs: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt<T: Real>(pose0: &Pose<T>, terms: &[Term<T>], k: &CameraIntrinsics<T>, cfg: &RefineConfig<T>) -> LmRun<T> {
    let mut pose = *pose0;
    let mut cost = total_cost(&pose, terms, k).expect("terms are in front of the camera");
    let mut costs = vec![cost];
    let mut lambda = cfg.lm_init_damping;
    let mut iterations = 0;
    let mut converged = false;
    let tiny = T::lit(1e-300_f64.max(f64::MIN_POSITIVE));
    while iterations < cfg.max_lm_iters {
        if cost <= tiny {
            converged = true;
            break;
        }
        iterations += 1;
        let mut hess = Matrix6::<T>::zeros();
        let mut grad = Vector6::<T>::zeros();
        for t in terms {
            let r = line_residuals(&pose, &t.line, &t.seg, k).expect("accepted pose keeps depths positive");
            let j = residual_jacobian(&pose, &t.line, &t.seg, k).expect("accepted pose keeps depths positive");
            hess += j.transpose() * j;
            grad += j.transpose() * nalgebra::Vector2::new(r[0], r[1]);
        }
        let mut damped = hess;
        for i in 0..6 {
            damped[(i, i)] += lambda * (hess[(i, i)] + T::lit(1e-12));
        }
        let step = match damped.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                lambda *= T::lit(10.0);
                continue;
            }
        };
        let candidate = pose.perturbed(&PoseTangent(step));
        match total_cost(&candidate, terms, k) {
            Some(c) if c < cost => {
                let rel = (cost - c) / cost;
                pose = candidate;
                cost = c;
                costs.push(c);
                lambda /= T::lit(10.0);
                if rel < cfg.convergence_tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                lambda *= T::lit(10.0);
                // No descent even with a vanishing step: at a minimum.
                if lambda > T::lit(1e16) || step.norm() < T::lit(1e-15) {
                    converged = true;
                    break;
                }
            }
        }
    }
    LmRun { pose, costs, iterations, converged }
}

/// Survivors of one rejection round. Correspondences behind the camera always
/// go; of those beyond the pixel threshold, at most `max_drop_fraction` of the
/// set (at least one) is dropped, largest residual first.
fn reject_outliers<T: Real>(
    active: &[Correspondence],
    residuals: impl Fn(&Correspondence) -> Option<[T; 2]>,
    cfg: &RefineConfig<T>,
) -> Vec<Correspondence> {
    let worst: Vec<Option<T>> = active.iter().map(|c| residuals(c).map(|[a, b]| a.abs().max(b.abs()))).collect();
    let mut offenders: Vec<(usize, T)> =
        worst.iter().enumerate().filter_map(|(i, w)| w.filter(|&w| w > cfg.outlier_px).map(|w| (i, w))).collect();
    offenders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let cap = (cfg.max_drop_fraction * T::from_usize(active.len()).expect("count fits"))
        .ceil()
        .to_usize()
        .unwrap_or(0)
        .max(1);
    let mut drop = vec![false; active.len()];
    for (i, w) in worst.iter().enumerate() {
        drop[i] = w.is_none();
    }
    for &(i, _) in offenders.iter().take(cap) {
        drop[i] = true;
    }
    active.iter().zip(drop).filter(|(_, d)| !d).map(|(c, _)| *c).collect()
}

/// Refines `pose0` over `corrs`, dropping correspondences whose endpoint
/// residual exceeds `cfg.outlier_px` and re-optimizing until none are dropped.
pub fn refine_pose<T: Real>(
    pose0: &Pose<T>,
    corrs: &[Correspondence],
    segs2d: &[LineSegment2D<T>],
    segs3d: &[LineSegment3D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &RefineConfig<T>,
) -> Result<RefineOutcome<T>, RefineError> {
    let visible = |pose: &Pose<T>, c: &Correspondence| line_residuals(pose, &segs2d[c.idx2d].line(), &segs3d[c.idx3d], k).ok();
    let mut active: Vec<Correspondence> = corrs.iter().copied().filter(|c| visible(pose0, c).is_some()).collect();
    if active.len() < 3 {
        return Err(RefineError::InsufficientCorrespondences(active.len()));
    }
    let terms_of = |set: &[Correspondence]| -> Vec<Term<T>> {
        set.iter().map(|c| Term { line: segs2d[c.idx2d].line(), seg: segs3d[c.idx3d] }).collect()
    };

    let mut pose = *pose0;
    let mut history = Vec::new();
    let (mut rounds, mut lm_iterations, mut converged) = (0, 0, true);
    let mut run = |pose: &Pose<T>, set: &[Correspondence], history: &mut Vec<Vec<T>>| {
        let r = levenberg_marquardt(pose, &terms_of(set), k, cfg);
        lm_iterations += r.iterations;
        converged &= r.converged;
        history.push(r.costs);
        r.pose
    };
    loop {
        pose = run(&pose, &active, &mut history);
        let kept = reject_outliers(&active, |c| visible(&pose, c), cfg);
        if kept.len() == active.len() || kept.len() < 3 {
            break;
        }
        active = kept;
        rounds += 1;
        if rounds >= cfg.max_outlier_rounds {
            pose = run(&pose, &active, &mut history);
            break;
        }
    }
    Ok(RefineOutcome { pose, inliers: active, cost_history: history, outlier_rounds: rounds, lm_iterations, converged })
}
