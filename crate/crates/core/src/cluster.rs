//! Sequential RANSAC clustering of image segments by vanishing direction and of
//! 3D segments by orientation, followed by merging of near-collinear clusters.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngExt};
use thiserror::Error;

use crate::geom::{interpretation_plane_normal, CameraIntrinsics, LineSegment2D, LineSegment3D, UnitDirection};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("need at least {needed} segments, got {got}")]
    InsufficientSegments { needed: usize, got: usize },
    #[error("no direction hypothesis gathered two or more inliers")]
    NoClusterFound,
    #[error("only {found} clusters remain after merging, {keep} requested")]
    FewerThanKeep { found: usize, keep: usize },
}

/// Segment indices sharing one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCluster<T: Real> {
    pub direction: UnitDirection<T>,
    pub members: Vec<usize>,
}

impl<T: Real> DirectionCluster<T> {
    pub fn population(&self) -> usize {
        self.members.len()
    }
}

/// Angles are in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig<T: Real> {
    pub num_clusters: usize,
    pub inlier_angle_2d: T,
    pub inlier_angle_3d: T,
    pub merge_angle: T,
    pub ransac_iters: usize,
    /// Clusters kept per side after merging.
    pub keep: usize,
}

impl<T: Real> Default for ClusterConfig<T> {
    fn default() -> Self {
        Self {
            num_clusters: 5,
            inlier_angle_2d: T::lit(2.0),
            inlier_angle_3d: T::lit(1.0),
            merge_angle: T::lit(5.0),
            ransac_iters: 500,
            keep: 2,
        }
    }
}

const MIN_SEGMENTS: usize = 4;
const LOCAL_OPT_ROUNDS: usize = 5;

/// Direction minimizing `sum (n_i . v)^2`: smallest eigenvector of the scatter matrix.
/// Image clusters pass normals scaled by segment length, so each term carries
/// weight `length^2`.
pub fn refit_vanishing<T: Real>(normals: impl IntoIterator<Item = Vector3<T>>) -> Option<UnitDirection<T>> {
    let eig = scatter(normals)?.symmetric_eigen();
    let i = eig.eigenvalues.imin();
    UnitDirection::new(eig.eigenvectors.column(i).into_owned()).map(|d| d.canonical())
}

/// Dominant direction of a bundle of undirected vectors. Row signs do not
/// change the right singular vectors, so no sign alignment is needed.
pub fn refit_orientation<T: Real>(dirs: impl IntoIterator<Item = Vector3<T>>) -> Option<UnitDirection<T>> {
    let eig = scatter(dirs)?.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    UnitDirection::new(eig.eigenvectors.column(i).into_owned()).map(|d| d.canonical())
}

fn scatter<T: Real>(vs: impl IntoIterator<Item = Vector3<T>>) -> Option<Matrix3<T>> {
    let mut m = Matrix3::zeros();
    let mut any = false;
    for v in vs {
        m += v * v.transpose();
        any = true;
    }
    any.then_some(m)
}

/// Interpretation-plane normals for every segment that has one.
pub fn segment_normals<T: Real>(segs: &[LineSegment2D<T>], k: &CameraIntrinsics<T>) -> Vec<Option<UnitDirection<T>>> {
    segs.iter().map(|s| interpretation_plane_normal(k, s).ok()).collect()
}

/// Sequential RANSAC over `pool`; `sample` draws a hypothesis direction from
/// the pool, `is_inlier` tests one index against it.
fn sequential_ransac<T, R, S, P, F>(
    mut pool: Vec<usize>,
    cfg: &ClusterConfig<T>,
    rng: &mut R,
    mut sample: S,
    is_inlier: P,
    refit: F,
) -> Vec<DirectionCluster<T>>
where
    T: Real,
    R: Rng + ?Sized,
    S: FnMut(&[usize], &mut R) -> Option<UnitDirection<T>>,
    P: Fn(usize, &UnitDirection<T>) -> bool,
    F: Fn(&[usize]) -> Option<UnitDirection<T>>,
{
    let mut clusters = Vec::new();
    while clusters.len() < cfg.num_clusters && pool.len() >= 2 {
        let mut best: Vec<usize> = Vec::new();
        for _ in 0..cfg.ransac_iters {
            let Some(v) = sample(&pool, rng) else { continue };
            let mut inliers: Vec<usize> = pool.iter().copied().filter(|&i| is_inlier(i, &v)).collect();
            if inliers.len() <= best.len() {
                continue;
            }
            // Local optimization: refit and regather while the set grows.
            for _ in 0..LOCAL_OPT_ROUNDS {
                let Some(w) = refit(&inliers) else { break };
                let grown: Vec<usize> = pool.iter().copied().filter(|&i| is_inlier(i, &w)).collect();
                if grown.len() <= inliers.len() {
                    break;
                }
                inliers = grown;
            }
            best = inliers;
        }
        if best.len() < 2 {
            break;
        }
        let Some(direction) = refit(&best) else { break };
        pool.retain(|i| best.binary_search(i).is_err());
        clusters.push(DirectionCluster { direction, members: best });
    }
    clusters
}

/// Groups image segments by shared vanishing direction.
pub fn cluster_2d_vanishing<T: Real, R: Rng + ?Sized>(
    segs: &[LineSegment2D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &ClusterConfig<T>,
    rng: &mut R,
) -> Result<Vec<DirectionCluster<T>>, ClusterError> {
    if segs.len() < MIN_SEGMENTS {
        return Err(ClusterError::InsufficientSegments { needed: MIN_SEGMENTS, got: segs.len() });
    }
    let normals = segment_normals(segs, k);
    let pool: Vec<usize> = (0..segs.len()).filter(|&i| normals[i].is_some()).collect();
    let n = |i: usize| *normals[i].as_ref().expect("pool holds valid normals").as_vector();
    let rays: Vec<[Vector3<T>; 2]> =
        segs.iter().map(|s| [k.back_project(&s.p).normalize(), k.back_project(&s.q).normalize()]).collect();
    let tol = T::deg_to_rad(cfg.inlier_angle_2d).sin();

    let clusters = sequential_ransac(
        pool,
        cfg,
        rng,
        |pool, rng| {
            let a = rng.random_range(0..pool.len());
            let mut b = rng.random_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            UnitDirection::new(n(pool[a]).cross(&n(pool[b])))
        },
        // Dihedral angle, about the endpoint ray farther from `v`, between the
        // interpretation plane and the plane through the hypothesis.
        |i, v| {
            let [a, b] = &rays[i];
            let reach = a.cross(v.as_vector()).norm().max(b.cross(v.as_vector()).norm());
            n(i).dot(v.as_vector()).abs() < tol * reach
        },
        |members| refit_vanishing(members.iter().map(|&i| n(i) * segs[i].length())),
    );
    if clusters.is_empty() {
        return Err(ClusterError::NoClusterFound);
    }
    Ok(clusters)
}

/// Groups 3D segments into parallel families.
pub fn cluster_3d_parallel<T: Real, R: Rng + ?Sized>(
    segs: &[LineSegment3D<T>],
    cfg: &ClusterConfig<T>,
    rng: &mut R,
) -> Result<Vec<DirectionCluster<T>>, ClusterError> {
    if segs.len() < MIN_SEGMENTS {
        return Err(ClusterError::InsufficientSegments { needed: MIN_SEGMENTS, got: segs.len() });
    }
    let dirs: Vec<UnitDirection<T>> = segs.iter().map(|s| s.direction()).collect();
    let cos_tol = T::deg_to_rad(cfg.inlier_angle_3d).cos();

    let clusters = sequential_ransac(
        (0..segs.len()).collect(),
        cfg,
        rng,
        |pool, rng| Some(dirs[pool[rng.random_range(0..pool.len())]]),
        |i, v| dirs[i].dot(v).abs() > cos_tol,
        |members| refit_orientation(members.iter().map(|&i| *dirs[i].as_vector())),
    );
    if clusters.is_empty() {
        return Err(ClusterError::NoClusterFound);
    }
    Ok(clusters)
}

/// Greedily unions clusters whose directions are within `merge_angle` degrees
/// (closest pair first), then returns the `keep` most populous.
///
/// `refit` recomputes a direction from a merged member list.
pub fn merge_and_rank<T, F>(
    clusters: Vec<DirectionCluster<T>>,
    merge_angle: T,
    keep: usize,
    refit: F,
) -> Result<Vec<DirectionCluster<T>>, ClusterError>
where
    T: Real,
    F: Fn(&[usize]) -> Option<UnitDirection<T>>,
{
    let tol = T::deg_to_rad(merge_angle);
    let mut clusters = clusters;
    loop {
        let mut closest: Option<(usize, usize, T)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let a = clusters[i].direction.line_angle(&clusters[j].direction);
                if a < tol && closest.is_none_or(|(_, _, b)| a < b) {
                    closest = Some((i, j, a));
                }
            }
        }
        let Some((i, j, _)) = closest else { break };
        let absorbed = clusters.remove(j);
        let target = &mut clusters[i];
        target.members.extend(absorbed.members);
        target.members.sort_unstable();
        if let Some(d) = refit(&target.members) {
            target.direction = d;
        }
    }
    // Stable sort keeps extraction order among equal populations.
    clusters.sort_by_key(|c| std::cmp::Reverse(c.population()));
    if clusters.len() < keep {
        return Err(ClusterError::FewerThanKeep { found: clusters.len(), keep });
    }
    clusters.truncate(keep);
    Ok(clusters)
}

/// [`merge_and_rank`] with the vanishing-direction refit.
pub fn merge_and_rank_2d<T: Real>(
    clusters: Vec<DirectionCluster<T>>,
    segs: &[LineSegment2D<T>],
    k: &CameraIntrinsics<T>,
    cfg: &ClusterConfig<T>,
) -> Result<Vec<DirectionCluster<T>>, ClusterError> {
    let normals = segment_normals(segs, k);
    merge_and_rank(clusters, cfg.merge_angle, cfg.keep, |m| {
        refit_vanishing(m.iter().filter_map(|&i| normals[i].map(|n| n.as_vector() * segs[i].length())))
    })
}

/// [`merge_and_rank`] with the orientation refit.
pub fn merge_and_rank_3d<T: Real>(
    clusters: Vec<DirectionCluster<T>>,
    segs: &[LineSegment3D<T>],
    cfg: &ClusterConfig<T>,
) -> Result<Vec<DirectionCluster<T>>, ClusterError> {
    merge_and_rank(clusters, cfg.merge_angle, cfg.keep, |m| {
        refit_orientation(m.iter().map(|&i| *segs[i].direction().as_vector()))
    })
}
