//! Rotation hypotheses from two vanishing directions and two 3D orientations.
//!
//! Pairing the directions admits two assignments and each 3D orientation is
//! sign ambiguous, giving at most eight candidates.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geom::{orthonormalize_rotation, rotation_geodesic_error, UnitDirection};
use crate::scalar::Real;

/// Pairs closer than this (degrees, undirected) do not span a stable basis.
pub const MIN_PAIR_SEPARATION_DEG: f64 = 10.0;
/// Maximum disagreement (degrees) between the 2D and signed 3D inter-pair angles.
pub const ANGLE_CONSISTENCY_DEG: f64 = 10.0;
/// Candidates closer than this (degrees) are duplicates.
pub const DEDUP_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RotationError {
    #[error("direction pair separated by less than {MIN_PAIR_SEPARATION_DEG} degrees")]
    DegenerateBasis,
}

/// Which pairing and sign pattern produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Assignment {
    /// `false`: 2D[0] <-> 3D[0], 2D[1] <-> 3D[1]; `true`: crossed.
    pub swapped: bool,
    /// Negation applied to the 3D direction matched with 2D[0] and 2D[1].
    pub negated: [bool; 2],
}

impl Assignment {
    /// Index of the 3D direction matched with 2D direction `i`.
    pub fn partner(&self, i: usize) -> usize {
        if self.swapped {
            1 - i
        } else {
            i
        }
    }

    pub fn all() -> impl Iterator<Item = Assignment> {
        [false, true].into_iter().flat_map(|swapped| {
            [[false, false], [false, true], [true, false], [true, true]]
                .into_iter()
                .map(move |negated| Assignment { swapped, negated })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationCandidate<T: Real> {
    pub rotation: Matrix3<T>,
    pub assignment: Assignment,
}

fn basis<T: Real>(a: &UnitDirection<T>, b: &UnitDirection<T>) -> Matrix3<T> {
    let c = a.as_vector().cross(b.as_vector()).normalize();
    Matrix3::from_columns(&[*a.as_vector(), *b.as_vector(), c])
}

/// Enumerates the rotations mapping signed 3D orientations onto vanishing
/// directions, in fixed order (pairing, then sign pattern).
pub fn enumerate_rotations<T: Real>(
    v2d: [UnitDirection<T>; 2],
    v3d: [UnitDirection<T>; 2],
) -> Result<Vec<RotationCandidate<T>>, RotationError> {
    let min_sep = T::deg_to_rad(T::lit(MIN_PAIR_SEPARATION_DEG));
    if v2d[0].line_angle(&v2d[1]) <= min_sep || v3d[0].line_angle(&v3d[1]) <= min_sep {
        return Err(RotationError::DegenerateBasis);
    }
    let consistency = T::deg_to_rad(T::lit(ANGLE_CONSISTENCY_DEG));
    let dedup = T::deg_to_rad(T::lit(DEDUP_DEG));
    let angle_2d = v2d[0].ray_angle(&v2d[1]);
    let b2d = basis(&v2d[0], &v2d[1]);

    let mut out: Vec<RotationCandidate<T>> = Vec::with_capacity(8);
    for assignment in Assignment::all() {
        let signed = |i: usize| {
            let d = v3d[assignment.partner(i)];
            if assignment.negated[i] {
                d.neg()
            } else {
                d
            }
        };
        let (a, b) = (signed(0), signed(1));
        if (a.ray_angle(&b) - angle_2d).abs() > consistency {
            continue;
        }
        let Some(b3d_inv) = basis(&a, &b).try_inverse() else { continue };
        let Ok(rotation) = orthonormalize_rotation(&(b2d * b3d_inv)) else { continue };
        if out.iter().any(|c| rotation_geodesic_error(&c.rotation, &rotation) < dedup) {
            continue;
        }
        out.push(RotationCandidate { rotation, assignment });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ud(x: f64, y: f64, z: f64) -> UnitDirection<f64> {
        UnitDirection::new(Vector3::new(x, y, z)).unwrap()
    }

    #[test]
    fn aligned_frames_contain_identity() {
        let c = enumerate_rotations([UnitDirection::<f64>::x(), UnitDirection::y()], [UnitDirection::x(), UnitDirection::y()]).unwrap();
        assert!(c.iter().any(|c| rotation_geodesic_error(&c.rotation, &Matrix3::identity()) < 1e-12));
        assert_eq!(c.len(), 8);
    }

    /// Brute force over the eight hypotheses: the survivors are exactly those
    /// whose signed 3D inter-angle is within the consistency bound.
    #[test]
    fn angle_filter_brute_force() {
        let v3d = [UnitDirection::<f64>::x(), UnitDirection::y()];
        let r45 = 45f64.to_radians();
        let v2d = [UnitDirection::x(), ud(r45.cos(), r45.sin(), 0.0)];
        let expected = Assignment::all()
            .filter(|a| {
                let s = |i: usize| if a.negated[i] { v3d[a.partner(i)].neg() } else { v3d[a.partner(i)] };
                (s(0).ray_angle(&s(1)) - v2d[0].ray_angle(&v2d[1])).abs().to_degrees() <= 10.0
            })
            .count();
        assert_eq!(expected, 0);
        assert!(enumerate_rotations(v2d, v3d).unwrap().is_empty());
    }

    #[test]
    fn nonorthogonal_pairs_keep_consistent_signs() {
        let r60 = 60f64.to_radians();
        let v = [UnitDirection::x(), ud(r60.cos(), r60.sin(), 0.0)];
        let c = enumerate_rotations(v, v).unwrap();
        assert_eq!(c.len(), 4);
        for cand in &c {
            assert_eq!(cand.assignment.negated[0], cand.assignment.negated[1]);
        }
    }

    #[test]
    fn degenerate_pairs_rejected() {
        let near = ud(1.0, 0.1, 0.0);
        assert_eq!(
            enumerate_rotations([UnitDirection::x(), near], [UnitDirection::x(), UnitDirection::y()]),
            Err(RotationError::DegenerateBasis)
        );
        assert_eq!(
            enumerate_rotations([UnitDirection::x(), UnitDirection::y()], [UnitDirection::x(), near.neg()]),
            Err(RotationError::DegenerateBasis)
        );
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn random_instances_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let r_gt = *Rotation3::from_axis_angle(&Unit::new_normalize(random_unit(&mut rng)), rng.random_range(0.0..3.1)).matrix();
            let (d1, d2) = loop {
                let (a, b) = (random_unit(&mut rng), random_unit(&mut rng));
                if a.dot(&b).abs() < 20f64.to_radians().cos() {
                    break (a, b);
                }
            };
            let v2d = [UnitDirection::new(r_gt * d1).unwrap(), UnitDirection::new(r_gt * d2).unwrap()];
            let v3d = [UnitDirection::new(d1).unwrap(), UnitDirection::new(d2).unwrap()];
            let cands = enumerate_rotations(v2d, v3d).unwrap();
            assert!(cands.len() <= 8);
            assert!(cands.iter().any(|c| rotation_geodesic_error(&c.rotation, &r_gt) < 1e-6));
            for c in &cands {
                let a = c.assignment;
                let signed: Vec<_> = (0..2)
                    .map(|i| if a.negated[i] { v3d[a.partner(i)].neg() } else { v3d[a.partner(i)] })
                    .collect();
                // Pairings whose signed angle differs are only approximately rigid.
                if (signed[0].ray_angle(&signed[1]) - v2d[0].ray_angle(&v2d[1])).abs() > 1e-9 {
                    continue;
                }
                for i in 0..2 {
                    assert!((c.rotation * signed[i].as_vector() - v2d[i].as_vector()).norm() < 1e-6);
                }
            }
            assert_eq!(cands, enumerate_rotations(v2d, v3d).unwrap());
        }
    }
}
