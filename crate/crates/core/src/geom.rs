//! Camera model, line primitives, rotation algebra and the SE(3) exponential.
//!
//! Poses map point-cloud coordinates to camera coordinates. Tangent vectors
//! are ordered translation first, rotation second, and pose updates are
//! applied on the left: `exp(delta) * pose`.

use nalgebra::{Matrix3, Point2, Point3, Unit, Vector3, Vector6, SVD};
use thiserror::Error;

use crate::scalar::Real;

/// Depth below which a transformed point is considered behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("matrix is rank deficient")]
    SingularInput,
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("segment back-projects to a degenerate plane")]
    DegenerateSegment,
    #[error("segment endpoints coincide")]
    ZeroLengthSegment,
    #[error("intrinsics must have positive focal lengths")]
    InvalidIntrinsics,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self, GeomError> {
        let finite = fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite();
        if !finite || fx <= T::zero() || fy <= T::zero() {
            return Err(GeomError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (o, l) = (T::zero(), T::one());
        Matrix3::new(self.fx, o, self.cx, o, self.fy, self.cy, o, o, l)
    }

    /// Ray `K^-1 [x, y, 1]` through a pixel (not normalized).
    pub fn back_project(&self, px: &Point2<T>) -> Vector3<T> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, T::one())
    }

    /// Pixel coordinates of a camera-frame point, without a depth check.
    #[inline]
    pub fn project_unchecked(&self, p: &Vector3<T>) -> Point2<T> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Image segment in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment2D<T: Real> {
    pub p: Point2<T>,
    pub q: Point2<T>,
}

impl<T: Real> LineSegment2D<T> {
    pub fn new(p: Point2<T>, q: Point2<T>) -> Result<Self, GeomError> {
        if (q - p).norm() <= T::zero() {
            return Err(GeomError::ZeroLengthSegment);
        }
        Ok(Self { p, q })
    }

    pub fn from_coords(x1: T, y1: T, x2: T, y2: T) -> Result<Self, GeomError> {
        Self::new(Point2::new(x1, y1), Point2::new(x2, y2))
    }

    pub fn length(&self) -> T {
        (self.q - self.p).norm()
    }

    pub fn midpoint(&self) -> Point2<T> {
        nalgebra::center(&self.p, &self.q)
    }

    /// Infinite line through both endpoints.
    pub fn line(&self) -> ImageLine<T> {
        ImageLine::through(&self.p, &self.q).expect("segment has distinct endpoints")
    }
}

/// 3D segment in scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment3D<T: Real> {
    pub p: Point3<T>,
    pub q: Point3<T>,
}

impl<T: Real> LineSegment3D<T> {
    pub fn new(p: Point3<T>, q: Point3<T>) -> Result<Self, GeomError> {
        if (q - p).norm() <= T::zero() {
            return Err(GeomError::ZeroLengthSegment);
        }
        Ok(Self { p, q })
    }

    pub fn length(&self) -> T {
        (self.q - self.p).norm()
    }

    pub fn center(&self) -> Point3<T> {
        nalgebra::center(&self.p, &self.q)
    }

    pub fn direction(&self) -> UnitDirection<T> {
        UnitDirection::new(self.q - self.p).expect("segment has distinct endpoints")
    }
}

/// Infinite image line `a x + b y + c = 0` with `a^2 + b^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageLine<T: Real> {
    a: T,
    b: T,
    c: T,
}

impl<T: Real> ImageLine<T> {
    /// Normalizes arbitrary coefficients. `None` when `a = b = 0`.
    pub fn new(a: T, b: T, c: T) -> Option<Self> {
        let n = (a * a + b * b).sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return None;
        }
        Some(Self { a: a / n, b: b / n, c: c / n })
    }

    pub fn through(p: &Point2<T>, q: &Point2<T>) -> Option<Self> {
        let h = Vector3::new(p.x, p.y, T::one()).cross(&Vector3::new(q.x, q.y, T::one()));
        Self::new(h.x, h.y, h.z)
    }

    pub fn coeffs(&self) -> Vector3<T> {
        Vector3::new(self.a, self.b, self.c)
    }

    /// Signed distance from a pixel to the line.
    #[inline]
    pub fn signed_distance(&self, u: &Point2<T>) -> T {
        self.a * u.x + self.b * u.y + self.c
    }
}

/// Unit 3-vector used for vanishing directions, 3D orientations and plane normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection<T: Real>(Unit<Vector3<T>>);

impl<T: Real> UnitDirection<T> {
    /// `None` for zero or non-finite vectors.
    pub fn new(v: Vector3<T>) -> Option<Self> {
        let n = v.norm();
        if !(n > T::zero()) || !n.is_finite() {
            return None;
        }
        Some(Self(Unit::new_unchecked(v / n)))
    }

    pub fn x() -> Self {
        Self(Vector3::x_axis())
    }

    pub fn y() -> Self {
        Self(Vector3::y_axis())
    }

    pub fn z() -> Self {
        Self(Vector3::z_axis())
    }

    #[inline]
    pub fn as_vector(&self) -> &Vector3<T> {
        self.0.as_ref()
    }

    pub fn neg(&self) -> Self {
        Self(-self.0)
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        self.0.dot(&other.0)
    }

    /// Angle between the two rays, in `[0, pi]`.
    pub fn ray_angle(&self, other: &Self) -> T {
        clamp_unit(self.dot(other)).acos()
    }

    /// Angle between the two undirected lines, in `[0, pi/2]`.
    pub fn line_angle(&self, other: &Self) -> T {
        clamp_unit(self.dot(other).abs()).acos()
    }

    /// Representative with positive z; for `|z| <= 1e-9` positive x, then positive y.
    pub fn canonical(&self) -> Self {
        let eps = T::lit(1e-9);
        let v = self.as_vector();
        let flip = if v.z.abs() > eps {
            v.z < T::zero()
        } else if v.x.abs() > eps {
            v.x < T::zero()
        } else {
            v.y < T::zero()
        };
        if flip {
            self.neg()
        } else {
            *self
        }
    }
}

/// Rigid transform from point-cloud to camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    #[inline]
    pub fn transform(&self, p: &Point3<T>) -> Vector3<T> {
        self.rotation * p.coords + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `exp(delta) * self`.
    pub fn perturbed(&self, delta: &PoseTangent<T>) -> Self {
        exp_se3(delta).compose(self)
    }

    /// Camera center in point-cloud coordinates.
    pub fn camera_center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Six-vector tangent coordinates `[translation; rotation]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTangent<T: Real>(pub Vector6<T>);

impl<T: Real> PoseTangent<T> {
    pub fn new(translation: Vector3<T>, rotation: Vector3<T>) -> Self {
        Self(Vector6::new(
            translation.x,
            translation.y,
            translation.z,
            rotation.x,
            rotation.y,
            rotation.z,
        ))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn translation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

#[inline]
fn clamp_unit<T: Real>(x: T) -> T {
    x.clamp(-T::one(), T::one())
}

pub fn skew<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let o = T::zero();
    Matrix3::new(o, -w.z, w.y, w.z, o, -w.x, -w.y, w.x, o)
}

/// Nearest rotation in Frobenius norm (polar factor with `det = +1`).
pub fn orthonormalize_rotation<T: Real>(m: &Matrix3<T>) -> Result<Matrix3<T>, GeomError> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(GeomError::SingularInput);
    }
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeomError::SingularInput),
    };
    let s = svd.singular_values;
    let (mut i_min, mut s_max) = (0, s[0]);
    for i in 1..3 {
        if s[i] < s[i_min] {
            i_min = i;
        }
        if s[i] > s_max {
            s_max = s[i];
        }
    }
    if !(s[i_min] > T::lit(1e-12) * s_max) {
        return Err(GeomError::SingularInput);
    }
    let mut u = u;
    if (u * v_t).determinant() < T::zero() {
        let mut col = u.column_mut(i_min);
        col.neg_mut();
    }
    Ok(u * v_t)
}

/// Closed-form SE(3) exponential.
pub fn exp_se3<T: Real>(xi: &PoseTangent<T>) -> Pose<T> {
    let rho = xi.translation();
    let omega = xi.rotation();
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b, c) = if theta < T::lit(1e-5) {
        // Taylor expansions of sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3.
        (
            T::one() - theta2 / T::lit(6.0),
            T::lit(0.5) - theta2 / T::lit(24.0),
            T::lit(1.0 / 6.0) - theta2 / T::lit(120.0),
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (T::one() - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let w = skew(&omega);
    let w2 = w * w;
    let rotation = Matrix3::identity() + w * a + w2 * b;
    let v = Matrix3::identity() + w * b + w2 * c;
    Pose::new(rotation, v * rho)
}

/// Inverse of [`exp_se3`] for rotation angles below pi.
pub fn log_se3<T: Real>(pose: &Pose<T>) -> PoseTangent<T> {
    let r = &pose.rotation;
    let cos_theta = clamp_unit((r.trace() - T::one()) * T::lit(0.5));
    let theta = cos_theta.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let omega = if theta < T::lit(1e-5) {
        vee * (T::lit(0.5) + theta * theta / T::lit(12.0))
    } else if T::pi() - theta < T::lit(1e-4) {
        // Near pi the skew part vanishes: read the axis from the symmetric part.
        let sym = (r + r.transpose()) * T::lit(0.5) - Matrix3::identity() * cos_theta;
        let (mut best, mut idx) = (T::zero(), 0);
        for i in 0..3 {
            if sym[(i, i)] > best {
                best = sym[(i, i)];
                idx = i;
            }
        }
        let mut axis: Vector3<T> = sym.column(idx).into_owned();
        axis /= axis.norm();
        if axis.dot(&vee) < T::zero() {
            axis = -axis;
        }
        axis * theta
    } else {
        vee * (theta / (T::lit(2.0) * theta.sin()))
    };
    let w = skew(&omega);
    let theta2 = omega.norm_squared();
    let th = theta2.sqrt();
    let k = if th < T::lit(1e-5) {
        T::lit(1.0 / 12.0) + theta2 / T::lit(720.0)
    } else {
        let (s, c) = th.sin_cos();
        (T::one() - th * s / (T::lit(2.0) * (T::one() - c))) / theta2
    };
    let v_inv = Matrix3::identity() - w * T::lit(0.5) + w * w * k;
    PoseTangent::new(v_inv * pose.translation, omega)
}

/// Projects a point-cloud point into the image.
pub fn project_point<T: Real>(
    k: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    p: &Point3<T>,
) -> Result<Point2<T>, GeomError> {
    let pc = pose.transform(p);
    if pc.z <= T::lit(MIN_DEPTH) {
        return Err(GeomError::BehindCamera);
    }
    Ok(k.project_unchecked(&pc))
}

/// Normal of the plane through the camera center and the segment (sign arbitrary).
pub fn interpretation_plane_normal<T: Real>(
    k: &CameraIntrinsics<T>,
    seg: &LineSegment2D<T>,
) -> Result<UnitDirection<T>, GeomError> {
    let rp = k.back_project(&seg.p).normalize();
    let rq = k.back_project(&seg.q).normalize();
    let n = rp.cross(&rq);
    if n.norm() < T::lit(1e-12) {
        return Err(GeomError::DegenerateSegment);
    }
    UnitDirection::new(n).ok_or(GeomError::DegenerateSegment)
}

/// Geodesic angle of `Ra^T Rb`, in `[0, pi]`.
pub fn rotation_geodesic_error<T: Real>(ra: &Matrix3<T>, rb: &Matrix3<T>) -> T {
    // atan2 keeps full precision near zero and pi, where acos of the trace does not.
    let m = ra.transpose() * rb;
    let cos = (m.trace() - T::one()) * T::lit(0.5);
    let sin = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() * T::lit(0.5);
    sin.atan2(cos)
}
