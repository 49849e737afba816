use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{Float, FloatConst};

use crate::{QuatError, Result};

/// `q0 + q1 i + q2 j + q3 k`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion<T = f64> {
    pub q0: T,
    pub q1: T,
    pub q2: T,
    pub q3: T,
}

/// Polar decomposition `|q| (cos θ + v sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polar<T = f64> {
    pub magnitude: T,
    pub theta: T,
    /// Pure unit quaternion. For pure-real inputs the vector part is zero and
    /// the axis is undefined; `i` is returned by convention, which still
    /// reconstructs exactly because `sin θ = 0` there.
    pub axis: Quaternion<T>,
}

impl<T: Float> Quaternion<T> {
    pub const fn new(q0: T, q1: T, q2: T, q3: T) -> Self {
        Quaternion { q0, q1, q2, q3 }
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    pub fn zero() -> Self {
        Quaternion::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn one() -> Self {
        Quaternion::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn i() -> Self {
        Quaternion::new(T::zero(), T::one(), T::zero(), T::zero())
    }

    pub fn j() -> Self {
        Quaternion::new(T::zero(), T::zero(), T::one(), T::zero())
    }

    pub fn k() -> Self {
        Quaternion::new(T::zero(), T::zero(), T::zero(), T::one())
    }

    pub fn pure(v: [T; 3]) -> Self {
        Quaternion::new(T::zero(), v[0], v[1], v[2])
    }

    pub fn vector(self) -> [T; 3] {
        [self.q1, self.q2, self.q3]
    }

    pub fn is_pure(self) -> bool {
        self.q0 == T::zero()
    }

    /// Hamilton product `self ⊗ rhs`, expanded component by component.
    pub fn hamilton(self, p: Self) -> Self {
        let q = self;
        Quaternion {
            q0: q.q0 * p.q0 - q.q1 * p.q1 - q.q2 * p.q2 - q.q3 * p.q3,
            q1: q.q0 * p.q1 + q.q1 * p.q0 + q.q2 * p.q3 - q.q3 * p.q2,
            q2: q.q0 * p.q2 - q.q1 * p.q3 + q.q2 * p.q0 + q.q3 * p.q1,
            q3: q.q0 * p.q3 + q.q1 * p.q2 - q.q2 * p.q1 + q.q3 * p.q0,
        }
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.q0, -self.q1, -self.q2, -self.q3)
    }

    /// Four-component dot product (the real scalar product).
    pub fn dot(self, p: Self) -> T {
        self.q0 * p.q0 + self.q1 * p.q1 + self.q2 * p.q2 + self.q3 * p.q3
    }

    pub fn norm_sqr(self) -> T {
        self.dot(self)
    }

    /// Euclidean norm in R^4.
    pub fn norm(self) -> T {
        // hypot chain avoids overflow for large components
        self.q0.hypot(self.q1).hypot(self.q2.hypot(self.q3))
    }

    pub fn scale(self, s: T) -> Self {
        Quaternion::new(self.q0 * s, self.q1 * s, self.q2 * s, self.q3 * s)
    }

    pub fn inverse(self) -> Result<Self> {
        let n2 = self.norm_sqr();
        if n2 == T::zero() {
            return Err(QuatError::NonInvertible);
        }
        Ok(self.conjugate().scale(T::one() / n2))
    }

    /// Product of two pure quaternions via `-a·b + a×b`.
    pub fn pure_product(self, b: Self) -> Result<Self> {
        for q in [self, b] {
            if !q.is_pure() {
                return Err(QuatError::NotPure(q.q0.to_f64().unwrap_or(f64::NAN)));
            }
        }
        let c = cross(self.vector(), b.vector());
        Ok(Quaternion::new(
            -(self.q1 * b.q1 + self.q2 * b.q2 + self.q3 * b.q3),
            c[0],
            c[1],
            c[2],
        ))
    }

    /// General involution `-v q v` about a pure unit axis.
    pub fn involution(self, axis: Self, tol: T) -> Result<Self> {
        if axis.q0.abs() > tol || (axis.norm() - T::one()).abs() > tol {
            let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
            return Err(QuatError::NotPureUnit(f(axis.q0), f(axis.q1), f(axis.q2), f(axis.q3)));
        }
        Ok(-(axis.hamilton(self).hamilton(axis)))
    }

    /// The three perpendicular involutions about `i`, `j`, `k`, in closed form.
    pub fn involution_i(self) -> Self {
        Quaternion::new(self.q0, self.q1, -self.q2, -self.q3)
    }

    pub fn involution_j(self) -> Self {
        Quaternion::new(self.q0, -self.q1, self.q2, -self.q3)
    }

    pub fn involution_k(self) -> Self {
        Quaternion::new(self.q0, -self.q1, -self.q2, self.q3)
    }
}

impl<T: Float + FloatConst> Quaternion<T> {
    pub fn polar_form(self) -> Result<Polar<T>> {
        let magnitude = self.norm();
        if magnitude == T::zero() {
            return Err(QuatError::ZeroQuaternion);
        }
        let vnorm = self.q1.hypot(self.q2).hypot(self.q3);
        // atan2 keeps theta in [0, π] and is accurate near both ends
        let theta = vnorm.atan2(self.q0);
        let axis = if vnorm == T::zero() {
            Quaternion::i()
        } else {
            Quaternion::pure(self.vector()).scale(T::one() / vnorm)
        };
        Ok(Polar { magnitude, theta, axis })
    }
}

impl<T: Float> Polar<T> {
    pub fn reconstruct(&self) -> Quaternion<T> {
        let (s, c) = self.theta.sin_cos();
        Quaternion::new(c, self.axis.q1 * s, self.axis.q2 * s, self.axis.q3 * s).scale(self.magnitude)
    }
}

fn cross<T: Float>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl<T: Float> Mul for Quaternion<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        self.hamilton(rhs)
    }
}

impl<T: Float> Add for Quaternion<T> {
    type Output = Self;

    fn add(self, p: Self) -> Self {
        Quaternion::new(self.q0 + p.q0, self.q1 + p.q1, self.q2 + p.q2, self.q3 + p.q3)
    }
}

impl<T: Float> Sub for Quaternion<T> {
    type Output = Self;

    fn sub(self, p: Self) -> Self {
        Quaternion::new(self.q0 - p.q0, self.q1 - p.q1, self.q2 - p.q2, self.q3 - p.q3)
    }
}

impl<T: Float> Neg for Quaternion<T> {
    type Output = Self;

    fn neg(self) -> Self {
        Quaternion::new(-self.q0, -self.q1, -self.q2, -self.q3)
    }
}
