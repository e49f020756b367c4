//! 3D vector math for poses, gaze directions, and the synthetic generator.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const ZERO: Vec3 = Vec3 {
    x: 0.0,
    y: 0.0,
    z: 0.0,
};

impl Vec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    /// Angle to `o` in radians, inputs need not be unit length.
    pub fn angle_to(self, o: Vec3) -> f64 {
        let d = self.normalized().dot(o.normalized());
        d.clamp(-1.0, 1.0).acos()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Spherical interpolation between unit vectors, `t` in [0, 1].
    /// Falls back to linear blending when the vectors are nearly (anti)parallel.
    pub fn slerp(self, to: Vec3, t: f64) -> Vec3 {
        let d = self.dot(to).clamp(-1.0, 1.0);
        let theta = d.acos();
        if theta.abs() < 1e-9 {
            return self;
        }
        let s = theta.sin();
        if s.abs() < 1e-9 {
            // Antiparallel: no unique great circle, nudge through an orthogonal axis.
            let axis = self.any_orthogonal();
            let half = self.rotate_about(axis, theta * t);
            return half.normalized();
        }
        let a = ((1.0 - t) * theta).sin() / s;
        let b = (t * theta).sin() / s;
        (self.scale(a) + to.scale(b)).normalized()
    }

    /// Rodrigues rotation of `self` about unit `axis` by `angle` radians.
    pub fn rotate_about(self, axis: Vec3, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        self.scale(c) + axis.cross(self).scale(s) + axis.scale(axis.dot(self) * (1.0 - c))
    }

    /// Some unit vector orthogonal to `self` (assumed nonzero).
    pub fn any_orthogonal(self) -> Vec3 {
        let other = if self.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        self.cross(other).normalized()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.scale(-1.0)
    }
}
