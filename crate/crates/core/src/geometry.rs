//! Planar rigid-body math: 2D vectors, 3-DoF poses, similarity warps and
//! angle arithmetic.
//!
//! Angles are radians everywhere in the library. Yaw is kept in `(-π, π]`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A 3D sensor point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn xy(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

pub type PointCloud = Vec<Point3>;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Planar pose: position in meters and yaw (azimuth) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// Maps a point from the sensor frame into the global frame.
    pub fn local_to_global(&self, p: Vec2) -> Vec2 {
        p.rotated(self.yaw) + self.translation()
    }

    pub fn global_to_local(&self, g: Vec2) -> Vec2 {
        (g - self.translation()).rotated(-self.yaw)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.local_to_global(other.translation());
        Pose2::new(t.x, t.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let t = (-self.translation()).rotated(-self.yaw);
        Pose2::new(t.x, t.y, -self.yaw)
    }
}

/// Free-function forms used by callers that prefer them.
pub fn local_to_global(pose: &Pose2, p: Vec2) -> Vec2 {
    pose.local_to_global(p)
}

pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn invert(a: &Pose2) -> Pose2 {
    a.inverse()
}

/// `p ↦ scale · R(rotation) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity2 {
    pub rotation: f64,
    pub translation: Vec2,
    pub scale: f64,
}

impl Default for Similarity2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Similarity2 {
    pub const IDENTITY: Similarity2 = Similarity2 {
        rotation: 0.0,
        translation: Vec2::ZERO,
        scale: 1.0,
    };

    pub fn new(rotation: f64, translation: Vec2, scale: f64) -> Self {
        assert!(scale > 0.0 && scale.is_finite(), "similarity scale must be positive");
        Self {
            rotation,
            translation,
            scale,
        }
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotated(self.rotation) * self.scale + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Similarity2) -> Similarity2 {
        Similarity2 {
            rotation: self.rotation + other.rotation,
            translation: self.apply(other.translation),
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Similarity2 {
        let inv_scale = 1.0 / self.scale;
        Similarity2 {
            rotation: -self.rotation,
            translation: (-self.translation).rotated(-self.rotation) * inv_scale,
            scale: inv_scale,
        }
    }
}

impl From<Pose2> for Similarity2 {
    fn from(p: Pose2) -> Self {
        Similarity2 {
            rotation: p.yaw,
            translation: p.translation(),
            scale: 1.0,
        }
    }
}
