//! Rotation and planar geometry used by interpolation, matching and association.
//!
//! Quaternions are kept unit-norm with a non-negative scalar part, so `q` and
//! `-q` (the same rotation) have one stored form. Bird's-eye-view rectangles
//! put `length` along the heading and `width` across it.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on |q| when an operation requires unit input.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Below this arc angle slerp degrades to normalized lerp.
const SLERP_LINEAR_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        Vec3::new(self * v.x, self * v.y, self * v.z)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        let v = Vec3::from(a);
        if !v.is_finite() {
            return Err(serde::de::Error::custom("non-finite vector component"));
        }
        Ok(v)
    }
}

/// Unit quaternion `w + xi + yj + zk`, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes the sign. Fails on zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if !n2.is_finite() || n2 <= f64::EPSILON {
            return Err(Error::UnnormalizedQuaternion { norm: n2.sqrt() });
        }
        Ok(Self::normalized(w, x, y, z, n2))
    }

    fn normalized(w: f64, x: f64, y: f64, z: f64, n2: f64) -> Self {
        // Already-unit input is left bit-exact so serialization round-trips.
        let (w, x, y, z) = if (n2 - 1.0).abs() > 1e-12 {
            let n = n2.sqrt();
            (w / n, x / n, y / n, z / n)
        } else {
            (w, x, y, z)
        };
        if w < 0.0 {
            Quaternion {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Quaternion { w, x, y, z }
        }
    }

    /// Rotation by `yaw` radians about +z.
    pub fn from_yaw(yaw: f64) -> Self {
        let h = 0.5 * yaw;
        Self::normalized(h.cos(), 0.0, 0.0, h.sin(), 1.0)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = (axis.x * axis.x + axis.y * axis.y + axis.z * axis.z).sqrt();
        if !(n > 0.0) {
            return Err(Error::UnnormalizedQuaternion { norm: n });
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Quaternion::new(c, s * axis.x / n, s * axis.y / n, s * axis.z / n)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Heading about +z, in (-pi, pi].
    pub fn yaw(&self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        normalize_angle(siny.atan2(cosy))
    }

    /// Rotation angle between two orientations, in [0, pi].
    pub fn angle_to(&self, o: &Quaternion) -> f64 {
        let d = self.dot(o).abs().min(1.0);
        2.0 * d.acos()
    }

    /// True when `self` and `o` describe the same rotation within `tol`.
    pub fn same_rotation(&self, o: &Quaternion, tol: f64) -> bool {
        let d = self.dot(o);
        let s = if d < 0.0 { -1.0 } else { 1.0 };
        (self.w - s * o.w).abs() <= tol
            && (self.x - s * o.x).abs() <= tol
            && (self.y - s * o.y).abs() <= tol
            && (self.z - s * o.z).abs() <= tol
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Serialize for Quaternion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Quaternion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        // Files are expected to carry unit quaternions; tolerate float-printing drift only.
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(serde::de::Error::custom(format!(
                "unnormalized quaternion (norm {n})"
            )));
        }
        Quaternion::new(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Absolute angular difference wrapped to [0, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Linear interpolation of a translation between two timestamps.
///
/// Times may be in any unit as long as all three share it.
pub fn lerp_translation(tr_s: Vec3, tr_e: Vec3, t_s: f64, t_e: f64, t: f64) -> Result<Vec3> {
    if t_e == t_s {
        return Err(Error::ZeroLengthInterval);
    }
    if !(t_s < t_e) || t < t_s || t > t_e {
        return Err(Error::ExtrapolationRefused {
            start: t_s,
            end: t_e,
            t,
        });
    }
    let span = t_e - t_s;
    let ws = (t_e - t) / span;
    let we = (t - t_s) / span;
    Ok(ws * tr_s + we * tr_e)
}

/// Spherical linear interpolation; `u = 0` gives `q_s`, `u = 1` gives `q_e`.
pub fn slerp(q_s: Quaternion, q_e: Quaternion, u: f64) -> Result<Quaternion> {
    for q in [&q_s, &q_e] {
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::UnnormalizedQuaternion { norm: n });
        }
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::FractionOutOfRange(u));
    }
    if u == 0.0 {
        return Ok(q_s);
    }
    if u == 1.0 {
        return Ok(q_e);
    }

    let mut d = q_s.dot(&q_e);
    let mut e = q_e;
    // shortest arc
    if d < 0.0 {
        d = -d;
        e = Quaternion {
            w: -e.w,
            x: -e.x,
            y: -e.y,
            z: -e.z,
        };
    }
    let theta = d.min(1.0).acos();
    let (a, b) = if theta < SLERP_LINEAR_THRESHOLD {
        (1.0 - u, u)
    } else {
        let s = theta.sin();
        (((1.0 - u) * theta).sin() / s, (u * theta).sin() / s)
    };
    Quaternion::new(
        a * q_s.w + b * e.w,
        a * q_s.x + b * e.x,
        a * q_s.y + b * e.y,
        a * q_s.z + b * e.z,
    )
}

/// Ground-plane Euclidean distance; `z` is ignored.
pub fn center_distance(a: Vec3, b: Vec3) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Oriented rectangle in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevRect {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub length: f64,
    pub yaw: f64,
}

impl BevRect {
    pub fn new(center_x: f64, center_y: f64, width: f64, length: f64, yaw: f64) -> Result<Self> {
        if !(width > 0.0 && length > 0.0) || !width.is_finite() || !length.is_finite() {
            return Err(Error::InvalidRect(format!(
                "width {width} and length {length} must be positive"
            )));
        }
        if !(center_x.is_finite() && center_y.is_finite() && yaw.is_finite()) {
            return Err(Error::InvalidRect("non-finite center or yaw".into()));
        }
        Ok(BevRect {
            center_x,
            center_y,
            width,
            length,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn area(&self) -> f64 {
        self.width * self.length
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center_x + c * lx - s * ly,
                self.center_y + s * lx + c * ly,
            ]
        })
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = px - self.center_x;
        let dy = py - self.center_y;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= 0.5 * self.length && ly.abs() <= 0.5 * self.width
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Bird's-eye-view IoU of two oriented rectangles by polygon clipping.
pub fn bev_iou(a: &BevRect, b: &BevRect) -> f64 {
    // Circumscribed-circle rejection keeps disjoint pairs at exactly zero.
    let ra = 0.5 * a.width.hypot(a.length);
    let rb = 0.5 * b.width.hypot(b.length);
    let d = (a.center_x - b.center_x).hypot(a.center_y - b.center_y);
    if d >= ra + rb {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
