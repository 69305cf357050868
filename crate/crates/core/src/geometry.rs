//! Rigid poses, the task-space pose distance, object keypoints and the
//! stable-pose regions objects are allowed to rest in.
//!
//! Orientations are unit quaternions stored with a non-negative scalar part.
//! Euler angles follow the `R = Rz(yaw) * Ry(pitch) * Rx(roll)` convention.

use std::f64::consts::{PI, TAU};

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

/// Default weight of the rotational term in [`se3_distance`].
pub const DEFAULT_ALPHA: f64 = 0.1;

/// A rigid-body pose in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        Unit::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose, renormalizing the rotation and fixing its sign.
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(orientation.into_inner());
        Self {
            position,
            orientation: canonical(q),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_xyz_rpy(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        )
    }

    /// Builds a pose from raw components, quaternion ordered `(w, x, y, z)`.
    ///
    /// The quaternion must already be unit length to within `1e-9`.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        if position.iter().chain(wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("pose components must be finite"));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "quaternion norm {} is not within 1e-9 of 1",
                q.norm()
            )));
        }
        Ok(Self {
            position: Vector3::from(position),
            orientation: canonical(Unit::new_unchecked(q)),
        })
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `(roll, pitch, yaw)` of the orientation.
    pub fn rpy(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.wxyz().iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.orientation * other.position + self.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    /// Expresses a world-frame point in this pose's frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn with_position(&self, position: Vector3<f64>) -> Pose {
        Pose {
            position,
            orientation: self.orientation,
        }
    }

    /// Geodesic angle of the relative rotation between two orientations.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        if self.orientation == other.orientation {
            return 0.0;
        }
        let rel = self.orientation.inverse() * other.orientation;
        let q = rel.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: self.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        Pose::from_parts(repr.position, repr.orientation).map_err(serde::de::Error::custom)
    }
}

/// Translation distance plus `alpha` times the geodesic rotation angle.
pub fn se3_distance(a: &Pose, b: &Pose, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(invalid("se3_distance on a non-finite pose"));
    }
    Ok(se3_distance_unchecked(a, b, alpha))
}

/// [`se3_distance`] without input validation, for inner loops over poses
/// already known to be finite.
#[inline]
pub fn se3_distance_unchecked(a: &Pose, b: &Pose, alpha: f64) -> f64 {
    (a.position - b.position).norm() + alpha * a.angle_to(b)
}

/// Eight body-frame points attached to a rigid body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct KeypointTemplate {
    points: [Vector3<f64>; 8],
}

impl KeypointTemplate {
    pub fn new(points: [Vector3<f64>; 8]) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(invalid("keypoint template has non-finite coordinates"));
        }
        Ok(Self { points })
    }

    /// The eight vertices of an axis-aligned box centred on the origin.
    pub fn cuboid(size_x: f64, size_y: f64, size_z: f64) -> Result<Self> {
        let (hx, hy, hz) = (size_x / 2.0, size_y / 2.0, size_z / 2.0);
        let mut points = [Vector3::zeros(); 8];
        for (i, p) in points.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -hx } else { hx };
            let sy = if i & 2 == 0 { -hy } else { hy };
            let sz = if i & 4 == 0 { -hz } else { hz };
            *p = Vector3::new(sx, sy, sz);
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[Vector3<f64>; 8] {
        &self.points
    }
}

impl TryFrom<Vec<[f64; 3]>> for KeypointTemplate {
    type Error = String;

    fn try_from(v: Vec<[f64; 3]>) -> std::result::Result<Self, Self::Error> {
        let points: [[f64; 3]; 8] = v
            .try_into()
            .map_err(|v: Vec<[f64; 3]>| format!("expected exactly 8 keypoints, got {}", v.len()))?;
        KeypointTemplate::new(points.map(Vector3::from)).map_err(|e| e.to_string())
    }
}

impl From<KeypointTemplate> for Vec<[f64; 3]> {
    fn from(t: KeypointTemplate) -> Self {
        t.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

/// World-frame positions of the template points for a body at `pose`.
pub fn keypoints_of(pose: &Pose, template: &KeypointTemplate) -> [Vector3<f64>; 8] {
    template.points.map(|p| pose.transform_point(&p))
}

/// Euclidean norm of the stacked difference of two point sets.
pub fn stacked_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(invalid(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + self.width() * rng.random::<f64>()
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = String;

    fn try_from(v: [f64; 2]) -> std::result::Result<Self, Self::Error> {
        Interval::new(v[0], v[1]).map_err(|e| e.to_string())
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// A possibly wrapping yaw interval `[start, start + width]`, `width <= 2π`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YawInterval {
    pub start: f64,
    pub width: f64,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

impl YawInterval {
    pub fn new(start: f64, width: f64) -> Result<Self> {
        if !(start.is_finite() && width.is_finite()) || !(0.0..=TAU).contains(&width) {
            return Err(invalid(format!("bad yaw interval start={start} width={width}")));
        }
        Ok(Self { start, width })
    }

    pub fn full() -> Self {
        Self { start: 0.0, width: TAU }
    }

    pub fn fixed(yaw: f64) -> Self {
        Self { start: yaw, width: 0.0 }
    }

    fn offset(&self, yaw: f64) -> f64 {
        (yaw - self.start).rem_euclid(TAU)
    }

    pub fn contains(&self, yaw: f64, tol: f64) -> bool {
        if self.width + 2.0 * tol >= TAU {
            return true;
        }
        let d = self.offset(yaw);
        d <= self.width + tol || d >= TAU - tol
    }

    /// Nearest yaw inside the interval.
    pub fn clamp(&self, yaw: f64) -> f64 {
        if self.contains(yaw, 0.0) {
            return yaw;
        }
        let d = self.offset(yaw);
        // Distance past the end versus distance before the start.
        if d - self.width <= TAU - d {
            self.start + self.width
        } else {
            self.start
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.start + self.width * rng.random::<f64>()
    }
}

/// Intersection of half-spaces `normal · p <= offset`, treated as solid.
///
/// A single half-space models an infinite slab such as a floor; several
/// bound a box such as a table top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub half_spaces: Vec<HalfSpace>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Obstacle {
    /// Axis-aligned box `[min, max]`.
    pub fn aabb(min: [f64; 3], max: [f64; 3]) -> Self {
        let mut half_spaces = Vec::with_capacity(6);
        for axis in 0..3 {
            let mut n = [0.0; 3];
            n[axis] = 1.0;
            half_spaces.push(HalfSpace { normal: n, offset: max[axis] });
            n[axis] = -1.0;
            half_spaces.push(HalfSpace { normal: n, offset: -min[axis] });
        }
        Self { half_spaces }
    }

    /// True when `p` lies strictly inside every half-space.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        !self.half_spaces.is_empty()
            && self
                .half_spaces
                .iter()
                .all(|h| Vector3::from(h.normal).dot(p) < h.offset)
    }
}

/// A set of stable object poses: an SE(2) box in `frame` at a fixed height
/// with a finite set of admissible `(roll, pitch)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    #[serde(default)]
    pub frame: Pose,
    pub x: Interval,
    pub y: Interval,
    pub yaw: YawInterval,
    pub fixed_z: f64,
    pub roll_pitch: Vec<(f64, f64)>,
    /// Solid volumes near the region; grasps whose fingers enter one are infeasible.
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// Objects pushed past the planar bounds fall off instead of being
    /// stopped at the boundary.
    #[serde(default)]
    pub drop_outside: bool,
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        if self.roll_pitch.is_empty() {
            return Err(invalid(format!("region {} has no admissible roll/pitch", self.id)));
        }
        Interval::new(self.x.lo, self.x.hi)?;
        Interval::new(self.y.lo, self.y.hi)?;
        YawInterval::new(self.yaw.start, self.yaw.width)?;
        if !self.fixed_z.is_finite() {
            return Err(invalid(format!("region {} has non-finite z", self.id)));
        }
        Ok(())
    }

    /// Index of the admissible `(roll, pitch)` class matching `pose`, if any.
    pub fn orientation_class(&self, pose: &Pose, tol: f64) -> Option<usize> {
        let local = self.frame.inverse().compose(pose);
        let (roll, pitch, _) = local.rpy();
        self.roll_pitch.iter().position(|&(r, p)| {
            wrap_angle(roll - r).abs() <= tol && wrap_angle(pitch - p).abs() <= tol
        })
    }

    /// Pose in the region frame built from SE(2) coordinates and a class.
    pub fn pose_at(&self, x: f64, y: f64, yaw: f64, class: usize) -> Pose {
        let (roll, pitch) = self.roll_pitch[class];
        self.frame
            .compose(&Pose::from_xyz_rpy(x, y, self.fixed_z, roll, pitch, yaw))
    }

    /// Projects `pose` onto the region: planar coordinates and yaw are clamped,
    /// height and roll/pitch are snapped to the closest admissible values.
    pub fn project(&self, pose: &Pose) -> Pose {
        let local = self.frame.inverse().compose(pose);
        let (roll, pitch, yaw) = local.rpy();
        let class = self
            .roll_pitch
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = wrap_angle(roll - a.0).abs() + wrap_angle(pitch - a.1).abs();
                let db = wrap_angle(roll - b.0).abs() + wrap_angle(pitch - b.1).abs();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        let p = local.position();
        self.pose_at(self.x.clamp(p.x), self.y.clamp(p.y), self.yaw.clamp(yaw), class)
    }

    /// Where a disturbed object comes to rest: `pose` itself if it is still
    /// in the region or the region drops objects, else its projection.
    pub fn settle(&self, pose: &Pose) -> Pose {
        if self.drop_outside || region_contains(self, pose, 0.0) {
            *pose
        } else {
            self.project(pose)
        }
    }

    pub fn blocks(&self, p: &Vector3<f64>) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }
}

/// Whether `pose` lies in `region` to within `tol` on every coordinate.
pub fn region_contains(region: &Region, pose: &Pose, tol: f64) -> bool {
    let local = region.frame.inverse().compose(pose);
    let p = local.position();
    if !(region.x.contains(p.x, tol) && region.y.contains(p.y, tol)) {
        return false;
    }
    if (p.z - region.fixed_z).abs() > tol {
        return false;
    }
    let (roll, pitch, yaw) = local.rpy();
    let rp_ok = region
        .roll_pitch
        .iter()
        .any(|&(r, pt)| wrap_angle(roll - r).abs() <= tol && wrap_angle(pitch - pt).abs() <= tol);
    rp_ok && region.yaw.contains(yaw, tol)
}

/// Uniform sample over the region's planar box, yaw interval and
/// admissible roll/pitch set.
pub fn sample_pose<R: Rng + ?Sized>(region: &Region, rng: &mut R) -> Pose {
    let x = region.x.sample(rng);
    let y = region.y.sample(rng);
    let yaw = region.yaw.sample(rng);
    let class = if region.roll_pitch.len() == 1 {
        0
    } else {
        rng.random_range(0..region.roll_pitch.len())
    };
    region.pose_at(x, y, yaw, class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_z(a: f64) -> Matrix3<f64> {
        Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
    }

    fn table() -> Region {
        Region {
            id: "table".into(),
            frame: Pose::identity(),
            x: Interval::new(-0.2, 0.2).unwrap(),
            y: Interval::new(-0.1, 0.1).unwrap(),
            yaw: YawInterval::full(),
            fixed_z: 0.01,
            roll_pitch: vec![(0.0, 0.0), (PI, 0.0)],
            obstacles: vec![],
            drop_outside: false,
        }
    }

    #[test]
    fn distance_examples() {
        let a = Pose::from_xyz_rpy(0.1, 0.2, 0.3, 0.4, 0.1, -1.0);
        assert_eq!(se3_distance(&a, &a, 0.1).unwrap(), 0.0);

        let b = Pose::from_translation(0.03, 0.04, 0.0);
        let d = se3_distance(&Pose::identity(), &b, 0.1).unwrap();
        assert!((d - 0.05).abs() < 1e-12);

        // Oracle: angle from the trace of explicit rotation matrices.
        let r1: Matrix3<f64> = Matrix3::identity();
        let r2 = rot_z(PI / 2.0);
        let theta = (((r1.transpose() * r2).trace() - 1.0) / 2.0).acos();
        let c = Pose::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, PI / 2.0);
        let d = se3_distance(&Pose::identity(), &c, 0.1).unwrap();
        assert!((d - 0.1 * theta).abs() < 1e-9);
        assert!((d - 0.157_079_632_679_489_66).abs() < 1e-9);
    }

    #[test]
    fn distance_rejects_bad_inputs() {
        let a = Pose::identity();
        assert!(se3_distance(&a, &a, -1.0).is_err());
        assert!(se3_distance(&a, &a, f64::NAN).is_err());
        let bad = a.with_position(Vector3::new(f64::INFINITY, 0.0, 0.0));
        assert!(se3_distance(&a, &bad, 0.1).is_err());
        assert!(Pose::from_parts([0.0; 3], [1.0, 1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sign_is_canonical() {
        let p = Pose::from_parts([0.0; 3], [-1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        let q = Pose::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, 3.0 * PI / 2.0);
        assert!(q.wxyz()[0] >= 0.0);
    }

    #[test]
    fn keypoint_examples() {
        let t = KeypointTemplate::cuboid(0.1, 0.06, 0.004).unwrap();
        assert_eq!(keypoints_of(&Pose::identity(), &t), *t.points());
        let shifted = keypoints_of(&Pose::from_translation(1.0, 0.0, 0.0), &t);
        for (a, b) in shifted.iter().zip(t.points()) {
            assert_eq!(a - b, Vector3::new(1.0, 0.0, 0.0));
        }
        let mut pts = [Vector3::zeros(); 8];
        pts[0] = Vector3::new(1.0, 0.0, 0.0);
        let t = KeypointTemplate::new(pts).unwrap();
        let rotated = keypoints_of(&Pose::from_xyz_rpy(0.0, 0.0, 0.0, 0.0, 0.0, PI), &t);
        let expect = rot_z(PI) * Vector3::new(1.0, 0.0, 0.0);
        assert!((rotated[0] - expect).norm() < 1e-12);
        assert!((rotated[0] - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn keypoint_template_needs_eight_points() {
        let v: Vec<[f64; 3]> = vec![[0.0; 3]; 7];
        assert!(KeypointTemplate::try_from(v).is_err());
    }

    #[test]
    fn region_contains_examples() {
        let r = table();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_pose(&r, &mut rng);
        assert!(region_contains(&r, &p, 1e-9));

        let tol = 1e-6;
        let high = p.with_position(p.position() + Vector3::new(0.0, 0.0, 10.0 * tol));
        assert!(!region_contains(&r, &high, tol));

        // Oracle: the flipped pose decomposes to roll = ±π, pitch = 0.
        let flipped = Pose::from_xyz_rpy(0.0, 0.0, 0.01, PI, 0.0, 0.7);
        let (roll, pitch, _) = flipped.rpy();
        assert!((roll.abs() - PI).abs() < 1e-9 && pitch.abs() < 1e-9);
        assert!(region_contains(&r, &flipped, 1e-9));
        let tilted = Pose::from_xyz_rpy(0.0, 0.0, 0.01, PI / 2.0, 0.0, 0.0);
        assert!(!region_contains(&r, &tilted, 1e-6));
    }

    #[test]
    fn degenerate_region_samples_unique_pose() {
        let r = Region {
            x: Interval::point(0.1),
            y: Interval::point(-0.05),
            yaw: YawInterval::fixed(0.3),
            roll_pitch: vec![(0.0, 0.0)],
            ..table()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let want = Pose::from_xyz_rpy(0.1, -0.05, 0.01, 0.0, 0.0, 0.3);
        for _ in 0..10 {
            let p = sample_pose(&r, &mut rng);
            assert!(se3_distance(&p, &want, 1.0).unwrap() < 1e-12);
        }
    }

    #[test]
    fn yaw_is_uniform() {
        let r = table();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let yaws: Vec<f64> = (0..n)
            .map(|_| {
                let p = sample_pose(&r, &mut rng);
                let local = r.frame.inverse().compose(&p);
                local.rpy().2.rem_euclid(TAU)
            })
            .collect();
        let mean = yaws.iter().sum::<f64>() / n as f64;
        let se = (TAU / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - PI).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn wrapping_yaw_interval() {
        let y = YawInterval::new(3.0 * PI / 2.0, PI).unwrap();
        assert!(y.contains(0.0, 0.0));
        assert!(y.contains(-PI / 4.0, 0.0));
        assert!(!y.contains(PI, 1e-9));
        assert!((y.clamp(PI / 2.0 + 0.1) - (3.0 * PI / 2.0 + PI)).abs() < 1e-12);
        assert!(YawInterval::new(0.0, 7.0).is_err());
    }

    #[test]
    fn obstacle_box() {
        let o = Obstacle::aabb([-1.0, -0.2, -1.0], [1.0, 0.2, 0.0]);
        assert!(o.contains(&Vector3::new(0.0, 0.0, -0.01)));
        assert!(!o.contains(&Vector3::new(0.0, 0.21, -0.01)));
        assert!(!o.contains(&Vector3::new(0.0, 0.0, 0.01)));
    }

    #[test]
    fn pose_json_round_trip_is_exact() {
        let p = Pose::from_xyz_rpy(0.123456789, -1e-7, 3.3, 0.3, -0.2, 2.9);
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            prop::array::uniform4(-1.0f64..1.0),
        )
            .prop_filter("non-degenerate quaternion", |(_, q)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(p, q)| {
                Pose::new(
                    Vector3::from(p),
                    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])),
                )
            })
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let d = |x: &Pose, y: &Pose| se3_distance(x, y, DEFAULT_ALPHA).unwrap();
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-9);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
            prop_assert!(d(&a, &a) < 1e-9);
        }

        #[test]
        fn distance_is_left_invariant(a in arb_pose(), b in arb_pose(), g in arb_pose()) {
            let d0 = se3_distance(&a, &b, DEFAULT_ALPHA).unwrap();
            let d1 = se3_distance(&g.compose(&a), &g.compose(&b), DEFAULT_ALPHA).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn compose_keeps_unit_norm(a in arb_pose(), b in arb_pose()) {
            let c = a.compose(&b);
            let n = c.wxyz().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
            prop_assert!(c.wxyz()[0] >= 0.0);
        }

        #[test]
        fn keypoints_commute_with_composition(a in arb_pose(), b in arb_pose()) {
            let t = KeypointTemplate::cuboid(0.1, 0.2, 0.03).unwrap();
            let lhs = keypoints_of(&a.compose(&b), &t);
            let rhs = keypoints_of(&b, &t).map(|p| a.transform_point(&p));
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).norm() < 1e-9);
            }
        }

        #[test]
        fn samples_stay_in_region(seed in any::<u64>()) {
            let r = Region { frame: Pose::from_xyz_rpy(0.3, -0.1, 0.5, 0.0, 0.0, 0.4), ..table() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let p = sample_pose(&r, &mut rng);
                prop_assert!(region_contains(&r, &p, 1e-9));
                let q = r.project(&p);
                prop_assert!(se3_distance(&p, &q, 1.0).unwrap() < 1e-9);
            }
        }
    }
}
