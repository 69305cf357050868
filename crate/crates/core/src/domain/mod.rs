//! World state, the robot and grasp proxies, skill applicability and the
//! built-in toy domains.
//!
//! A [`Domain`] is immutable once loaded. Everything that consumes randomness
//! takes an explicit rng so callers own their streams.

mod config;
mod problem;
mod sim;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3x4, Matrix4x3, Vector3, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::connector::{ConnectorParams, RewardParams};
use crate::error::{config, Error, Result};
use crate::geometry::{
    keypoints_of, region_contains, wrap_angle, Interval, KeypointTemplate, Pose, Region,
};

pub use config::{builtin_source, DomainConfig, BUILTIN_NAMES};
pub use problem::{generate_problem, generate_problems, PoseSampler, Problem, ProblemSpec};
pub use sim::{connector_trajectory, simulate, Invocation, SimOutcome};

/// Number of robot joints: seven arm joints followed by two gripper fingers.
pub const N_JOINTS: usize = 9;

pub type JointVector = [f64; N_JOINTS];

/// Full world state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q_obj: Pose,
    pub dq_obj: [f64; 6],
    pub q_r: JointVector,
    pub dq_r: JointVector,
    pub gripper_width: f64,
}

impl State {
    /// A stationary state.
    pub fn at_rest(q_obj: Pose, q_r: JointVector) -> Self {
        Self {
            q_obj,
            dq_obj: [0.0; 6],
            q_r,
            dq_r: [0.0; N_JOINTS],
            gripper_width: q_r[7] + q_r[8],
        }
    }

    /// Replaces the robot configuration, keeping the gripper width in sync.
    pub fn set_q_r(&mut self, q_r: JointVector) {
        self.q_r = q_r;
        self.gripper_width = q_r[7] + q_r[8];
    }

    pub fn zero_velocities(&mut self) {
        self.dq_obj = [0.0; 6];
        self.dq_r = [0.0; N_JOINTS];
    }

    pub fn is_finite(&self) -> bool {
        self.q_obj.is_finite()
            && self
                .dq_obj
                .iter()
                .chain(&self.q_r)
                .chain(&self.dq_r)
                .chain(std::iter::once(&self.gripper_width))
                .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    Prehensile,
    NonPrehensile,
}

/// A pose coordinate that a non-prehensile skill cannot change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

/// Standard deviations of the planar error left by a successful skill.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessNoise {
    pub position: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug)]
pub struct SkillSpec {
    pub id: String,
    pub kind: SkillKind,
    pub region_ids: Vec<String>,
    pub(crate) region_idx: Vec<usize>,
    pub locked_axes: Vec<Axis>,
    pub success_noise: SuccessNoise,
    pub failure_prob: f64,
    pub n_sim: u32,
    /// End-effector offset from the object position at contact (world frame).
    pub approach_offset: Vector3<f64>,
    pub rewards: RewardParams,
}

impl SkillSpec {
    pub fn regions(&self) -> &[usize] {
        &self.region_idx
    }
}

/// A predefined grasp in the object frame. The grasp frame's y axis is the
/// finger closing direction.
#[derive(Clone, Debug)]
pub struct GraspModel {
    pub templates: Vec<Pose>,
    pub reach_center: Vector3<f64>,
    pub reach_radius: f64,
    /// Distance of each finger pad from the grasp frame origin.
    pub finger_half_span: f64,
}

impl GraspModel {
    pub fn grasp_width(&self) -> f64 {
        2.0 * self.finger_half_span
    }

    pub fn finger_points(&self, grasp_world: &Pose) -> [Vector3<f64>; 2] {
        let s = self.finger_half_span;
        [
            grasp_world.transform_point(&Vector3::new(0.0, s, 0.0)),
            grasp_world.transform_point(&Vector3::new(0.0, -s, 0.0)),
        ]
    }
}

/// Linear forward-kinematics proxy.
///
/// End-effector position is `base + A * q[0..4]`; orientation is
/// `RPY(q[4], q[5], q[6])`; fingers are `q[7]` and `q[8]`.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub base: Vector3<f64>,
    pub position_map: Matrix3x4<f64>,
    pinv: Matrix4x3<f64>,
    pub joint_limits: [Interval; N_JOINTS],
    pub ee_keypoints: KeypointTemplate,
}

impl Kinematics {
    pub fn new(
        base: Vector3<f64>,
        position_map: Matrix3x4<f64>,
        joint_limits: [Interval; N_JOINTS],
        ee_keypoints: KeypointTemplate,
    ) -> Result<Self> {
        let gram = position_map * position_map.transpose();
        let inv = gram
            .try_inverse()
            .ok_or_else(|| config("kinematics.position_map must have full row rank"))?;
        Ok(Self {
            base,
            position_map,
            pinv: position_map.transpose() * inv,
            joint_limits,
            ee_keypoints,
        })
    }

    pub fn ee_pose(&self, q: &JointVector) -> Pose {
        let p = self.base + self.position_map * Vector4::new(q[0], q[1], q[2], q[3]);
        Pose::from_xyz_rpy(p.x, p.y, p.z, q[4], q[5], q[6])
    }

    /// Fingertip positions for the configuration's gripper opening.
    pub fn tips(&self, q: &JointVector) -> [Vector3<f64>; 2] {
        tips_at(&self.ee_pose(q), q[7] + q[8])
    }

    pub fn ee_keypoints(&self, q: &JointVector) -> [Vector3<f64>; 8] {
        keypoints_of(&self.ee_pose(q), &self.ee_keypoints)
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, lim)| lim.contains(*v, 1e-12))
    }

    /// Minimum-norm inverse kinematics; `None` when a joint limit is violated.
    pub fn ik(&self, ee: &Pose, width: f64) -> Option<JointVector> {
        let q4 = self.pinv * (ee.position() - self.base);
        let (roll, pitch, yaw) = ee.rpy();
        let half = width / 2.0;
        let q = [q4[0], q4[1], q4[2], q4[3], roll, pitch, yaw, half, half];
        self.within_limits(&q).then_some(q)
    }
}

/// Fingertips of an end effector at `ee` opened to `width`.
pub fn tips_at(ee: &Pose, width: f64) -> [Vector3<f64>; 2] {
    let h = width / 2.0;
    [
        ee.transform_point(&Vector3::new(0.0, h, 0.0)),
        ee.transform_point(&Vector3::new(0.0, -h, 0.0)),
    ]
}

/// Thresholds used by applicability checks and the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Slack on region membership.
    pub region: f64,
    /// Slack when comparing locked axes.
    pub axis: f64,
    /// How far the end effector may be from the approach point for an NP skill to engage.
    pub contact: f64,
    /// How far the held grasp may be from a template for a P skill to engage.
    pub grasp: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            region: 1e-6,
            axis: 1e-6,
            contact: 0.01,
            grasp: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub name: String,
    pub alpha: f64,
    pub rng_seed: u64,
    pub regions: Vec<Region>,
    pub skills: Vec<SkillSpec>,
    pub connector_skill_map: BTreeMap<String, String>,
    pub grasp: GraspModel,
    pub object_keypoints: KeypointTemplate,
    pub kinematics: Kinematics,
    pub tolerances: Tolerances,
    /// Default scripted-connector parameters.
    pub connector: ConnectorParams,
    /// Reward constants for connectors.
    pub rewards: RewardParams,
    /// Converts the injected torque noise into extra skill placement noise.
    pub torque_gain: f64,
    pub problem: ProblemSpec,
}

impl Domain {
    /// Loads one of the domains shipped with the library.
    pub fn builtin(name: &str) -> Result<Domain> {
        config::builtin(name)
    }

    pub fn from_toml_str(text: &str) -> Result<Domain> {
        DomainConfig::parse(text)?.build()
    }

    pub fn skill(&self, id: &str) -> Result<&SkillSpec> {
        self.skills
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| config(format!("unknown skill '{id}'")))
    }

    pub fn skill_index(&self, id: &str) -> Option<usize> {
        self.skills.iter().position(|s| s.id == id)
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    /// Index of the first region containing `pose`.
    pub fn region_of(&self, pose: &Pose) -> Option<usize> {
        self.regions
            .iter()
            .position(|r| region_contains(r, pose, self.tolerances.region))
    }

    pub fn blocked(&self, p: &Vector3<f64>) -> bool {
        self.regions.iter().any(|r| r.blocks(p))
    }

    pub fn object_keypoints(&self, pose: &Pose) -> [Vector3<f64>; 8] {
        keypoints_of(pose, &self.object_keypoints)
    }

    /// Configuration placing the end effector at an NP skill's approach point.
    pub fn approach_config(&self, skill: &SkillSpec, q_obj: &Pose) -> Option<JointVector> {
        let p = q_obj.position() + skill.approach_offset;
        let ee = Pose::from_xyz_rpy(p.x, p.y, p.z, PI, 0.0, 0.0);
        self.kinematics.ik(&ee, 0.0)
    }

    fn grasp_feasible(&self, q: &Pose, template: &Pose) -> bool {
        let g = q.compose(template);
        if (g.position() - self.grasp.reach_center).norm() > self.grasp.reach_radius {
            return false;
        }
        if self.kinematics.ik(&g, self.grasp.grasp_width()).is_none() {
            return false;
        }
        !self.grasp.finger_points(&g).iter().any(|p| self.blocked(p))
    }
}

/// Region-frame coordinates of a pose: `[x, y, z, roll, pitch, yaw]`.
pub(crate) fn local_coords(region: &Region, pose: &Pose) -> [f64; 6] {
    let local = region.frame.inverse().compose(pose);
    let p = local.position();
    let (r, pt, y) = local.rpy();
    [p.x, p.y, p.z, r, pt, y]
}

/// Whether two poses agree on every locked axis, compared in a region frame.
pub(crate) fn locked_axes_match(axes: &[Axis], a: &[f64; 6], b: &[f64; 6], tol: f64) -> bool {
    axes.iter().all(|axis| {
        let i = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
            Axis::Roll => 3,
            Axis::Pitch => 4,
            Axis::Yaw => 5,
        };
        let d = if i >= 3 {
            wrap_angle(a[i] - b[i])
        } else {
            a[i] - b[i]
        };
        d.abs() <= tol
    })
}

/// Applicability of a non-prehensile skill: both poses in the same skill
/// region and every locked axis unchanged.
pub fn phi_np(domain: &Domain, skill: &SkillSpec, state: &State, q_target: &Pose) -> Result<bool> {
    if skill.kind != SkillKind::NonPrehensile {
        return Err(Error::InvalidArgument(format!(
            "phi_np called with prehensile skill '{}'",
            skill.id
        )));
    }
    let tol = domain.tolerances.region;
    for id in &skill.region_ids {
        let region = domain
            .regions
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| config(format!("skill '{}' names unknown region '{id}'", skill.id)))?;
        if region_contains(region, &state.q_obj, tol) && region_contains(region, q_target, tol) {
            let a = local_coords(region, &state.q_obj);
            let b = local_coords(region, q_target);
            if locked_axes_match(&skill.locked_axes, &a, &b, domain.tolerances.axis) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Indices of the grasp templates that are reachable and collision-free at `q`.
pub fn feasible_grasps(domain: &Domain, q: &Pose) -> Vec<usize> {
    domain
        .grasp
        .templates
        .iter()
        .enumerate()
        .filter(|(_, t)| domain.grasp_feasible(q, t))
        .map(|(i, _)| i)
        .collect()
}

fn common_grasps(domain: &Domain, a: &Pose, b: &Pose) -> Vec<usize> {
    domain
        .grasp
        .templates
        .iter()
        .enumerate()
        .filter(|(_, t)| domain.grasp_feasible(a, t) && domain.grasp_feasible(b, t))
        .map(|(i, _)| i)
        .collect()
}

/// Applicability of the prehensile skill: both poses are stable and share a
/// feasible grasp.
pub fn phi_p(domain: &Domain, state: &State, q_target: &Pose) -> bool {
    domain.region_of(&state.q_obj).is_some()
        && domain.region_of(q_target).is_some()
        && !common_grasps(domain, &state.q_obj, q_target).is_empty()
}

/// Applicability of any skill.
pub fn phi(domain: &Domain, skill: &SkillSpec, state: &State, q_target: &Pose) -> Result<bool> {
    match skill.kind {
        SkillKind::NonPrehensile => phi_np(domain, skill, state, q_target),
        SkillKind::Prehensile => Ok(phi_p(domain, state, q_target)),
    }
}

/// Robot configuration from which a skill's manipulation phase starts.
///
/// NP skills use their approach point above the object. The prehensile skill
/// draws uniformly among grasps feasible at both `q_obj` and `q_target`.
pub fn pre_contact_config<R: Rng + ?Sized>(
    domain: &Domain,
    skill: &SkillSpec,
    q_obj: &Pose,
    q_target: &Pose,
    rng: &mut R,
) -> Result<JointVector> {
    match skill.kind {
        SkillKind::NonPrehensile => domain.approach_config(skill, q_obj).ok_or_else(|| {
            Error::NoPreContact(format!("approach point of '{}' is out of reach", skill.id))
        }),
        SkillKind::Prehensile => {
            let common = common_grasps(domain, q_obj, q_target);
            if common.is_empty() {
                return Err(Error::NoPreContact("no common feasible grasp".into()));
            }
            let g = common[rng.random_range(0..common.len())];
            let ee = q_obj.compose(&domain.grasp.templates[g]);
            domain
                .kinematics
                .ik(&ee, domain.grasp.grasp_width())
                .ok_or_else(|| Error::NoPreContact("grasp configuration out of limits".into()))
        }
    }
}
