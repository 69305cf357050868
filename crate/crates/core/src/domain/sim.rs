//! The scripted simulator.
//!
//! Skills are stochastic kinematic maps: when a skill engages, the object
//! lands on the requested pose up to planar noise, or with `failure_prob` it
//! stops short. Connectors interpolate in joint space and nudge the object
//! whenever the end effector passes close to it.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{local_coords, phi_np, Domain, JointVector, SkillKind, SkillSpec, State};
use crate::connector::ConnectorParams;
use crate::error::{invalid, Result};
use crate::filtering::NoiseConfig;
use crate::geometry::{region_contains, se3_distance_unchecked, wrap_angle, Pose};

/// What to execute from a state.
#[derive(Clone, Debug)]
pub enum Invocation<'a> {
    /// Post-contact phase of a skill toward a desired object pose.
    Skill { skill: &'a str, target: Pose },
    /// Scripted connector toward a robot configuration.
    Connector {
        params: &'a ConnectorParams,
        goal: JointVector,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    pub state: State,
    /// Simulation steps charged for the invocation.
    pub steps: u32,
}

/// Failure-probability multiplier and extra placement noise drawn for one call.
struct Disturbance {
    failure_scale: f64,
    extra_sigma: f64,
}

impl Disturbance {
    fn draw<R: Rng + ?Sized>(domain: &Domain, noise: Option<&NoiseConfig>, rng: &mut R) -> Self {
        match noise {
            None => Self {
                failure_scale: 1.0,
                extra_sigma: 0.0,
            },
            Some(n) => {
                let friction = n.friction_scale_range.sample(rng);
                let mass = n.mass_scale_range.sample(rng);
                Self {
                    failure_scale: friction * mass,
                    extra_sigma: domain.torque_gain * n.torque_sigma,
                }
            }
        }
    }
}

/// Runs one invocation from `state`.
pub fn simulate<R: Rng + ?Sized>(
    domain: &Domain,
    state: &State,
    invocation: &Invocation<'_>,
    noise: Option<&NoiseConfig>,
    rng: &mut R,
) -> Result<SimOutcome> {
    let (mut out, steps) = match invocation {
        Invocation::Skill { skill, target } => {
            let spec = domain.skill(skill)?;
            let dist = Disturbance::draw(domain, noise, rng);
            let s = match spec.kind {
                SkillKind::NonPrehensile => run_np(domain, spec, state, target, &dist, rng)?,
                SkillKind::Prehensile => run_p(domain, spec, state, target, &dist, rng),
            };
            (s, spec.n_sim)
        }
        Invocation::Connector { params, goal } => {
            let traj = connector_trajectory(domain, state, params, goal)?;
            let n = traj.len() as u32 - 1;
            (traj.into_iter().last().expect("trajectory holds the start"), n)
        }
    };
    out.zero_velocities();
    Ok(SimOutcome { state: out, steps })
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Adds planar noise in the region frame and keeps the result in the region.
fn perturb<R: Rng + ?Sized>(
    domain: &Domain,
    region: Option<usize>,
    pose: &Pose,
    sigma_pos: f64,
    sigma_yaw: f64,
    rng: &mut R,
) -> Pose {
    if sigma_pos == 0.0 && sigma_yaw == 0.0 {
        return *pose;
    }
    let nx = sigma_pos * gauss(rng);
    let ny = sigma_pos * gauss(rng);
    let nyaw = sigma_yaw * gauss(rng);
    let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), nyaw);
    let Some(i) = region else {
        return Pose::new(
            pose.position() + Vector3::new(nx, ny, 0.0),
            spin * pose.orientation(),
        );
    };
    let r = &domain.regions[i];
    let local = r.frame.inverse().compose(pose);
    let moved = Pose::new(
        local.position() + Vector3::new(nx, ny, 0.0),
        spin * local.orientation(),
    );
    r.settle(&r.frame.compose(&moved))
}

fn skill_region(domain: &Domain, skill: &SkillSpec, a: &Pose, b: &Pose) -> Option<usize> {
    let tol = domain.tolerances.region;
    skill.regions().iter().copied().find(|&i| {
        let r = &domain.regions[i];
        region_contains(r, a, tol) && region_contains(r, b, tol)
    })
}

fn run_np<R: Rng + ?Sized>(
    domain: &Domain,
    skill: &SkillSpec,
    state: &State,
    target: &Pose,
    dist: &Disturbance,
    rng: &mut R,
) -> Result<State> {
    let mut out = state.clone();
    if !phi_np(domain, skill, state, target)? {
        return Ok(out);
    }
    let approach = state.q_obj.position() + skill.approach_offset;
    let ee = domain.kinematics.ee_pose(&state.q_r);
    if (ee.position() - approach).norm() > domain.tolerances.contact {
        return Ok(out);
    }
    let region = skill_region(domain, skill, &state.q_obj, target);
    let p_fail = (skill.failure_prob * dist.failure_scale).clamp(0.0, 1.0);
    let sigma_pos = skill.success_noise.position + dist.extra_sigma;
    let sigma_yaw = skill.success_noise.yaw + dist.extra_sigma;
    let u: f64 = rng.random();
    let landed = if u >= p_fail {
        *target
    } else {
        let frac = 0.5 * rng.random::<f64>();
        match region {
            Some(i) => {
                let r = &domain.regions[i];
                let a = local_coords(r, &state.q_obj);
                let b = local_coords(r, target);
                let class = r.orientation_class(&state.q_obj, domain.tolerances.region).unwrap_or(0);
                r.pose_at(
                    a[0] + frac * (b[0] - a[0]),
                    a[1] + frac * (b[1] - a[1]),
                    a[5] + frac * wrap_angle(b[5] - a[5]),
                    class,
                )
            }
            None => state.q_obj,
        }
    };
    out.q_obj = perturb(domain, region, &landed, sigma_pos, sigma_yaw, rng);
    if let Some(q) = domain.approach_config(skill, &out.q_obj) {
        out.set_q_r(q);
    }
    Ok(out)
}

fn run_p<R: Rng + ?Sized>(
    domain: &Domain,
    skill: &SkillSpec,
    state: &State,
    target: &Pose,
    dist: &Disturbance,
    rng: &mut R,
) -> State {
    let mut out = state.clone();
    let ee = domain.kinematics.ee_pose(&state.q_r);
    let held = state.q_obj.inverse().compose(&ee);
    let grasped = domain
        .grasp
        .templates
        .iter()
        .any(|t| se3_distance_unchecked(&held, t, domain.alpha) <= domain.tolerances.grasp);
    let start_region = domain.region_of(&state.q_obj);
    let goal_region = domain.region_of(target);
    if !grasped || start_region.is_none() || goal_region.is_none() {
        return out;
    }
    let goal_ee = target.compose(&held);
    let width = state.gripper_width;
    let clear = |g: &Pose| !domain.grasp.finger_points(g).iter().any(|p| domain.blocked(p));
    if !clear(&ee) || !clear(&goal_ee) || domain.kinematics.ik(&goal_ee, width).is_none() {
        return out;
    }
    let p_fail = (skill.failure_prob * dist.failure_scale).clamp(0.0, 1.0);
    let sigma_pos = skill.success_noise.position + dist.extra_sigma;
    let sigma_yaw = skill.success_noise.yaw + dist.extra_sigma;
    let u: f64 = rng.random();
    if u >= p_fail {
        out.q_obj = perturb(domain, goal_region, target, sigma_pos, sigma_yaw, rng);
        if let Some(q) = domain.kinematics.ik(&out.q_obj.compose(&held), width) {
            out.set_q_r(q);
        }
    } else {
        // Dropped somewhere along the carry; it falls back to the start support.
        let frac = rng.random::<f64>();
        let a = state.q_obj.position();
        let mut p = a + frac * (target.position() - a);
        p.z = a.z;
        let dropped = Pose::new(p, *state.q_obj.orientation());
        out.q_obj = perturb(domain, start_region, &dropped, sigma_pos, sigma_yaw, rng);
        let hand = ee.position() + frac * (goal_ee.position() - ee.position());
        if let Some(q) = domain.kinematics.ik(&ee.with_position(hand), width) {
            out.set_q_r(q);
        }
    }
    out
}

/// Object displacement caused by the end effector at `ee` on an object at `obj`.
pub(crate) fn push_vector(params: &ConnectorParams, ee: &Vector3<f64>, obj: &Vector3<f64>) -> Vector3<f64> {
    let d = (ee - obj).norm();
    let m = params.disturbance_gain * (1.0 - d / params.disturbance_radius).max(0.0);
    if m == 0.0 {
        return Vector3::zeros();
    }
    let h = Vector3::new(obj.x - ee.x, obj.y - ee.y, 0.0);
    let n = h.norm();
    let dir = if n < 1e-12 { Vector3::x() } else { h / n };
    m * dir
}

/// States visited by a scripted connector, starting with `state` itself.
///
/// The configuration is interpolated linearly with at most `resolution`
/// change per joint per step. At each step the object is pushed horizontally
/// away from the end effector by `gain * max(0, 1 - d / radius)`.
pub fn connector_trajectory(
    domain: &Domain,
    state: &State,
    params: &ConnectorParams,
    goal: &JointVector,
) -> Result<Vec<State>> {
    if !domain.kinematics.within_limits(goal) {
        return Err(invalid("connector goal violates joint limits"));
    }
    if goal.iter().any(|v| !v.is_finite()) || !state.is_finite() {
        return Err(invalid("connector inputs must be finite"));
    }
    let q0 = state.q_r;
    let span = q0
        .iter()
        .zip(goal)
        .map(|(a, b)| (b - a).abs())
        .fold(0.0, f64::max);
    let n = if span == 0.0 {
        0
    } else {
        (span / params.resolution).ceil().max(1.0) as usize
    };
    let region = domain.region_of(&state.q_obj);
    let mut traj = Vec::with_capacity(n + 1);
    let mut cur = state.clone();
    cur.zero_velocities();
    traj.push(state.clone());
    for i in 1..=n {
        let q = if i == n {
            *goal
        } else {
            let t = i as f64 / n as f64;
            let mut q = q0;
            for (j, v) in q.iter_mut().enumerate() {
                *v += t * (goal[j] - q0[j]);
            }
            q
        };
        cur.set_q_r(q);
        let ee = domain.kinematics.ee_pose(&q);
        let push = push_vector(params, ee.position(), cur.q_obj.position());
        if push != Vector3::zeros() {
            let moved = cur.q_obj.with_position(cur.q_obj.position() + push);
            cur.q_obj = match region {
                Some(r) => domain.regions[r].settle(&moved),
                None => moved,
            };
        }
        traj.push(cur.clone());
    }
    Ok(traj)
}
