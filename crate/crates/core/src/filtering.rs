//! Replay filtering of skill plans and state-action dataset export.
//!
//! Dynamics randomization (friction, mass, torque) acts inside the
//! simulator. Pose and joint noise only touch what gets recorded.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{tips_at, Domain, JointVector, State};
use crate::error::{invalid, Result};
use crate::geometry::{keypoints_of, se3_distance, Interval, Pose};
use crate::planner::{execute_plan, PlanStep, SkillPlan};
use crate::seed::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_REPLAYS: usize = 400;
pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_TRAJECTORIES: usize = 30;
/// Attempts per requested trajectory before an export gives up on a plan.
pub const ATTEMPT_FACTOR: usize = 50;

const REPLAY_STREAM: u64 = 0x5245_504c;
const EXPORT_STREAM: u64 = 0x4558_504f;
const OBS_STREAM: u64 = 0x4f42_5356;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub obj_pos_sigma: f64,
    pub obj_rot_sigma: f64,
    pub joint_pos_sigma: f64,
    pub ee_pos_sigma: f64,
    pub ee_rot_sigma: f64,
    pub friction_scale_range: Interval,
    pub mass_scale_range: Interval,
    pub torque_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let scale = Interval { lo: 0.8, hi: 1.2 };
        Self {
            obj_pos_sigma: 0.003,
            obj_rot_sigma: 0.03,
            joint_pos_sigma: 0.005,
            ee_pos_sigma: 0.001,
            ee_rot_sigma: 0.01,
            friction_scale_range: scale,
            mass_scale_range: scale,
            torque_sigma: 0.03,
        }
    }
}

impl NoiseConfig {
    /// No perturbation at all; skills keep their own stochasticity.
    pub fn none() -> Self {
        Self {
            obj_pos_sigma: 0.0,
            obj_rot_sigma: 0.0,
            joint_pos_sigma: 0.0,
            ee_pos_sigma: 0.0,
            ee_rot_sigma: 0.0,
            friction_scale_range: Interval::point(1.0),
            mass_scale_range: Interval::point(1.0),
            torque_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.obj_pos_sigma,
            self.obj_rot_sigma,
            self.joint_pos_sigma,
            self.ee_pos_sigma,
            self.ee_rot_sigma,
            self.torque_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise sigmas must be finite and >= 0"));
        }
        for r in [self.friction_scale_range, self.mass_scale_range] {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi && r.lo >= 0.0) {
                return Err(invalid("scale ranges need 0 <= lo <= hi"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub index: usize,
    pub seed: u64,
    pub success: bool,
    pub final_obj: Pose,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub plan_id: String,
    pub n_replays: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub seed: u64,
    pub records: Vec<ReplayRecord>,
}

/// Seed of every skill simulation in one noisy execution.
fn step_seed(traj_seed: u64, step: usize) -> u64 {
    derive_seed(traj_seed, &[step as u64])
}

/// Executes `plan` once under noise. Returns the states before every step
/// followed by the final state.
pub fn noisy_rollout(plan: &SkillPlan, domain: &Domain, noise: &NoiseConfig, traj_seed: u64) -> Result<Vec<State>> {
    let mut states = Vec::with_capacity(plan.steps.len() + 1);
    let last = execute_plan(
        domain,
        plan,
        Some(noise),
        |i, _| step_seed(traj_seed, i),
        |_, s| states.push(s.clone()),
    )?;
    states.push(last);
    Ok(states)
}

fn reached(plan: &SkillPlan, s: &State) -> Result<(bool, f64)> {
    let d = se3_distance(&s.q_obj, &plan.goal_pose, plan.params.alpha)?;
    Ok((d < plan.params.delta_goal, d))
}

/// Replays `plan` `n` times under independent noise streams.
pub fn replay_plan(plan: &SkillPlan, domain: &Domain, noise: &NoiseConfig, n: usize, seed: u64) -> Result<ReplayReport> {
    if n == 0 {
        return Err(invalid("replay count must be >= 1"));
    }
    noise.validate()?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[REPLAY_STREAM, i as u64]);
            let states = noisy_rollout(plan, domain, noise, s)?;
            let last = states.last().expect("rollout holds the final state");
            let (success, distance) = reached(plan, last)?;
            Ok(ReplayRecord {
                index: i,
                seed: s,
                success,
                final_obj: last.q_obj,
                distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_success = records.iter().filter(|r| r.success).count();
    Ok(ReplayReport {
        plan_id: plan.plan_id.clone(),
        n_replays: n,
        n_success,
        success_rate: n_success as f64 / n as f64,
        seed,
        records,
    })
}

/// Ids of the plans whose success rate is strictly above `m`, in input order.
pub fn filter_plans(reports: &[ReplayReport], m: f64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&m) {
        return Err(invalid(format!("threshold m must lie in [0, 1], got {m}")));
    }
    Ok(reports
        .iter()
        .filter(|r| r.success_rate > m)
        .map(|r| r.plan_id.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// `teleport`, `connector` or `skill`.
    pub tag: String,
    pub id: Option<String>,
    pub goal_pose: Option<Pose>,
    pub goal_config: Option<JointVector>,
}

impl From<&PlanStep> for Action {
    fn from(step: &PlanStep) -> Self {
        match step {
            PlanStep::Teleport { q_r } => Action {
                tag: "teleport".into(),
                id: None,
                goal_pose: None,
                goal_config: Some(*q_r),
            },
            PlanStep::Connector { params, q_r } => Action {
                tag: "connector".into(),
                id: Some(params.id.clone()),
                goal_pose: None,
                goal_config: Some(*q_r),
            },
            PlanStep::Skill { id, target, .. } => Action {
                tag: "skill".into(),
                id: Some(id.clone()),
                goal_pose: Some(*target),
                goal_config: None,
            },
        }
    }
}

/// One (observation, action) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub plan_id: String,
    pub traj_seed: u64,
    pub traj_index: usize,
    pub step_index: usize,
    pub q_r: JointVector,
    pub q_r_prev: JointVector,
    pub p_ee: [[f64; 3]; 8],
    pub p_tip: [[f64; 3]; 2],
    /// End-effector and tip keypoints in the observed object frame.
    pub p_ee_rel: [[f64; 3]; 8],
    pub p_tip_rel: [[f64; 3]; 2],
    pub obj_pose: Pose,
    pub p_obj: [[f64; 3]; 8],
    pub p_goal: [[f64; 3]; 8],
    pub gripper_width: f64,
    pub action: Action,
    /// Noise-free simulator state the observation was taken from.
    pub state: State,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub plan_id: String,
    pub steps: usize,
    pub requested: usize,
    pub recorded: usize,
    pub attempts: usize,
    pub shortfall: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportResult {
    pub records: Vec<DatasetRecord>,
    pub summaries: Vec<ExportSummary>,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * rng.sample::<f64, _>(StandardNormal)
}

fn noisy_pose<R: Rng + ?Sized>(p: &Pose, pos: f64, rot: f64, rng: &mut R) -> Pose {
    let dp = Vector3::new(gauss(rng, pos), gauss(rng, pos), gauss(rng, pos));
    let dr = Vector3::new(gauss(rng, rot), gauss(rng, rot), gauss(rng, rot));
    Pose::new(p.position() + dp, UnitQuaternion::from_scaled_axis(dr) * p.orientation())
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Observation of `state` as recorded in a dataset.
fn observe<R: Rng + ?Sized>(domain: &Domain, state: &State, noise: &NoiseConfig, rng: &mut R) -> (JointVector, Pose, Pose) {
    let mut q = state.q_r;
    for v in q.iter_mut() {
        *v += gauss(rng, noise.joint_pos_sigma);
    }
    let ee = domain.kinematics.ee_pose(&q);
    let ee = noisy_pose(&ee, noise.ee_pos_sigma, noise.ee_rot_sigma, rng);
    let obj = noisy_pose(&state.q_obj, noise.obj_pos_sigma, noise.obj_rot_sigma, rng);
    (q, ee, obj)
}

fn trajectory_records(
    plan: &SkillPlan,
    domain: &Domain,
    noise: &NoiseConfig,
    traj_seed: u64,
    traj_index: usize,
    states: &[State],
) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(traj_seed, &[OBS_STREAM]));
    let p_goal = keypoints_of(&plan.goal_pose, &domain.object_keypoints).map(|p| arr(&p));
    let mut prev: Option<JointVector> = None;
    let mut out = Vec::with_capacity(plan.steps.len());
    for (i, step) in plan.steps.iter().enumerate() {
        let s = &states[i];
        let (q, ee, obj) = observe(domain, s, noise, &mut rng);
        let p_ee = keypoints_of(&ee, &domain.kinematics.ee_keypoints);
        let p_tip = tips_at(&ee, s.gripper_width);
        out.push(DatasetRecord {
            schema_version: SCHEMA_VERSION,
            plan_id: plan.plan_id.clone(),
            traj_seed,
            traj_index,
            step_index: i,
            q_r: q,
            q_r_prev: prev.unwrap_or(q),
            p_ee: p_ee.map(|p| arr(&p)),
            p_tip: p_tip.map(|p| arr(&p)),
            p_ee_rel: p_ee.map(|p| arr(&obj.inverse_transform_point(&p))),
            p_tip_rel: p_tip.map(|p| arr(&obj.inverse_transform_point(&p))),
            obj_pose: obj,
            p_obj: keypoints_of(&obj, &domain.object_keypoints).map(|p| arr(&p)),
            p_goal,
            gripper_width: s.gripper_width,
            action: Action::from(step),
            state: s.clone(),
        });
        prev = Some(q);
    }
    out
}

fn export_one(
    plan_index: usize,
    plan: &SkillPlan,
    domain: &Domain,
    noise: &NoiseConfig,
    per_plan: usize,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, ExportSummary)> {
    let mut records = Vec::with_capacity(per_plan * plan.steps.len());
    let mut recorded = 0;
    let mut attempts = 0;
    while recorded < per_plan && attempts < ATTEMPT_FACTOR * per_plan {
        let traj_seed = derive_seed(seed, &[EXPORT_STREAM, plan_index as u64, attempts as u64]);
        attempts += 1;
        let states = noisy_rollout(plan, domain, noise, traj_seed)?;
        if !reached(plan, states.last().expect("final state"))?.0 {
            continue;
        }
        records.extend(trajectory_records(plan, domain, noise, traj_seed, recorded, &states));
        recorded += 1;
    }
    let summary = ExportSummary {
        plan_id: plan.plan_id.clone(),
        steps: plan.steps.len(),
        requested: per_plan,
        recorded,
        attempts,
        shortfall: per_plan - recorded,
    };
    if summary.shortfall > 0 {
        log::warn!(
            "plan {}: {} of {} trajectories after {} attempts",
            plan.plan_id,
            recorded,
            per_plan,
            attempts
        );
    }
    Ok((records, summary))
}

/// Records `trajectories_per_plan` successful noisy executions of every
/// plan, one record per step. A plan that cannot reach the count within
/// `ATTEMPT_FACTOR` times as many attempts reports the shortfall.
pub fn export_dataset(
    plans: &[SkillPlan],
    domain: &Domain,
    noise: &NoiseConfig,
    trajectories_per_plan: usize,
    seed: u64,
) -> Result<ExportResult> {
    if trajectories_per_plan == 0 {
        return Err(invalid("trajectories per plan must be >= 1"));
    }
    noise.validate()?;
    let per: Vec<_> = plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| export_one(i, p, domain, noise, trajectories_per_plan, seed))
        .collect::<Result<_>>()?;
    let mut out = ExportResult {
        records: Vec::new(),
        summaries: Vec::with_capacity(per.len()),
    };
    for (r, s) in per {
        out.records.extend(r);
        out.summaries.push(s);
    }
    Ok(out)
}

/// Latent state before step `record.step_index`, recomputed from the plan.
pub fn replay_record_state(plan: &SkillPlan, domain: &Domain, noise: &NoiseConfig, record: &DatasetRecord) -> Result<State> {
    let mut prefix = plan.clone();
    prefix.steps.truncate(record.step_index);
    execute_plan(domain, &prefix, Some(noise), |i, _| step_seed(record.traj_seed, i), |_, _| {})
}

#[cfg(test)]
mod tests;
