//! Connectors: mining connector problems from lazy plans, the scripted
//! connector used during full planning, and the reward evaluators for
//! connector, non-prehensile and prehensile policies.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{connector_trajectory, Domain, JointVector, State};
use crate::error::{config, invalid, Result};
use crate::geometry::{se3_distance, stacked_distance, Pose};
use crate::planner::{skill_rrt, Connectors, PlannerParams, PolicyTag, SkillPlan};
use crate::seed::derive_seed;

/// Parameters of one scripted connector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorParams {
    pub id: String,
    /// Largest per-joint change per interpolation step.
    pub resolution: f64,
    /// Peak object displacement per step when the hand touches the object.
    pub disturbance_gain: f64,
    /// Distance beyond which the hand does not disturb the object.
    pub disturbance_radius: f64,
}

/// Scripted connector for every skill of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorSet {
    by_skill: BTreeMap<String, ConnectorParams>,
}

impl ConnectorSet {
    /// One connector per skill, named by the domain's connector map and
    /// using the domain's default parameters.
    pub fn for_domain(domain: &Domain) -> Self {
        let by_skill = domain
            .skills
            .iter()
            .map(|s| {
                let id = domain
                    .connector_skill_map
                    .get(&s.id)
                    .cloned()
                    .unwrap_or_else(|| format!("C_{}", s.id));
                (s.id.clone(), ConnectorParams { id, ..domain.connector.clone() })
            })
            .collect();
        Self { by_skill }
    }

    pub fn new(by_skill: BTreeMap<String, ConnectorParams>) -> Self {
        Self { by_skill }
    }

    pub fn get(&self, skill: &str) -> Result<&ConnectorParams> {
        self.by_skill
            .get(skill)
            .ok_or_else(|| config(format!("no connector for skill '{skill}'")))
    }

    pub fn covers(&self, domain: &Domain) -> bool {
        domain.skills.iter().all(|s| self.by_skill.contains_key(&s.id))
    }

    pub fn remove(&mut self, skill: &str) -> Option<ConnectorParams> {
        self.by_skill.remove(skill)
    }
}

/// Moves the robot from `state` to `goal` along a joint-space line.
///
/// Returns every visited state, starting with `state`. A zero-length move
/// yields a single state.
pub fn scripted_connector(
    domain: &Domain,
    state: &State,
    goal: &JointVector,
    params: &ConnectorParams,
) -> Result<Vec<State>> {
    connector_trajectory(domain, state, params, goal)
}

/// A connector training problem taken from a lazy plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorProblem {
    pub problem_index: usize,
    pub start_state: State,
    pub target_robot_config: JointVector,
    pub skill_id: String,
}

/// Per-problem mining result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MineOutcome {
    pub problem_index: usize,
    pub solved: bool,
    pub iterations: usize,
    pub triplets: usize,
    pub plan: Option<SkillPlan>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MineResult {
    pub problems: Vec<ConnectorProblem>,
    pub outcomes: Vec<MineOutcome>,
}

/// Runs lazy planning on every problem and collects one connector problem
/// per teleport in each solution. Problem `i` plans with a seed derived from
/// `params.seed` and `i`.
pub fn mine_connector_problems(
    problems: &[(State, Pose)],
    domain: &Domain,
    params: &PlannerParams,
) -> Result<MineResult> {
    let per: Vec<(Vec<ConnectorProblem>, MineOutcome)> = problems
        .par_iter()
        .enumerate()
        .map(|(i, (s0, goal))| {
            let p = PlannerParams {
                seed: derive_seed(params.seed, &[0x4d49_4e45, i as u64]),
                ..params.clone()
            };
            let res = skill_rrt(s0, goal, domain, &Connectors::Lazy, &p)?;
            let mut found = Vec::new();
            if let Some(path) = &res.path {
                for w in path.windows(3) {
                    let (v, c, k) = (&res.tree.nodes[w[0]], &res.tree.nodes[w[1]], &res.tree.nodes[w[2]]);
                    if c.policy_tag != PolicyTag::None {
                        continue;
                    }
                    if let PolicyTag::Skill(skill) = &k.policy_tag {
                        found.push(ConnectorProblem {
                            problem_index: i,
                            start_state: v.state.clone(),
                            target_robot_config: c.state.q_r,
                            skill_id: skill.clone(),
                        });
                    }
                }
            }
            let outcome = MineOutcome {
                problem_index: i,
                solved: res.plan.is_some(),
                iterations: res.iterations,
                triplets: found.len(),
                plan: res.plan,
            };
            Ok((found, outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = MineResult {
        problems: Vec::new(),
        outcomes: Vec::with_capacity(per.len()),
    };
    for (found, outcome) in per {
        out.problems.extend(found);
        out.outcomes.push(outcome);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rewards

/// Reward constants. Terms whose scale `*_0` is zero are disabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub eps_ee_0: f64,
    pub eps_ee_1: f64,
    pub eps_tip_0: f64,
    pub eps_tip_1: f64,
    /// Magnitude of the object-movement penalty weight.
    pub w_move: f64,
    pub r_succ_connector: f64,
    pub delta_ee: f64,
    pub delta_tip: f64,
    pub eps_obj_0: f64,
    pub eps_obj_1: f64,
    pub eps_tipobj_0: f64,
    pub eps_tipobj_1: f64,
    pub eps_rot_0: f64,
    pub eps_rot_1: f64,
    pub w_grasp: f64,
    /// Skill success bonus.
    pub r_succ: f64,
    pub delta_obj: f64,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eps_ee_0,
            self.eps_ee_1,
            self.eps_tip_0,
            self.eps_tip_1,
            self.w_move,
            self.r_succ_connector,
            self.delta_ee,
            self.delta_tip,
            self.eps_obj_0,
            self.eps_obj_1,
            self.eps_tipobj_0,
            self.eps_tipobj_1,
            self.eps_rot_0,
            self.eps_rot_1,
            self.w_grasp,
            self.r_succ,
            self.delta_obj,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("reward constants must be finite"));
        }
        if self.delta_ee <= 0.0 || self.delta_tip <= 0.0 || self.delta_obj <= 0.0 {
            return Err(invalid("success thresholds must be positive"));
        }
        if self.w_move < 0.0 || self.w_grasp < 0.0 {
            return Err(invalid("w_move and w_grasp are magnitudes and must be >= 0"));
        }
        for (s, o) in [
            (self.eps_obj_0, self.eps_obj_1),
            (self.eps_tipobj_0, self.eps_tipobj_1),
            (self.eps_rot_0, self.eps_rot_1),
        ] {
            if s != 0.0 && o <= 0.0 {
                return Err(invalid("offset of an enabled rational term must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorReward {
    pub r_ee: f64,
    pub r_tip: f64,
    pub r_obj_move: f64,
    pub r_success: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpReward {
    pub r_obj: f64,
    pub r_tip_contact: f64,
    pub r_success: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PReward {
    pub r_obj: f64,
    pub r_rot: f64,
    pub r_grasp: f64,
    pub r_success: f64,
    pub total: f64,
}

/// `scale * exp(-rate * d)`.
pub fn exp_potential(scale: f64, rate: f64, d: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale * (-rate * d).exp()
    }
}

/// `scale / (d + offset)`.
pub fn rational_potential(scale: f64, offset: f64, d: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        scale / (d + offset)
    }
}

fn check_states(states: &[&State]) -> Result<()> {
    if states.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(invalid("reward evaluated on a non-finite state"))
    }
}

fn tips_vs_point(tips: &[Vector3<f64>; 2], p: &Vector3<f64>) -> f64 {
    stacked_distance(tips, &[*p, *p])
}

/// Connector reward for the step `prev -> curr` toward `goal_config`.
pub fn connector_reward(
    domain: &Domain,
    prev: &State,
    curr: &State,
    goal_config: &JointVector,
    params: &RewardParams,
) -> Result<ConnectorReward> {
    check_states(&[prev, curr])?;
    if goal_config.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite goal configuration"));
    }
    let k = &domain.kinematics;
    let goal_ee = k.ee_keypoints(goal_config);
    let goal_tip = k.tips(goal_config);
    let ee_t = stacked_distance(&k.ee_keypoints(&curr.q_r), &goal_ee);
    let ee_p = stacked_distance(&k.ee_keypoints(&prev.q_r), &goal_ee);
    let tip_t = stacked_distance(&k.tips(&curr.q_r), &goal_tip);
    let tip_p = stacked_distance(&k.tips(&prev.q_r), &goal_tip);
    let r_ee = exp_potential(params.eps_ee_0, params.eps_ee_1, ee_t)
        - exp_potential(params.eps_ee_0, params.eps_ee_1, ee_p);
    let r_tip = exp_potential(params.eps_tip_0, params.eps_tip_1, tip_t)
        - exp_potential(params.eps_tip_0, params.eps_tip_1, tip_p);
    let moved = stacked_distance(
        &domain.object_keypoints(&curr.q_obj),
        &domain.object_keypoints(&prev.q_obj),
    );
    let r_obj_move = -params.w_move * moved;
    let width_ok = (curr.gripper_width - (goal_config[7] + goal_config[8])).abs() <= 1e-6;
    let r_success = if ee_t < params.delta_ee && tip_t < params.delta_tip && width_ok {
        params.r_succ_connector
    } else {
        0.0
    };
    Ok(ConnectorReward {
        r_ee,
        r_tip,
        r_obj_move,
        r_success,
        total: r_ee + r_tip + r_obj_move + r_success,
    })
}

fn skill_success(domain: &Domain, curr: &State, target: &Pose, params: &RewardParams) -> Result<f64> {
    let d = se3_distance(&curr.q_obj, target, domain.alpha)?;
    Ok(if d < params.delta_obj { params.r_succ } else { 0.0 })
}

fn object_term(domain: &Domain, prev: &State, curr: &State, target: &Pose, params: &RewardParams) -> f64 {
    let goal = domain.object_keypoints(target);
    let d_t = stacked_distance(&domain.object_keypoints(&curr.q_obj), &goal);
    let d_p = stacked_distance(&domain.object_keypoints(&prev.q_obj), &goal);
    rational_potential(params.eps_obj_0, params.eps_obj_1, d_t)
        - rational_potential(params.eps_obj_0, params.eps_obj_1, d_p)
}

/// Non-prehensile post-contact reward for the step `prev -> curr`.
pub fn np_reward(
    domain: &Domain,
    prev: &State,
    curr: &State,
    target: &Pose,
    params: &RewardParams,
) -> Result<NpReward> {
    check_states(&[prev, curr])?;
    let r_obj = object_term(domain, prev, curr, target, params);
    let k = &domain.kinematics;
    let c_t = tips_vs_point(&k.tips(&curr.q_r), curr.q_obj.position());
    let c_p = tips_vs_point(&k.tips(&prev.q_r), prev.q_obj.position());
    let r_tip_contact = rational_potential(params.eps_tipobj_0, params.eps_tipobj_1, c_t)
        - rational_potential(params.eps_tipobj_0, params.eps_tipobj_1, c_p);
    let r_success = skill_success(domain, curr, target, params)?;
    Ok(NpReward {
        r_obj,
        r_tip_contact,
        r_success,
        total: r_obj + r_tip_contact + r_success,
    })
}

/// End-effector keypoints expressed in the object frame.
pub fn ee_keypoints_in_object(domain: &Domain, state: &State) -> [Vector3<f64>; 8] {
    domain
        .kinematics
        .ee_keypoints(&state.q_r)
        .map(|p| state.q_obj.inverse_transform_point(&p))
}

/// Prehensile post-contact reward for the step `prev -> curr`.
pub fn p_reward(
    domain: &Domain,
    prev: &State,
    curr: &State,
    target: &Pose,
    params: &RewardParams,
) -> Result<PReward> {
    check_states(&[prev, curr])?;
    let r_obj = object_term(domain, prev, curr, target, params);
    let th_t = curr.q_obj.angle_to(target);
    let th_p = prev.q_obj.angle_to(target);
    let r_rot = rational_potential(params.eps_rot_0, params.eps_rot_1, th_t)
        - rational_potential(params.eps_rot_0, params.eps_rot_1, th_p);
    let rel = stacked_distance(
        &ee_keypoints_in_object(domain, curr),
        &ee_keypoints_in_object(domain, prev),
    );
    let r_grasp = -params.w_grasp * rel;
    let r_success = skill_success(domain, curr, target, params)?;
    Ok(PReward {
        r_obj,
        r_rot,
        r_grasp,
        r_success,
        total: r_obj + r_rot + r_grasp + r_success,
    })
}
