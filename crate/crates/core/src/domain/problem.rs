//! Seeded generation of start/goal problems.
//!
//! Start and goal are drawn from different regions, or from opposite
//! orientation classes of one region. Both must be ungraspable so that every
//! problem needs at least one non-prehensile move before a grasp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{feasible_grasps, Domain, JointVector, State, N_JOINTS};
use crate::error::{config, Error, Result};
use crate::geometry::{Interval, Pose, YawInterval};
use crate::seed::derive_seed;

/// Where one end of a problem may be sampled.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSampler {
    pub region: String,
    /// Sub-intervals of the region's own bounds; default to the full range.
    #[serde(default)]
    pub x: Option<Interval>,
    #[serde(default)]
    pub y: Option<Interval>,
    #[serde(default)]
    pub yaw: Option<YawInterval>,
    /// Admissible orientation classes (indices into the region's roll/pitch set).
    #[serde(default)]
    pub classes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub start: PoseSampler,
    pub goal: PoseSampler,
    /// Goal must use a different orientation class than the start.
    #[serde(default)]
    pub opposite_class: bool,
    /// Minimum clearance between the initial end effector and the object.
    #[serde(default = "default_clearance")]
    pub robot_clearance: f64,
}

fn default_clearance() -> f64 {
    0.08
}

/// A planning problem: a stationary start state and a goal object pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub initial: State,
    pub goal: Pose,
}

const MAX_TRIES: usize = 100_000;

impl PoseSampler {
    fn region<'d>(&self, domain: &'d Domain) -> Result<(usize, &'d crate::geometry::Region)> {
        let i = domain
            .region_index(&self.region)
            .ok_or_else(|| config(format!("unknown region '{}'", self.region)))?;
        Ok((i, &domain.regions[i]))
    }

    fn classes(&self, domain: &Domain) -> Result<Vec<usize>> {
        let (_, r) = self.region(domain)?;
        let all: Vec<usize> = (0..r.roll_pitch.len()).collect();
        let c = self.classes.clone().unwrap_or(all);
        if c.is_empty() || c.iter().any(|&k| k >= r.roll_pitch.len()) {
            return Err(config(format!(
                "classes for region '{}' must be non-empty indices below {}",
                self.region,
                r.roll_pitch.len()
            )));
        }
        Ok(c)
    }

    fn sample<R: Rng + ?Sized>(&self, domain: &Domain, class: usize, rng: &mut R) -> Result<Pose> {
        let (_, r) = self.region(domain)?;
        let x = self.x.unwrap_or(r.x).sample(rng);
        let y = self.y.unwrap_or(r.y).sample(rng);
        let yaw = self.yaw.unwrap_or(r.yaw).sample(rng);
        Ok(r.pose_at(x, y, yaw, class))
    }
}

impl ProblemSpec {
    pub(crate) fn validate(&self, domain: &Domain) -> Result<()> {
        let a = self.start.classes(domain)?;
        let b = self.goal.classes(domain)?;
        for s in [&self.start, &self.goal] {
            let (_, r) = s.region(domain)?;
            for (name, sub, full) in [("x", s.x, r.x), ("y", s.y, r.y)] {
                if let Some(sub) = sub {
                    if sub.lo < full.lo || sub.hi > full.hi {
                        return Err(config(format!(
                            "{name} range of '{}' exceeds the region bounds",
                            s.region
                        )));
                    }
                }
            }
        }
        if self.opposite_class && !a.iter().any(|c| b.iter().any(|d| d != c)) {
            return Err(config("opposite_class needs two distinct classes"));
        }
        if !self.opposite_class && self.start.region == self.goal.region {
            return Err(config(
                "start and goal share a region; set opposite_class or use distinct regions",
            ));
        }
        Ok(())
    }
}

fn ungraspable_pose<R: Rng + ?Sized>(
    domain: &Domain,
    sampler: &PoseSampler,
    classes: &[usize],
    rng: &mut R,
) -> Result<(Pose, usize)> {
    for _ in 0..MAX_TRIES {
        let class = classes[rng.random_range(0..classes.len())];
        let pose = sampler.sample(domain, class, rng)?;
        if feasible_grasps(domain, &pose).is_empty() {
            return Ok((pose, class));
        }
    }
    Err(config(format!(
        "could not sample an ungraspable pose in region '{}'",
        sampler.region
    )))
}

/// Random stationary robot configuration whose end effector is in reach,
/// outside every obstacle, and clear of the object.
pub fn sample_robot_config<R: Rng + ?Sized>(
    domain: &Domain,
    q_obj: &Pose,
    clearance: f64,
    rng: &mut R,
) -> Result<JointVector> {
    let c = domain.grasp.reach_center;
    let rad = domain.grasp.reach_radius;
    for _ in 0..MAX_TRIES {
        let p = c + nalgebra::Vector3::from_fn(|_, _| rad * (2.0 * rng.random::<f64>() - 1.0));
        let roll = std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
        let pitch = 0.5 * (2.0 * rng.random::<f64>() - 1.0);
        let yaw = std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
        if (p - c).norm() > rad
            || domain.blocked(&p)
            || (p - q_obj.position()).norm() < clearance
        {
            continue;
        }
        let ee = Pose::from_xyz_rpy(p.x, p.y, p.z, roll, pitch, yaw);
        if let Some(q) = domain.kinematics.ik(&ee, 0.0) {
            return Ok(q);
        }
    }
    Err(config("could not sample an initial robot configuration"))
}

/// One problem from the domain's generation rule.
pub fn generate_problem<R: Rng + ?Sized>(domain: &Domain, rng: &mut R) -> Result<Problem> {
    let spec = &domain.problem;
    let start_classes = spec.start.classes(domain)?;
    let goal_classes = spec.goal.classes(domain)?;
    let (start, class) = ungraspable_pose(domain, &spec.start, &start_classes, rng)?;
    let goal_classes: Vec<usize> = if spec.opposite_class {
        goal_classes.into_iter().filter(|&c| c != class).collect()
    } else {
        goal_classes
    };
    if goal_classes.is_empty() {
        return Err(config("no goal class differs from the start class"));
    }
    let (goal, _) = ungraspable_pose(domain, &spec.goal, &goal_classes, rng)?;
    let q_r = sample_robot_config(domain, &start, spec.robot_clearance, rng)?;
    debug_assert_eq!(q_r.len(), N_JOINTS);
    Ok(Problem {
        initial: State::at_rest(start, q_r),
        goal,
    })
}

/// `count` problems; problem `i` depends only on `(seed, i)`.
pub fn generate_problems(domain: &Domain, count: usize, seed: u64) -> Result<Vec<Problem>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5052_4f42, i as u64]));
            generate_problem(domain, &mut rng)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Config(m) => config(format!("problem generation: {m}")),
            other => other,
        })
}
