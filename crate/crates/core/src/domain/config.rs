//! TOML schema for domain definitions.
//!
//! Angles are radians. Frames are written as `{ position = [x, y, z], rpy = [r, p, y] }`.
//! Reward constants live in a top-level `[rewards]` table; a skill may
//! override any of them in its own `rewards` table.

use std::collections::BTreeMap;

use nalgebra::{Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    Axis, Domain, GraspModel, Kinematics, ProblemSpec, SkillKind, SkillSpec, SuccessNoise,
    Tolerances, N_JOINTS,
};
use crate::connector::{ConnectorParams, RewardParams};
use crate::error::{config, Error, Result};
use crate::geometry::{Interval, KeypointTemplate, Obstacle, Pose, Region, YawInterval};

/// Names accepted by [`Domain::builtin`].
pub const BUILTIN_NAMES: [&str; 2] = ["cardflip2d", "twoshelf"];

const CARDFLIP: &str = include_str!("../../domains/cardflip2d.toml");
const TWOSHELF: &str = include_str!("../../domains/twoshelf.toml");

pub(super) fn builtin(name: &str) -> Result<Domain> {
    match name {
        "cardflip2d" => Domain::from_toml_str(CARDFLIP),
        "twoshelf" => Domain::from_toml_str(TWOSHELF),
        other => Err(config(format!(
            "unknown builtin domain '{other}' (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Source text of a built-in domain.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "cardflip2d" => Some(CARDFLIP),
        "twoshelf" => Some(TWOSHELF),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl FrameConfig {
    fn pose(&self) -> Pose {
        let [x, y, z] = self.position;
        let [r, p, w] = self.rpy;
        Pose::from_xyz_rpy(x, y, z, r, p, w)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    #[serde(default)]
    pub min: Option<[f64; 3]>,
    #[serde(default)]
    pub max: Option<[f64; 3]>,
    #[serde(default)]
    pub half_spaces: Vec<crate::geometry::HalfSpace>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: String,
    #[serde(default)]
    pub frame: FrameConfig,
    pub x: Interval,
    pub y: Interval,
    pub yaw: YawInterval,
    pub fixed_z: f64,
    pub roll_pitch: Vec<(f64, f64)>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub drop_outside: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillConfig {
    pub id: String,
    pub kind: SkillKind,
    pub regions: Vec<String>,
    #[serde(default)]
    pub locked_axes: Vec<Axis>,
    pub success_noise: SuccessNoise,
    pub failure_prob: f64,
    #[serde(default = "default_n_sim")]
    pub n_sim: u32,
    #[serde(default)]
    pub approach_offset: [f64; 3],
    pub connector: String,
    #[serde(default)]
    pub rewards: toml::Table,
}

fn default_n_sim() -> u32 {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsConfig {
    pub base: [f64; 3],
    pub position_map: [[f64; 4]; 3],
    pub joint_limits: [Interval; N_JOINTS],
    pub ee_box: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspConfig {
    pub reach_center: [f64; 3],
    pub reach_radius: f64,
    pub finger_half_span: f64,
    pub templates: Vec<FrameConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    /// Box dimensions; the keypoints are its vertices.
    pub size: Option<[f64; 3]>,
    pub keypoints: Option<KeypointTemplate>,
}

/// Parsed but unvalidated domain file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub name: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_torque_gain")]
    pub torque_gain: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub kinematics: KinematicsConfig,
    pub object: ObjectConfig,
    pub grasp: GraspConfig,
    pub regions: Vec<RegionConfig>,
    pub skills: Vec<SkillConfig>,
    #[serde(default)]
    pub connector: ConnectorDefaults,
    pub rewards: toml::Table,
    pub problem: ProblemSpec,
}

fn default_alpha() -> f64 {
    crate::geometry::DEFAULT_ALPHA
}

fn default_torque_gain() -> f64 {
    0.01
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectorDefaults {
    pub resolution: f64,
    pub disturbance_gain: f64,
    pub disturbance_radius: f64,
}

impl Default for ConnectorDefaults {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            disturbance_gain: 0.002,
            disturbance_radius: 0.02,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl DomainConfig {
    /// Parses TOML text. Errors carry the line and key path of the offending value.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            match line {
                Some(l) => config(format!("line {l}: {}", e.message().trim())),
                None => config(e.message().trim().to_string()),
            }
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            let line = inner.span().map(|s| line_of(text, s.start));
            match line {
                Some(l) => config(format!("line {l}, key '{path}': {}", inner.message().trim())),
                None => config(format!("key '{path}': {}", inner.message().trim())),
            }
        })
    }

    /// Validates and resolves cross references.
    pub fn build(&self) -> Result<Domain> {
        let check = |ok: bool, key: &str, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(config(format!("key '{key}': {what}")))
            }
        };
        check(self.alpha.is_finite() && self.alpha >= 0.0, "alpha", "must be >= 0")?;
        let t = &self.tolerances;
        for (k, v) in [
            ("region", t.region),
            ("axis", t.axis),
            ("contact", t.contact),
            ("grasp", t.grasp),
        ] {
            check(v.is_finite() && v >= 0.0, &format!("tolerances.{k}"), "must be >= 0")?;
        }

        let regions = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, rc)| {
                let obstacles = rc
                    .obstacles
                    .iter()
                    .enumerate()
                    .map(|(j, o)| match (o.min, o.max) {
                        (Some(min), Some(max)) => {
                            check(
                                min.iter().zip(&max).all(|(a, b)| a <= b),
                                &format!("regions[{i}].obstacles[{j}]"),
                                "min must not exceed max",
                            )?;
                            let mut ob = Obstacle::aabb(min, max);
                            ob.half_spaces.extend(o.half_spaces.iter().copied());
                            Ok(ob)
                        }
                        (None, None) => Ok(Obstacle {
                            half_spaces: o.half_spaces.clone(),
                        }),
                        _ => Err(config(format!(
                            "key 'regions[{i}].obstacles[{j}]': give both min and max"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let region = Region {
                    id: rc.id.clone(),
                    frame: rc.frame.pose(),
                    x: rc.x,
                    y: rc.y,
                    yaw: rc.yaw,
                    fixed_z: rc.fixed_z,
                    roll_pitch: rc.roll_pitch.clone(),
                    obstacles,
                    drop_outside: rc.drop_outside,
                };
                region
                    .validate()
                    .map_err(|e| config(format!("key 'regions[{i}]': {e}")))?;
                Ok(region)
            })
            .collect::<Result<Vec<_>>>()?;
        check(!regions.is_empty(), "regions", "at least one region is required")?;
        for (i, r) in regions.iter().enumerate() {
            check(
                !regions[..i].iter().any(|o| o.id == r.id),
                &format!("regions[{i}].id"),
                "duplicate region id",
            )?;
        }

        let base_rewards = self.rewards.clone();
        let domain_rewards: RewardParams = toml::Value::Table(base_rewards.clone())
            .try_into()
            .map_err(|e: toml::de::Error| config(format!("key 'rewards': {}", e.message())))?;
        domain_rewards
            .validate()
            .map_err(|e| config(format!("key 'rewards': {e}")))?;

        let mut skills = Vec::with_capacity(self.skills.len());
        let mut connector_skill_map = BTreeMap::new();
        for (i, sc) in self.skills.iter().enumerate() {
            let key = format!("skills[{i}]");
            check(!sc.regions.is_empty(), &format!("{key}.regions"), "must not be empty")?;
            let region_idx = sc
                .regions
                .iter()
                .map(|id| {
                    regions
                        .iter()
                        .position(|r| &r.id == id)
                        .ok_or_else(|| config(format!("key '{key}.regions': unknown region '{id}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            check(
                (0.0..=1.0).contains(&sc.failure_prob),
                &format!("{key}.failure_prob"),
                "must lie in [0, 1]",
            )?;
            check(sc.n_sim >= 1, &format!("{key}.n_sim"), "must be >= 1")?;
            check(
                sc.success_noise.position >= 0.0 && sc.success_noise.yaw >= 0.0,
                &format!("{key}.success_noise"),
                "must be >= 0",
            )?;
            check(
                !skills.iter().any(|s: &SkillSpec| s.id == sc.id),
                &format!("{key}.id"),
                "duplicate skill id",
            )?;
            let mut merged = base_rewards.clone();
            for (k, v) in &sc.rewards {
                merged.insert(k.clone(), v.clone());
            }
            let rewards: RewardParams = toml::Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| config(format!("key '{key}.rewards': {}", e.message())))?;
            rewards
                .validate()
                .map_err(|e| config(format!("key '{key}.rewards': {e}")))?;
            connector_skill_map.insert(sc.id.clone(), sc.connector.clone());
            skills.push(SkillSpec {
                id: sc.id.clone(),
                kind: sc.kind,
                region_ids: sc.regions.clone(),
                region_idx,
                locked_axes: sc.locked_axes.clone(),
                success_noise: sc.success_noise,
                failure_prob: sc.failure_prob,
                n_sim: sc.n_sim,
                approach_offset: Vector3::from(sc.approach_offset),
                rewards,
            });
        }
        let n_p = skills.iter().filter(|s| s.kind == SkillKind::Prehensile).count();
        check(n_p == 1, "skills", "exactly one prehensile skill is required")?;

        let kc = &self.kinematics;
        let m = Matrix3x4::from_fn(|r, c| kc.position_map[r][c]);
        let [bx, by, bz] = kc.ee_box;
        let kinematics = Kinematics::new(
            Vector3::from(kc.base),
            m,
            kc.joint_limits,
            KeypointTemplate::cuboid(bx, by, bz).map_err(|e| config(format!("key 'kinematics.ee_box': {e}")))?,
        )?;

        let gc = &self.grasp;
        check(gc.reach_radius > 0.0, "grasp.reach_radius", "must be > 0")?;
        check(!gc.templates.is_empty(), "grasp.templates", "at least one template is required")?;
        check(gc.finger_half_span >= 0.0, "grasp.finger_half_span", "must be >= 0")?;
        let grasp = GraspModel {
            templates: gc.templates.iter().map(FrameConfig::pose).collect(),
            reach_center: Vector3::from(gc.reach_center),
            reach_radius: gc.reach_radius,
            finger_half_span: gc.finger_half_span,
        };

        let object_keypoints = match (&self.object.size, &self.object.keypoints) {
            (Some([x, y, z]), None) => KeypointTemplate::cuboid(*x, *y, *z)?,
            (None, Some(k)) => k.clone(),
            _ => return Err(config("key 'object': give exactly one of size or keypoints")),
        };

        let cd = self.connector;
        check(cd.resolution > 0.0, "connector.resolution", "must be > 0")?;
        check(cd.disturbance_radius > 0.0, "connector.disturbance_radius", "must be > 0")?;
        check(cd.disturbance_gain >= 0.0, "connector.disturbance_gain", "must be >= 0")?;

        let domain = Domain {
            name: self.name.clone(),
            alpha: self.alpha,
            rng_seed: self.rng_seed,
            regions,
            skills,
            connector_skill_map,
            grasp,
            object_keypoints,
            kinematics,
            tolerances: self.tolerances,
            connector: ConnectorParams {
                id: "default".into(),
                resolution: cd.resolution,
                disturbance_gain: cd.disturbance_gain,
                disturbance_radius: cd.disturbance_radius,
            },
            rewards: domain_rewards,
            torque_gain: self.torque_gain,
            problem: self.problem.clone(),
        };
        domain.problem.validate(&domain).map_err(|e| match e {
            Error::Config(m) => config(format!("key 'problem': {m}")),
            other => other,
        })?;
        Ok(domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_load() {
        for name in BUILTIN_NAMES {
            let d = Domain::builtin(name).unwrap();
            assert_eq!(d.name, name);
            assert!(d.skills.iter().all(|s| d.connector_skill_map.contains_key(&s.id)));
        }
        assert!(Domain::builtin("nope").is_err());
    }

    #[test]
    fn paper_reward_constants() {
        let d = Domain::builtin("cardflip2d").unwrap();
        let r = &d.rewards;
        assert_eq!((r.eps_ee_0, r.eps_ee_1), (40.0, 0.9));
        assert_eq!((r.eps_tip_0, r.eps_tip_1), (40.0, 1.0));
        assert_eq!((r.w_move, r.r_succ_connector), (0.3, 1000.0));
        assert_eq!((r.delta_ee, r.delta_tip), (0.01, 0.003));
        let slide = &d.skill("slide").unwrap().rewards;
        assert_eq!((slide.eps_obj_0, slide.eps_obj_1, slide.r_succ), (0.02, 0.02, 1000.0));
        assert_eq!((slide.eps_tipobj_0, slide.eps_tipobj_1), (0.0, 0.0));
        let pick = &d.skill("pick").unwrap().rewards;
        assert_eq!((pick.eps_obj_0, pick.eps_obj_1, pick.w_grasp), (0.2, 0.02, 0.0));

        let d = Domain::builtin("twoshelf").unwrap();
        let topple = &d.skill("topple").unwrap().rewards;
        assert_eq!((topple.eps_obj_0, topple.eps_obj_1, topple.r_succ), (0.3, 0.02, 500.0));
        assert_eq!((topple.eps_tipobj_0, topple.eps_tipobj_1), (1.0, 0.02));
        let push = &d.skill("push").unwrap().rewards;
        assert_eq!((push.eps_obj_0, push.eps_obj_1, push.r_succ), (1.0, 0.01, 50.0));
        let pick = &d.skill("pick").unwrap().rewards;
        assert_eq!((pick.eps_obj_0, pick.eps_rot_0, pick.eps_rot_1, pick.w_grasp), (0.15, 0.15, 0.1, 10.0));
        assert_eq!(d.rewards.eps_ee_1, 0.9);
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = DomainConfig::parse("name = \"x\"\nalpha = = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn type_error_reports_line_and_path() {
        let src = builtin_source("cardflip2d").unwrap();
        let broken = src.replacen("failure_prob = 0.01", "failure_prob = \"often\"", 1);
        assert_ne!(src, broken);
        let err = DomainConfig::parse(&broken).unwrap_err().to_string();
        assert!(err.contains("skills[0].failure_prob"), "{err}");
        let line = broken
            .lines()
            .position(|l| l.contains("\"often\""))
            .unwrap()
            + 1;
        assert!(err.contains(&format!("line {line}")), "{err}");
    }

    #[test]
    fn unknown_region_is_rejected() {
        let src = builtin_source("cardflip2d").unwrap();
        let broken = src.replacen("regions = [\"table\"]", "regions = [\"floor\"]", 1);
        assert_ne!(src, broken);
        let err = Domain::from_toml_str(&broken).unwrap_err().to_string();
        assert!(err.contains("unknown region 'floor'"), "{err}");
    }
}
