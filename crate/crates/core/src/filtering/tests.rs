use super::*;
use crate::domain::N_JOINTS;
use crate::planner::PlannerParams;
use proptest::prelude::*;

fn card(failure: f64) -> Domain {
    let mut d = Domain::builtin("cardflip2d").unwrap();
    for s in &mut d.skills {
        s.failure_prob = failure;
        s.success_noise.position = 0.0;
        s.success_noise.yaw = 0.0;
    }
    d
}

fn flat(x: f64, y: f64) -> Pose {
    Pose::from_xyz_rpy(x, y, 0.002, 0.0, 0.0, 0.0)
}

/// Three long slides around a square. A failed slide leaves the card far
/// from the next approach point, so every later slide misses it.
fn square_plan(d: &Domain) -> SkillPlan {
    let corners = [flat(-0.1, -0.1), flat(0.1, -0.1), flat(0.1, 0.1), flat(-0.1, 0.1)];
    let slide = d.skill("slide").unwrap();
    let mut steps = Vec::new();
    for (i, w) in corners.windows(2).enumerate() {
        steps.push(PlanStep::Teleport {
            q_r: d.approach_config(slide, &w[0]).unwrap(),
        });
        steps.push(PlanStep::Skill {
            id: "slide".into(),
            target: w[1],
            seed: i as u64,
        });
    }
    SkillPlan {
        plan_id: "square".into(),
        domain: d.name.clone(),
        seed: 0,
        params: PlannerParams::default(),
        initial_state: State::at_rest(corners[0], [0.0; N_JOINTS]),
        goal_pose: corners[3],
        steps,
    }
}

fn report(id: &str, rate: f64) -> ReplayReport {
    ReplayReport {
        plan_id: id.into(),
        n_replays: 100,
        n_success: (rate * 100.0).round() as usize,
        success_rate: rate,
        seed: 0,
        records: Vec::new(),
    }
}

#[test]
fn noiseless_plan_always_succeeds() {
    let d = card(0.0);
    let plan = square_plan(&d);
    let r = replay_plan(&plan, &d, &NoiseConfig::none(), 50, 1).unwrap();
    assert_eq!(r.n_success, 50);
    assert_eq!(r.success_rate, 1.0);
    assert!(r.records.iter().all(|x| x.distance == 0.0));
}

#[test]
fn certain_failure_never_succeeds() {
    let d = card(1.0);
    let plan = square_plan(&d);
    let r = replay_plan(&plan, &d, &NoiseConfig::none(), 50, 1).unwrap();
    assert_eq!(r.n_success, 0);
}

#[test]
fn success_rate_compounds_over_steps() {
    let d = card(0.1);
    let plan = square_plan(&d);
    assert_eq!(plan.skill_steps(), 3);
    let n = 10_000;
    let r = replay_plan(&plan, &d, &NoiseConfig::none(), n, 77).unwrap();
    let p = 0.9f64.powi(3);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((r.success_rate - p).abs() < 3.0 * se, "{}", r.success_rate);
}

#[test]
fn replay_is_deterministic() {
    let d = card(0.3);
    let plan = square_plan(&d);
    let a = replay_plan(&plan, &d, &NoiseConfig::default(), 64, 5).unwrap();
    let b = replay_plan(&plan, &d, &NoiseConfig::default(), 64, 5).unwrap();
    assert_eq!(a, b);
    let c = replay_plan(&plan, &d, &NoiseConfig::default(), 64, 6).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn replay_rejects_bad_arguments() {
    let d = card(0.0);
    let plan = square_plan(&d);
    assert!(replay_plan(&plan, &d, &NoiseConfig::none(), 0, 1).is_err());
    let bad = NoiseConfig {
        obj_pos_sigma: -1.0,
        ..NoiseConfig::none()
    };
    assert!(replay_plan(&plan, &d, &bad, 1, 1).is_err());
}

#[test]
fn filter_is_strict() {
    let reports = [report("a", 0.9), report("b", 0.91), report("c", 1.0), report("d", 0.0)];
    assert_eq!(filter_plans(&reports, 0.9).unwrap(), vec!["b", "c"]);
    assert_eq!(filter_plans(&reports, 0.0).unwrap(), vec!["a", "b", "c"]);
    assert!(filter_plans(&reports, 1.0).unwrap().is_empty());
    assert!(filter_plans(&reports, 1.5).is_err());
    assert!(filter_plans(&reports, f64::NAN).is_err());
}

proptest! {
    #[test]
    fn filter_is_monotone(rates in prop::collection::vec(0.0f64..=1.0, 0..20), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let reports: Vec<_> = rates.iter().enumerate().map(|(i, &r)| report(&i.to_string(), r)).collect();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = filter_plans(&reports, lo).unwrap();
        let tight = filter_plans(&reports, hi).unwrap();
        prop_assert!(tight.iter().all(|id| loose.contains(id)));
    }
}

#[test]
fn export_counts_records() {
    let d = card(0.0);
    let plan = square_plan(&d);
    let plans = vec![plan.clone(), SkillPlan { plan_id: "again".into(), ..plan }];
    let out = export_dataset(&plans, &d, &NoiseConfig::default(), 3, 11).unwrap();
    assert_eq!(out.records.len(), 2 * 3 * 6);
    for s in &out.summaries {
        assert_eq!((s.steps, s.requested, s.recorded, s.attempts, s.shortfall), (6, 3, 3, 3, 0));
    }
    for r in &out.records {
        assert_eq!(r.schema_version, SCHEMA_VERSION);
    }
    let first: Vec<_> = out.records.iter().take(6).map(|r| (r.traj_index, r.step_index)).collect();
    assert_eq!(first, (0..6).map(|i| (0, i)).collect::<Vec<_>>());
}

#[test]
fn export_reports_shortfall() {
    let d = card(1.0);
    let plan = square_plan(&d);
    let out = export_dataset(&[plan], &d, &NoiseConfig::none(), 2, 3).unwrap();
    assert!(out.records.is_empty());
    let s = &out.summaries[0];
    assert_eq!(s.recorded, 0);
    assert_eq!(s.attempts, 2 * ATTEMPT_FACTOR);
    assert_eq!(s.shortfall, 2);
}

#[test]
fn export_is_deterministic() {
    let d = card(0.2);
    let plan = square_plan(&d);
    let a = export_dataset(std::slice::from_ref(&plan), &d, &NoiseConfig::default(), 4, 8).unwrap();
    let b = export_dataset(std::slice::from_ref(&plan), &d, &NoiseConfig::default(), 4, 8).unwrap();
    assert_eq!(a, b);
}

#[test]
fn relative_keypoints_round_trip() {
    let d = card(0.0);
    let plan = square_plan(&d);
    let out = export_dataset(&[plan], &d, &NoiseConfig::default(), 2, 4).unwrap();
    for r in &out.records {
        let world = r.p_ee.iter().chain(&r.p_tip);
        let rel = r.p_ee_rel.iter().chain(&r.p_tip_rel);
        for (w, l) in world.zip(rel) {
            let back = r.obj_pose.transform_point(&Vector3::from(*l));
            assert!((back - Vector3::from(*w)).norm() < 1e-9);
        }
    }
}

#[test]
fn records_carry_previous_joints() {
    let d = card(0.0);
    let plan = square_plan(&d);
    let out = export_dataset(&[plan], &d, &NoiseConfig::default(), 1, 4).unwrap();
    assert_eq!(out.records[0].q_r_prev, out.records[0].q_r);
    for w in out.records.windows(2) {
        assert_eq!(w[1].q_r_prev, w[0].q_r);
    }
    assert_eq!(out.records[1].action.tag, "skill");
    assert_eq!(out.records[0].action.tag, "teleport");
}

#[test]
fn observation_noise_leaves_latent_state() {
    let d = card(0.0);
    let plan = square_plan(&d);
    let out = export_dataset(std::slice::from_ref(&plan), &d, &NoiseConfig::default(), 1, 2).unwrap();
    let r = &out.records[2];
    assert_ne!(r.obj_pose, r.state.q_obj);
    let clean = NoiseConfig {
        obj_pos_sigma: 0.0,
        obj_rot_sigma: 0.0,
        joint_pos_sigma: 0.0,
        ee_pos_sigma: 0.0,
        ee_rot_sigma: 0.0,
        ..NoiseConfig::default()
    };
    let out = export_dataset(&[plan], &d, &clean, 1, 2).unwrap();
    let r = &out.records[2];
    assert_eq!(r.obj_pose, r.state.q_obj);
    assert_eq!(r.q_r, r.state.q_r);
}

#[test]
fn record_states_can_be_recomputed() {
    let d = card(0.3);
    let plan = square_plan(&d);
    let out = export_dataset(std::slice::from_ref(&plan), &d, &NoiseConfig::default(), 3, 21).unwrap();
    for r in &out.records {
        assert_eq!(replay_record_state(&plan, &d, &NoiseConfig::default(), r).unwrap(), r.state);
    }
}

#[test]
fn noise_config_rejects_unknown_keys() {
    let e = toml::from_str::<NoiseConfig>("obj_pos_sigma = 0.1\nbogus = 1\n");
    assert!(e.is_err());
    let n: NoiseConfig = toml::from_str("torque_sigma = 0.5\n").unwrap();
    assert_eq!(n.torque_sigma, 0.5);
    assert_eq!(n.obj_pos_sigma, NoiseConfig::default().obj_pos_sigma);
}
