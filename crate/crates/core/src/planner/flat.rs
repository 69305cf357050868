//! Uniform-random flat baseline: no tree, no goal bias. Every iteration
//! draws a skill and a subgoal, moves the robot to the pre-contact
//! configuration and runs the skill from whatever state results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compute_connecting_node, near_enough, unif_sample_skill_and_subgoal, Connectors, PlannerParams};
use crate::domain::{phi, pre_contact_config, simulate, Domain, Invocation, State};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct FlatResult {
    pub solved: bool,
    pub iterations: usize,
    pub final_state: State,
    pub sim_steps: u64,
}

/// Runs the flat baseline for at most `params.n_max` skill invocations.
/// `params.p_g` is ignored: subgoals never use the goal pose.
pub fn flat_baseline(
    s0: &State,
    q_goal: &Pose,
    domain: &Domain,
    connectors: &Connectors,
    params: &PlannerParams,
) -> Result<FlatResult> {
    super::validate_inputs(s0, q_goal, domain, connectors, params)?;
    let mut state = s0.clone();
    let mut sim_steps = 0u64;
    if near_enough(&state, q_goal, params) {
        return Ok(FlatResult { solved: true, iterations: 0, final_state: state, sim_steps });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for it in 1..=params.n_max {
        let (k, target) = unif_sample_skill_and_subgoal(domain, q_goal, 0.0, &mut rng);
        let ext_seed: u64 = rng.random();
        let spec = &domain.skills[k];
        let mut pc_rng = ChaCha8Rng::seed_from_u64(derive_seed(ext_seed, &[1]));
        let q_r = match pre_contact_config(domain, spec, &state.q_obj, &target, &mut pc_rng) {
            Ok(q) => q,
            Err(Error::NoPreContact(_)) => continue,
            Err(e) => return Err(e),
        };
        let v = super::Node {
            id: 0,
            parent: None,
            policy_tag: super::PolicyTag::None,
            goal: super::NodeGoal::None,
            state: state.clone(),
            seed: 0,
        };
        let Some((connected, _, _)) = compute_connecting_node(&q_r, &spec.id, connectors, &v, domain)? else {
            continue;
        };
        state = connected;
        if !phi(domain, spec, &state, &target)? {
            continue;
        }
        let mut sk_rng = ChaCha8Rng::seed_from_u64(derive_seed(ext_seed, &[3]));
        let inv = Invocation::Skill { skill: &spec.id, target };
        let out = simulate(domain, &state, &inv, None, &mut sk_rng)?;
        sim_steps += out.steps as u64;
        state = out.state;
        if near_enough(&state, q_goal, params) {
            return Ok(FlatResult { solved: true, iterations: it, final_state: state, sim_steps });
        }
    }
    Ok(FlatResult {
        solved: false,
        iterations: params.n_max,
        final_state: state,
        sim_steps,
    })
}
