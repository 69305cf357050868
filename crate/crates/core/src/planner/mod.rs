//! Skill-RRT: a tree over world states grown by sampling a skill and a
//! desired object pose, picking the nearest node the skill applies to, and
//! simulating the skill from a connecting node.
//!
//! With [`Connectors::Lazy`] the robot is teleported to each pre-contact
//! configuration. [`skill_rrt_batch`] resolves several samples against one
//! tree snapshot and extends them in parallel.

mod flat;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connector::{ConnectorParams, ConnectorSet};
use crate::domain::{
    local_coords, locked_axes_match, phi_p, pre_contact_config, simulate, Domain, Invocation,
    JointVector, SkillKind, State,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::{region_contains, sample_pose, se3_distance, se3_distance_unchecked, Pose};
use crate::seed::derive_seed;

pub use flat::{flat_baseline, FlatResult};

/// Policy that produced a node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum PolicyTag {
    /// The root, or a teleport in lazy mode.
    None,
    Skill(String),
    Connector(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NodeGoal {
    None,
    ObjectPose(Pose),
    RobotConfig(JointVector),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub policy_tag: PolicyTag,
    pub goal: NodeGoal,
    pub state: State,
    /// Seed of the simulation that produced this node.
    pub seed: u64,
}

/// Append-only search tree.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub nodes: Vec<Node>,
    pub children: Vec<Vec<usize>>,
}

impl PlanTree {
    pub fn new(root: State) -> Self {
        Self {
            nodes: vec![Node {
                id: 0,
                parent: None,
                policy_tag: PolicyTag::None,
                goal: NodeGoal::None,
                state: root,
                seed: 0,
            }],
            children: vec![Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node under `parent` and returns its id.
    pub fn add(&mut self, parent: usize, policy_tag: PolicyTag, goal: NodeGoal, state: State, seed: u64) -> usize {
        assert!(parent < self.nodes.len(), "parent {parent} not in tree");
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            parent: Some(parent),
            policy_tag,
            goal,
            state,
            seed,
        });
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }
}

/// Root-first node ids from the root to `node`.
pub fn retrace(tree: &PlanTree, node: usize) -> Vec<usize> {
    let mut path = vec![node];
    let mut cur = node;
    while let Some(p) = tree.nodes[cur].parent {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub n_max: usize,
    /// Probability of proposing the goal pose as the subgoal.
    pub p_g: f64,
    /// Skill-success threshold on the pose distance.
    pub delta_obj: f64,
    /// Goal-reached threshold on the pose distance.
    pub delta_goal: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            n_max: 10_000,
            p_g: 0.2,
            delta_obj: 0.005,
            delta_goal: 0.005,
            alpha: crate::geometry::DEFAULT_ALPHA,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_g) {
            return Err(invalid(format!("p_g must lie in [0, 1], got {}", self.p_g)));
        }
        if !(self.delta_obj > 0.0 && self.delta_goal > 0.0) {
            return Err(invalid("delta_obj and delta_goal must be positive"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("alpha must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// How the robot reaches each pre-contact configuration.
#[derive(Clone, Debug)]
pub enum Connectors {
    /// Teleport the robot; used to mine connector problems.
    Lazy,
    Scripted(ConnectorSet),
    /// No connector and no teleport: a skill may only start if the robot is
    /// already within `tol` (per joint) of its pre-contact configuration.
    Forbidden { tol: f64 },
}

/// One executable step of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlanStep {
    Teleport {
        q_r: JointVector,
    },
    Connector {
        params: ConnectorParams,
        q_r: JointVector,
    },
    Skill {
        id: String,
        target: Pose,
        seed: u64,
    },
}

impl PlanStep {
    pub fn is_skill(&self) -> bool {
        matches!(self, PlanStep::Skill { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillPlan {
    pub plan_id: String,
    pub domain: String,
    pub seed: u64,
    pub params: PlannerParams,
    pub initial_state: State,
    pub goal_pose: Pose,
    pub steps: Vec<PlanStep>,
}

impl SkillPlan {
    pub fn skill_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.is_skill()).count()
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub plan: Option<SkillPlan>,
    /// Root-first node ids of the solution.
    pub path: Option<Vec<usize>>,
    pub iterations: usize,
    pub tree: PlanTree,
    /// Simulator steps charged over the whole search.
    pub sim_steps: u64,
}

/// Whether a skill outcome missed its target: `false` iff the distance is
/// strictly below `delta_obj`.
pub fn failed(state: &State, q_target: &Pose, params: &PlannerParams) -> Result<bool> {
    Ok(se3_distance(&state.q_obj, q_target, params.alpha)? >= params.delta_obj)
}

fn near_enough(state: &State, goal: &Pose, params: &PlannerParams) -> bool {
    se3_distance_unchecked(&state.q_obj, goal, params.alpha) < params.delta_goal
}

/// A uniformly chosen skill and, with probability `p_g`, the goal pose as
/// subgoal; otherwise a pose sampled from a uniformly chosen skill region.
pub fn unif_sample_skill_and_subgoal<R: Rng + ?Sized>(
    domain: &Domain,
    q_goal: &Pose,
    p_g: f64,
    rng: &mut R,
) -> (usize, Pose) {
    let k = rng.random_range(0..domain.skills.len());
    let skill = &domain.skills[k];
    let use_goal = rng.random::<f64>() < p_g;
    let target = if use_goal {
        *q_goal
    } else {
        let regions = skill.regions();
        let r = regions[rng.random_range(0..regions.len())];
        sample_pose(&domain.regions[r], rng)
    };
    (k, target)
}

/// Cached region-frame coordinates of a node eligible for extension.
#[derive(Clone, Debug)]
struct Candidate {
    id: usize,
    q_obj: Pose,
    coords: Vec<Option<[f64; 6]>>,
}

fn coords_in_regions(domain: &Domain, pose: &Pose) -> Vec<Option<[f64; 6]>> {
    domain
        .regions
        .iter()
        .map(|r| region_contains(r, pose, domain.tolerances.region).then(|| local_coords(r, pose)))
        .collect()
}

impl Candidate {
    fn new(domain: &Domain, node: &Node) -> Self {
        Self {
            id: node.id,
            q_obj: node.state.q_obj,
            coords: coords_in_regions(domain, &node.state.q_obj),
        }
    }
}

/// Nodes from which a skill may start: the root and skill outcomes.
/// Connecting nodes are excluded so tags alternate along every branch.
fn candidates(domain: &Domain, tree: &PlanTree) -> Vec<Candidate> {
    tree.nodes
        .iter()
        .filter(|n| n.parent.is_none() || matches!(n.policy_tag, PolicyTag::Skill(_)))
        .map(|n| Candidate::new(domain, n))
        .collect()
}

fn nearest(
    cands: &[Candidate],
    tree: &PlanTree,
    domain: &Domain,
    skill: usize,
    target: &Pose,
    alpha: f64,
) -> Option<usize> {
    let spec = &domain.skills[skill];
    let argmin = |ok: &dyn Fn(&Candidate) -> bool| {
        let mut best: Option<(f64, usize)> = None;
        for c in cands {
            if !ok(c) {
                continue;
            }
            let d = se3_distance_unchecked(&c.q_obj, target, alpha);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c.id));
            }
        }
        best.map(|(_, id)| id)
    };
    match spec.kind {
        SkillKind::NonPrehensile => {
            let target_coords = coords_in_regions(domain, target);
            let applicable = |c: &Candidate| {
                spec.regions().iter().any(|&r| match (&c.coords[r], &target_coords[r]) {
                    (Some(a), Some(b)) => {
                        locked_axes_match(&spec.locked_axes, a, b, domain.tolerances.axis)
                    }
                    _ => false,
                })
            };
            argmin(&applicable)
        }
        SkillKind::Prehensile => {
            let id = argmin(&|_| true)?;
            phi_p(domain, &tree.nodes[id].state, target).then_some(id)
        }
    }
}

/// Nearest node at which `skill` applies toward `q_target`.
///
/// For non-prehensile skills this is the closest applicable node. For the
/// prehensile skill the closest node overall is returned only if the skill
/// applies there.
pub fn get_applicable_nearest_node(
    tree: &PlanTree,
    skill: &str,
    q_target: &Pose,
    domain: &Domain,
    params: &PlannerParams,
) -> Result<Option<usize>> {
    let k = domain
        .skill_index(skill)
        .ok_or_else(|| crate::error::config(format!("unknown skill '{skill}'")))?;
    let cands = candidates(domain, tree);
    Ok(nearest(&cands, tree, domain, k, q_target, params.alpha))
}

/// The connecting node between `v` and a skill starting at `q_r_target`,
/// or `None` when connectors are forbidden and the robot is elsewhere.
pub fn compute_connecting_node(
    q_r_target: &JointVector,
    skill: &str,
    connectors: &Connectors,
    v: &Node,
    domain: &Domain,
) -> Result<Option<(State, PolicyTag, NodeGoal)>> {
    let goal = NodeGoal::RobotConfig(*q_r_target);
    match connectors {
        Connectors::Lazy => {
            let mut s = v.state.clone();
            s.set_q_r(*q_r_target);
            Ok(Some((s, PolicyTag::None, goal)))
        }
        Connectors::Forbidden { tol } => {
            let gap = v
                .state
                .q_r
                .iter()
                .zip(q_r_target)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > *tol {
                return Ok(None);
            }
            let mut s = v.state.clone();
            s.set_q_r(*q_r_target);
            Ok(Some((s, PolicyTag::None, goal)))
        }
        Connectors::Scripted(set) => {
            let params = set.get(skill)?;
            let inv = Invocation::Connector {
                params,
                goal: *q_r_target,
            };
            // The scripted connector is deterministic; the rng is never drawn.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = simulate(domain, &v.state, &inv, None, &mut rng)?;
            Ok(Some((out.state, PolicyTag::Connector(params.id.clone()), goal)))
        }
    }
}

/// Nodes to append for a successful extension, connecting node first.
#[derive(Clone, Debug)]
struct Extension {
    parent: usize,
    connect: (State, PolicyTag, NodeGoal),
    outcome: State,
    skill: String,
    target: Pose,
    seed: u64,
    sim_steps: u64,
}

const SEED_PRE_CONTACT: u64 = 1;
const SEED_SKILL: u64 = 3;

/// Extends `v_near` with `skill` toward `q_target`. Returns `None` when the
/// pre-contact configuration does not exist, the connection is impossible,
/// or the skill misses its target.
fn extend_from(
    tree: &PlanTree,
    v_near: usize,
    skill: usize,
    q_target: &Pose,
    connectors: &Connectors,
    domain: &Domain,
    params: &PlannerParams,
    ext_seed: u64,
) -> Result<Option<Extension>> {
    let spec = &domain.skills[skill];
    let v = &tree.nodes[v_near];
    let mut pc_rng = ChaCha8Rng::seed_from_u64(derive_seed(ext_seed, &[SEED_PRE_CONTACT]));
    let q_r = match pre_contact_config(domain, spec, &v.state.q_obj, q_target, &mut pc_rng) {
        Ok(q) => q,
        Err(Error::NoPreContact(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let Some(connect) = compute_connecting_node(&q_r, &spec.id, connectors, v, domain)? else {
        return Ok(None);
    };
    let seed = derive_seed(ext_seed, &[SEED_SKILL]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv = Invocation::Skill {
        skill: &spec.id,
        target: *q_target,
    };
    let out = simulate(domain, &connect.0, &inv, None, &mut rng)?;
    if failed(&out.state, q_target, params)? {
        return Ok(None);
    }
    Ok(Some(Extension {
        parent: v_near,
        connect,
        outcome: out.state,
        skill: spec.id.clone(),
        target: *q_target,
        seed,
        sim_steps: out.steps as u64,
    }))
}

/// Extends the tree in place; returns the id of the new skill node.
pub fn extend(
    tree: &mut PlanTree,
    skill: &str,
    v_near: usize,
    q_target: &Pose,
    connectors: &Connectors,
    domain: &Domain,
    params: &PlannerParams,
    ext_seed: u64,
) -> Result<Option<usize>> {
    let k = domain
        .skill_index(skill)
        .ok_or_else(|| crate::error::config(format!("unknown skill '{skill}'")))?;
    let ext = extend_from(tree, v_near, k, q_target, connectors, domain, params, ext_seed)?;
    Ok(ext.map(|e| commit(tree, e)))
}

fn commit(tree: &mut PlanTree, e: Extension) -> usize {
    let (state, tag, goal) = e.connect;
    let c = tree.add(e.parent, tag, goal, state, 0);
    tree.add(c, PolicyTag::Skill(e.skill), NodeGoal::ObjectPose(e.target), e.outcome, e.seed)
}

fn validate_inputs(s0: &State, q_goal: &Pose, domain: &Domain, connectors: &Connectors, params: &PlannerParams) -> Result<()> {
    params.validate()?;
    if !s0.is_finite() || !q_goal.is_finite() {
        return Err(invalid("start state and goal must be finite"));
    }
    if domain.region_of(q_goal).is_none() {
        return Err(invalid("goal pose lies outside every region"));
    }
    if let Connectors::Scripted(set) = connectors {
        if !set.covers(domain) {
            return Err(crate::error::config("connector set does not cover every skill"));
        }
    }
    Ok(())
}

fn build_plan(tree: &PlanTree, path: &[usize], s0: &State, q_goal: &Pose, domain: &Domain, params: &PlannerParams, connectors: &Connectors) -> Result<SkillPlan> {
    let mut steps = Vec::with_capacity(path.len().saturating_sub(1));
    for &id in &path[1..] {
        let n = &tree.nodes[id];
        let step = match (&n.policy_tag, &n.goal) {
            (PolicyTag::None, NodeGoal::RobotConfig(q)) => PlanStep::Teleport { q_r: *q },
            (PolicyTag::Connector(_), NodeGoal::RobotConfig(q)) => {
                let Connectors::Scripted(set) = connectors else {
                    unreachable!("connector node without scripted connectors");
                };
                let skill = match &tree.nodes[tree.children_on_path(path, id)].policy_tag {
                    PolicyTag::Skill(s) => s.clone(),
                    _ => unreachable!("connecting node must precede a skill node"),
                };
                PlanStep::Connector {
                    params: set.get(&skill)?.clone(),
                    q_r: *q,
                }
            }
            (PolicyTag::Skill(s), NodeGoal::ObjectPose(p)) => PlanStep::Skill {
                id: s.clone(),
                target: *p,
                seed: n.seed,
            },
            _ => unreachable!("node tag and goal disagree"),
        };
        steps.push(step);
    }
    Ok(SkillPlan {
        plan_id: String::new(),
        domain: domain.name.clone(),
        seed: params.seed,
        params: params.clone(),
        initial_state: s0.clone(),
        goal_pose: *q_goal,
        steps,
    })
}

impl PlanTree {
    fn children_on_path(&self, path: &[usize], id: usize) -> usize {
        let i = path.iter().position(|&p| p == id).expect("id on path");
        path[i + 1]
    }
}

struct Search<'a> {
    domain: &'a Domain,
    connectors: &'a Connectors,
    params: &'a PlannerParams,
    s0: &'a State,
    q_goal: &'a Pose,
    tree: PlanTree,
    cands: Vec<Candidate>,
    sim_steps: u64,
}

impl<'a> Search<'a> {
    fn new(s0: &'a State, q_goal: &'a Pose, domain: &'a Domain, connectors: &'a Connectors, params: &'a PlannerParams) -> Self {
        let tree = PlanTree::new(s0.clone());
        let cands = candidates(domain, &tree);
        Self {
            domain,
            connectors,
            params,
            s0,
            q_goal,
            tree,
            cands,
            sim_steps: 0,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (usize, Pose, u64) {
        let (k, target) = unif_sample_skill_and_subgoal(self.domain, self.q_goal, self.params.p_g, rng);
        (k, target, rng.random::<u64>())
    }

    fn commit(&mut self, e: Extension) -> usize {
        self.sim_steps += e.sim_steps;
        let id = commit(&mut self.tree, e);
        self.cands.push(Candidate::new(self.domain, &self.tree.nodes[id]));
        id
    }

    fn finish(self, goal_node: Option<usize>, iterations: usize) -> Result<SearchResult> {
        let (plan, path) = match goal_node {
            Some(g) => {
                let path = retrace(&self.tree, g);
                let plan = build_plan(&self.tree, &path, self.s0, self.q_goal, self.domain, self.params, self.connectors)?;
                (Some(plan), Some(path))
            }
            None => (None, None),
        };
        Ok(SearchResult {
            plan,
            path,
            iterations,
            tree: self.tree,
            sim_steps: self.sim_steps,
        })
    }
}

/// Sequential Skill-RRT.
pub fn skill_rrt(
    s0: &State,
    q_goal: &Pose,
    domain: &Domain,
    connectors: &Connectors,
    params: &PlannerParams,
) -> Result<SearchResult> {
    validate_inputs(s0, q_goal, domain, connectors, params)?;
    let mut search = Search::new(s0, q_goal, domain, connectors, params);
    if near_enough(s0, q_goal, params) {
        return search.finish(Some(0), 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for it in 1..=params.n_max {
        let (k, target, ext_seed) = search.draw(&mut rng);
        let Some(v_near) = nearest(&search.cands, &search.tree, domain, k, &target, params.alpha) else {
            continue;
        };
        if let Some(e) = extend_from(&search.tree, v_near, k, &target, connectors, domain, params, ext_seed)? {
            let id = search.commit(e);
            if near_enough(&search.tree.nodes[id].state, q_goal, params) {
                return search.finish(Some(id), it);
            }
        }
    }
    let n = params.n_max;
    search.finish(None, n)
}

/// Skill-RRT drawing `params.batch_size` samples per iteration.
///
/// Nearest-node queries see the tree as it was at the start of the
/// iteration; successful extensions are committed in sample order.
pub fn skill_rrt_batch(
    s0: &State,
    q_goal: &Pose,
    domain: &Domain,
    connectors: &Connectors,
    params: &PlannerParams,
) -> Result<SearchResult> {
    validate_inputs(s0, q_goal, domain, connectors, params)?;
    let mut search = Search::new(s0, q_goal, domain, connectors, params);
    if near_enough(s0, q_goal, params) {
        return search.finish(Some(0), 0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    for it in 1..=params.n_max {
        let samples: Vec<(usize, Pose, u64)> = (0..params.batch_size).map(|_| search.draw(&mut rng)).collect();
        let (tree, cands) = (&search.tree, &search.cands);
        let exts = samples
            .par_iter()
            .map(|(k, target, ext_seed)| {
                match nearest(cands, tree, domain, *k, target, params.alpha) {
                    Some(v) => extend_from(tree, v, *k, target, connectors, domain, params, *ext_seed),
                    None => Ok(None),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut hit = None;
        for e in exts.into_iter().flatten() {
            let id = search.commit(e);
            if hit.is_none() && near_enough(&search.tree.nodes[id].state, q_goal, params) {
                hit = Some(id);
            }
        }
        if hit.is_some() {
            return search.finish(hit, it);
        }
    }
    let n = params.n_max;
    search.finish(None, n)
}

/// Runs the sequential planner or the batched one depending on `batch_size`.
pub fn plan(
    s0: &State,
    q_goal: &Pose,
    domain: &Domain,
    connectors: &Connectors,
    params: &PlannerParams,
) -> Result<SearchResult> {
    if params.batch_size > 1 {
        skill_rrt_batch(s0, q_goal, domain, connectors, params)
    } else {
        skill_rrt(s0, q_goal, domain, connectors, params)
    }
}

/// Executes a plan's steps from its initial state.
///
/// `seed_for(step_index, recorded_seed)` picks the rng seed of each skill
/// simulation; passing the recorded seed back reproduces the planning run.
pub fn execute_plan<F>(
    domain: &Domain,
    plan: &SkillPlan,
    noise: Option<&crate::filtering::NoiseConfig>,
    mut seed_for: F,
    mut on_step: impl FnMut(usize, &State),
) -> Result<State>
where
    F: FnMut(usize, u64) -> u64,
{
    let mut state = plan.initial_state.clone();
    for (i, step) in plan.steps.iter().enumerate() {
        on_step(i, &state);
        state = match step {
            PlanStep::Teleport { q_r } => {
                if !domain.kinematics.within_limits(q_r) {
                    return Err(invalid("teleport target violates joint limits"));
                }
                let mut s = state;
                s.set_q_r(*q_r);
                s
            }
            PlanStep::Connector { params, q_r } => {
                let inv = Invocation::Connector { params, goal: *q_r };
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                simulate(domain, &state, &inv, noise, &mut rng)?.state
            }
            PlanStep::Skill { id, target, seed } => {
                let inv = Invocation::Skill { skill: id, target: *target };
                let mut rng = ChaCha8Rng::seed_from_u64(seed_for(i, *seed));
                simulate(domain, &state, &inv, noise, &mut rng)?.state
            }
        };
    }
    Ok(state)
}

/// Replays a plan exactly as it was simulated during planning.
pub fn replay_noiseless(domain: &Domain, plan: &SkillPlan) -> Result<State> {
    execute_plan(domain, plan, None, |_, s| s, |_, _| {})
}
