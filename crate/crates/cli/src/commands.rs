//! The five subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use skillrrt::connector::{mine_connector_problems, ConnectorProblem, ConnectorSet};
use skillrrt::domain::{generate_problems, Problem};
use skillrrt::filtering::{export_dataset, filter_plans, replay_plan, DatasetRecord, ReplayReport};
use skillrrt::planner::{self, flat_baseline, skill_rrt, skill_rrt_batch, Connectors, PlannerParams, SkillPlan};
use skillrrt::seed::derive_seed;

use crate::config::{ConnectorMode, Loaded};
use crate::error::CliError;
use crate::output::{create_dir, read_json, write_csv, write_json, write_jsonl, Meta, Stamped};

const PLAN_STREAM: u64 = 0x504c_414e;
const FILTER_STREAM: u64 = 0x4649_4c54;

#[derive(Serialize, Deserialize)]
pub struct PlanFile {
    pub meta: Meta,
    pub plan: SkillPlan,
}

#[derive(Serialize, Deserialize)]
pub struct ReportFile {
    pub meta: Meta,
    pub report: ReplayReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KeptPlan {
    pub plan_id: String,
    pub file: PathBuf,
    pub success_rate: f64,
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub meta: Meta,
    pub m: f64,
    pub replays: usize,
    pub evaluated: usize,
    pub kept: Vec<KeptPlan>,
}

#[derive(Serialize, Deserialize)]
pub struct MineSummary {
    pub meta: Meta,
    pub problems: usize,
    pub solved: usize,
    pub triplets: usize,
}

fn plan_id(domain: &str, i: usize) -> String {
    format!("{domain}-{i:04}")
}

fn problem_params(l: &Loaded, i: usize) -> PlannerParams {
    PlannerParams {
        seed: derive_seed(l.config.seed, &[PLAN_STREAM, i as u64]),
        ..l.config.planner.clone()
    }
}

fn problems(l: &Loaded) -> Result<Vec<Problem>, CliError> {
    Ok(generate_problems(&l.domain, l.config.problems, l.problem_seed())?)
}

/// Removes `*.json` files left in `dir` by an earlier run.
fn clear_json(dir: &Path) -> Result<(), CliError> {
    for path in json_files(dir)? {
        fs::remove_file(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Serialize)]
struct PlanRow {
    problem: usize,
    plan_id: String,
    solved: bool,
    iterations: usize,
    tree_size: usize,
    steps: usize,
    skill_steps: usize,
    sim_steps: u64,
    seed: u64,
    config_hash: String,
    version: String,
    wall_ms: f64,
}

pub fn plan(l: &Loaded) -> Result<(), CliError> {
    let meta = Meta::new("plan", l.config.seed, &l.hash);
    let probs = problems(l)?;
    let connectors = match l.config.connectors {
        ConnectorMode::Scripted => Connectors::Scripted(ConnectorSet::for_domain(&l.domain)),
        ConnectorMode::Lazy => Connectors::Lazy,
    };
    let dir = l.plans_dir();
    create_dir(&l.config.out)?;
    create_dir(&dir)?;
    clear_json(&dir)?;
    let mut rows = Vec::with_capacity(probs.len());
    for (i, pr) in probs.iter().enumerate() {
        let params = problem_params(l, i);
        let t = Instant::now();
        let r = planner::plan(&pr.initial, &pr.goal, &l.domain, &connectors, &params)?;
        let wall_ms = ms(t);
        let id = plan_id(&l.domain.name, i);
        let (steps, skill_steps) = r.plan.as_ref().map_or((0, 0), |p| (p.steps.len(), p.skill_steps()));
        let solved = r.plan.is_some();
        if let Some(mut p) = r.plan {
            p.plan_id = id.clone();
            write_json(&dir.join(format!("{id}.json")), &PlanFile { meta: meta.clone(), plan: p })?;
        }
        log::info!("problem {i}: solved={solved} iterations={}", r.iterations);
        rows.push(PlanRow {
            problem: i,
            plan_id: if solved { id } else { String::new() },
            solved,
            iterations: r.iterations,
            tree_size: r.tree.len(),
            steps,
            skill_steps,
            sim_steps: r.sim_steps,
            seed: meta.seed,
            config_hash: meta.config_hash.clone(),
            version: meta.version.clone(),
            wall_ms,
        });
    }
    write_csv(&l.config.out.join("plan_summary.csv"), &rows)?;
    let solved = rows.iter().filter(|r| r.solved).count();
    println!("plan: solved {solved}/{} problems", rows.len());
    Ok(())
}

#[derive(Serialize)]
struct MineRow {
    problem: usize,
    solved: bool,
    iterations: usize,
    triplets: usize,
    seed: u64,
    config_hash: String,
    version: String,
}

pub fn mine(l: &Loaded) -> Result<(), CliError> {
    let meta = Meta::new("mine", l.config.seed, &l.hash);
    let pairs: Vec<_> = problems(l)?.into_iter().map(|p| (p.initial, p.goal)).collect();
    let params = PlannerParams {
        seed: l.config.seed,
        ..l.config.planner.clone()
    };
    let res = mine_connector_problems(&pairs, &l.domain, &params)?;
    let out = &l.config.out;
    create_dir(out)?;
    let stamp = |body: ConnectorProblem| Stamped { meta: meta.clone(), body };
    write_jsonl(&out.join("triplets.jsonl"), res.problems.iter().cloned().map(stamp))?;
    let lazy: Vec<SkillPlan> = res
        .outcomes
        .iter()
        .filter_map(|o| {
            let mut p = o.plan.clone()?;
            p.plan_id = plan_id(&l.domain.name, o.problem_index);
            Some(p)
        })
        .collect();
    write_jsonl(
        &out.join("lazy_plans.jsonl"),
        lazy.into_iter().map(|plan| PlanFile { meta: meta.clone(), plan }),
    )?;
    let rows: Vec<MineRow> = res
        .outcomes
        .iter()
        .map(|o| MineRow {
            problem: o.problem_index,
            solved: o.solved,
            iterations: o.iterations,
            triplets: o.triplets,
            seed: meta.seed,
            config_hash: meta.config_hash.clone(),
            version: meta.version.clone(),
        })
        .collect();
    write_csv(&out.join("mine_summary.csv"), &rows)?;
    let summary = MineSummary {
        meta,
        problems: rows.len(),
        solved: rows.iter().filter(|r| r.solved).count(),
        triplets: res.problems.len(),
    };
    write_json(&out.join("mine_summary.json"), &summary)?;
    println!(
        "mine: {} triplets from {}/{} solved problems",
        summary.triplets, summary.solved, summary.problems
    );
    Ok(())
}

/// Loads every plan file in `dir`, sorted by file name.
pub fn load_plans(dir: &Path, domain: &str) -> Result<Vec<(PathBuf, SkillPlan)>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("plan directory {} not found", dir.display())));
    }
    let mut out = Vec::new();
    for path in json_files(dir)? {
        let f: PlanFile = read_json(&path)?;
        check_domain(&path, &f.plan, domain)?;
        out.push((path, f.plan));
    }
    Ok(out)
}

fn check_domain(path: &Path, plan: &SkillPlan, domain: &str) -> Result<(), CliError> {
    if plan.domain != domain {
        return Err(CliError::Config(format!(
            "{}: plan is for domain '{}', config loads '{domain}'",
            path.display(),
            plan.domain
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct FilterRow {
    plan_id: String,
    success_rate: f64,
    steps: usize,
    skill_steps: usize,
    n_replays: usize,
    n_success: usize,
    kept: bool,
    seed: u64,
    config_hash: String,
    version: String,
}

pub fn filter(l: &Loaded) -> Result<(), CliError> {
    let meta = Meta::new("filter", l.config.seed, &l.hash);
    let plans = load_plans(&l.plans_dir(), &l.domain.name)?;
    let n = l.config.filter.replays;
    let reports = plans
        .iter()
        .enumerate()
        .map(|(i, (_, p))| {
            let seed = derive_seed(l.config.seed, &[FILTER_STREAM, i as u64]);
            replay_plan(p, &l.domain, &l.config.noise, n, seed)
        })
        .collect::<skillrrt::Result<Vec<_>>>()?;
    let kept_ids = filter_plans(&reports, l.config.filter.m)?;

    let out = &l.config.out;
    let rdir = out.join("replays");
    create_dir(&rdir)?;
    clear_json(&rdir)?;
    let mut rows = Vec::with_capacity(plans.len());
    let mut kept = Vec::new();
    for ((path, plan), report) in plans.iter().zip(&reports) {
        let is_kept = kept_ids.contains(&report.plan_id);
        rows.push(FilterRow {
            plan_id: report.plan_id.clone(),
            success_rate: report.success_rate,
            steps: plan.steps.len(),
            skill_steps: plan.skill_steps(),
            n_replays: report.n_replays,
            n_success: report.n_success,
            kept: is_kept,
            seed: meta.seed,
            config_hash: meta.config_hash.clone(),
            version: meta.version.clone(),
        });
        if is_kept {
            let file = path.canonicalize().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            kept.push(KeptPlan {
                plan_id: report.plan_id.clone(),
                file,
                success_rate: report.success_rate,
            });
        }
        write_json(
            &rdir.join(format!("{}.json", report.plan_id)),
            &ReportFile { meta: meta.clone(), report: report.clone() },
        )?;
    }
    write_csv(&out.join("filter_summary.csv"), &rows)?;
    let manifest = Manifest {
        meta,
        m: l.config.filter.m,
        replays: n,
        evaluated: plans.len(),
        kept,
    };
    let mpath = l.manifest_path();
    if let Some(parent) = mpath.parent() {
        create_dir(parent)?;
    }
    write_json(&mpath, &manifest)?;
    println!(
        "filter: kept {}/{} plans (m = {}, {} replays)",
        manifest.kept.len(),
        manifest.evaluated,
        manifest.m,
        n
    );
    Ok(())
}

#[derive(Serialize)]
struct ExportRow {
    plan_id: String,
    success_rate: f64,
    steps: usize,
    requested: usize,
    recorded: usize,
    attempts: usize,
    shortfall: usize,
    seed: u64,
    config_hash: String,
    version: String,
}

pub fn export(l: &Loaded) -> Result<(), CliError> {
    let meta = Meta::new("export", l.config.seed, &l.hash);
    let manifest: Manifest = read_json(&l.manifest_path())?;
    let mut plans = Vec::with_capacity(manifest.kept.len());
    for k in &manifest.kept {
        let f: PlanFile = read_json(&k.file)?;
        check_domain(&k.file, &f.plan, &l.domain.name)?;
        plans.push(f.plan);
    }
    let res = export_dataset(&plans, &l.domain, &l.config.noise, l.config.export.trajectories, l.config.seed)?;
    let out = &l.config.out;
    create_dir(out)?;
    let rows = res.records.iter().map(|body: &DatasetRecord| Stamped { meta: meta.clone(), body });
    write_jsonl(&out.join("dataset.jsonl"), rows)?;
    let rows: Vec<ExportRow> = res
        .summaries
        .iter()
        .map(|s| ExportRow {
            plan_id: s.plan_id.clone(),
            success_rate: if s.attempts == 0 { 0.0 } else { s.recorded as f64 / s.attempts as f64 },
            steps: s.steps,
            requested: s.requested,
            recorded: s.recorded,
            attempts: s.attempts,
            shortfall: s.shortfall,
            seed: meta.seed,
            config_hash: meta.config_hash.clone(),
            version: meta.version.clone(),
        })
        .collect();
    write_csv(&out.join("export_summary.csv"), &rows)?;
    let shortfall: usize = rows.iter().map(|r| r.shortfall).sum();
    println!(
        "export: {} records from {} plans (shortfall {shortfall})",
        res.records.len(),
        rows.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchProblemRow {
    method: &'static str,
    problem: usize,
    solved: bool,
    iterations: usize,
    sim_steps: u64,
    seed: u64,
    config_hash: String,
    version: String,
    wall_ms: f64,
}

#[derive(Serialize)]
struct BenchRow {
    method: &'static str,
    problems: usize,
    solved: usize,
    success_rate: f64,
    mean_iterations: f64,
    seed: u64,
    config_hash: String,
    version: String,
    mean_wall_ms: f64,
}

pub const BENCH_METHODS: [&str; 4] = ["skill_rrt", "skill_rrt_batch", "no_connector", "flat"];

pub fn bench(l: &Loaded) -> Result<(), CliError> {
    let meta = Meta::new("bench", l.config.seed, &l.hash);
    let probs = problems(l)?;
    let scripted = Connectors::Scripted(ConnectorSet::for_domain(&l.domain));
    let forbidden = Connectors::Forbidden {
        tol: l.config.bench.forbidden_tol,
    };
    let d = &l.domain;
    let mut per = Vec::new();
    for method in BENCH_METHODS {
        for (i, pr) in probs.iter().enumerate() {
            let mut params = problem_params(l, i);
            params.batch_size = 1;
            let t = Instant::now();
            let (solved, iterations, sim_steps) = match method {
                "skill_rrt" => summarize(skill_rrt(&pr.initial, &pr.goal, d, &scripted, &params)?),
                "skill_rrt_batch" => {
                    params.batch_size = l.config.bench.batch_size;
                    summarize(skill_rrt_batch(&pr.initial, &pr.goal, d, &scripted, &params)?)
                }
                "no_connector" => summarize(skill_rrt(&pr.initial, &pr.goal, d, &forbidden, &params)?),
                _ => {
                    let f = flat_baseline(&pr.initial, &pr.goal, d, &scripted, &params)?;
                    (f.solved, f.iterations, f.sim_steps)
                }
            };
            per.push(BenchProblemRow {
                method,
                problem: i,
                solved,
                iterations,
                sim_steps,
                seed: meta.seed,
                config_hash: meta.config_hash.clone(),
                version: meta.version.clone(),
                wall_ms: ms(t),
            });
        }
    }
    let rows: Vec<BenchRow> = BENCH_METHODS
        .iter()
        .map(|&method| {
            let rs: Vec<_> = per.iter().filter(|r| r.method == method).collect();
            let n = rs.len().max(1) as f64;
            let solved = rs.iter().filter(|r| r.solved).count();
            BenchRow {
                method,
                problems: rs.len(),
                solved,
                success_rate: solved as f64 / n,
                mean_iterations: rs.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
                seed: meta.seed,
                config_hash: meta.config_hash.clone(),
                version: meta.version.clone(),
                mean_wall_ms: rs.iter().map(|r| r.wall_ms).sum::<f64>() / n,
            }
        })
        .collect();
    let out = &l.config.out;
    create_dir(out)?;
    write_csv(&out.join("bench_problems.csv"), &per)?;
    write_csv(&out.join("bench.csv"), &rows)?;
    for r in &rows {
        println!(
            "bench: {:<16} {}/{} solved, mean {:.1} ms",
            r.method, r.solved, r.problems, r.mean_wall_ms
        );
    }
    Ok(())
}

fn summarize(r: planner::SearchResult) -> (bool, usize, u64) {
    (r.plan.is_some(), r.iterations, r.sim_steps)
}
