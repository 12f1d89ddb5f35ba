//! Dispatch of a parsed scenario to the engine, and the run report.

use std::fs;
use std::path::{Path, PathBuf};

use macgame_core::capacity::{Coalition, RateProfile};
use macgame_core::correlated::{cce_violation, deviation_grid, CorrelatedDevice, DEFAULT_DEVIATION_POINTS};
use macgame_core::hybrid_dynamics::{interior_rest_point_check, simulate_hybrid, HybridDynConfig, HybridState};
use macgame_core::hybrid_game::{
    hybrid_deviation, hybrid_violation, potential_psi, solve_cop, ChannelMix, HybridProfile, HybridScenario,
    DEFAULT_COP_STARTS,
};
use macgame_core::numerics::IntegratorConfig;
use macgame_core::population::{PopulationGame, PopulationState, RevisionProtocol, RunStatus};
use macgame_core::static_game::{oracle, NashViolation};
use macgame_core::StaticGame;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::scenario::{
    parse_scenario, InitialPopulation, Kind, LogBaseName, ProtocolName, ScenarioFile, SimulateBlock, Task,
};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.json";
/// Simplex resolution of the hybrid Nash check.
pub const DEFAULT_SIMPLEX_RESOLUTION: usize = 60;
pub const DEFAULT_REST_TOL: f64 = 1e-3;
/// Grid points per axis of the coalition-deviation oracle.
pub const ORACLE_GRID: usize = 41;

/// Command-line values that replace the scenario file's.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub log_base: Option<LogBaseName>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, sf: &mut ScenarioFile) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            sf.seed = s;
        }
        if let Some(b) = self.log_base {
            sf.log_base = b;
        }
        if let Some(t) = self.tol {
            sf.tol = t;
        }
        sf.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub task: Task,
    pub kind: Kind,
    /// SHA-256 of the canonical scenario after overrides.
    pub input_digest: String,
    pub log_base: LogBaseName,
    pub seed: u64,
    pub tol: f64,
    /// `None` for tasks without a pass/fail outcome.
    pub verdict: Option<bool>,
    pub results: Value,
    /// File names of emitted artifacts, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.verdict == Some(false) {
            1
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs the scenario's task. Artifacts and `report.json` go to `out` when
/// given; `simulate` requires it.
pub fn run(sf: &ScenarioFile, out: Option<&Path>) -> Result<RunReport, CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut artifacts = Vec::new();
    let (verdict, results) = match (sf.kind, sf.task) {
        (Kind::SingleReceiver, Task::Analyze) => (None, analyze_single(sf)?),
        (Kind::Hybrid, Task::Analyze) => (None, analyze_hybrid(sf)?),
        (Kind::SingleReceiver, Task::Verify) => verify_single(sf)?,
        (Kind::Hybrid, Task::Verify) => verify_hybrid(sf)?,
        (kind, Task::Simulate) => {
            let dir = out.ok_or_else(|| CliError::Usage("simulate needs --out <dir>".into()))?;
            let (csv, results) = match kind {
                Kind::SingleReceiver => simulate_single(sf)?,
                Kind::Hybrid => simulate_hybrid_task(sf)?,
            };
            write_file(&dir.join(TRAJECTORY_FILE), &csv)?;
            artifacts.push(TRAJECTORY_FILE.to_string());
            (None, results)
        }
    };
    let report = RunReport {
        task: sf.task,
        kind: sf.kind,
        input_digest: sf.digest(),
        log_base: sf.log_base,
        seed: sf.seed,
        tol: sf.tol,
        verdict,
        results,
        artifacts,
    };
    if let Some(dir) = out {
        write_file(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    }
    Ok(report)
}

/// Result of one file in a batch.
#[derive(Debug)]
pub struct BatchItem {
    pub path: PathBuf,
    pub outcome: Result<RunReport, CliError>,
}

impl BatchItem {
    pub fn exit_code(&self) -> i32 {
        match &self.outcome {
            Ok(r) => r.exit_code(),
            Err(e) => e.exit_code(),
        }
    }
}

/// Runs each file independently, at most `threads` at a time. Outputs of
/// file `x/name.json` go to `out/name/`.
pub fn run_batch(paths: &[PathBuf], out: &Path, overrides: Overrides, threads: usize) -> Result<Vec<BatchItem>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let items = pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let stem = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
                let outcome = parse_scenario(path).and_then(|mut sf| {
                    overrides.apply(&mut sf)?;
                    run(&sf, Some(&out.join(stem)))
                });
                BatchItem { path: path.clone(), outcome }
            })
            .collect()
    });
    Ok(items)
}

fn members(c: Coalition) -> Vec<usize> {
    c.members().map(|i| i + 1).collect()
}

fn capacity_table(region: &macgame_core::CapacityRegion) -> Value {
    region.coalitions().map(|c| json!({ "members": members(c), "capacity": region.bound(c) })).collect()
}

fn nash_violation_json(v: &NashViolation) -> Value {
    match v {
        NashViolation::Infeasible { coalition } => json!({ "reason": "infeasible", "coalition": members(*coalition) }),
        NashViolation::SlackCapacity { gap } => json!({ "reason": "slack_capacity", "gap": gap }),
        NashViolation::BelowFloor { user, rate, floor } => {
            json!({ "reason": "below_floor", "user": user + 1, "rate": rate, "floor": floor })
        }
        NashViolation::ProfitableDeviation { user, rate } => {
            json!({ "reason": "profitable_deviation", "user": user + 1, "rate": rate })
        }
    }
}

fn static_game(sf: &ScenarioFile) -> Result<StaticGame, CliError> {
    Ok(StaticGame::new(sf.single_scenario()?, sf.utility_spec()?)?)
}

fn analyze_single(sf: &ScenarioFile) -> Result<Value, CliError> {
    let game = static_game(sf)?;
    let n = game.n_users();
    let region = game.region();
    let floors: Vec<f64> = (0..n).map(|i| game.floor(i)).collect();
    let mut nash_set = json!({
        "description": "max face: sum of rates equals the full-coalition capacity, each rate at least its floor",
        "sum_capacity": region.sum_bound(),
        "floors": floors,
    });
    if n <= 8 {
        let vertices: Vec<Vec<f64>> = region.face_vertices()?.into_iter().map(RateProfile::into_inner).collect();
        nash_set["vertices"] = json!(vertices);
    }
    let m = game.efficiency_metrics()?;
    let mut results = json!({
        "capacity": capacity_table(region),
        "nash_set": nash_set,
        "efficiency": {
            "spoa": m.spoa,
            "pos": m.pos,
            "optimum": { "profile": m.optimum.profile.rates(), "welfare": m.optimum.value },
            "worst_equilibrium": { "profile": m.worst_equilibrium.profile.rates(), "welfare": m.worst_equilibrium.value },
            "best_equilibrium": { "profile": m.best_equilibrium.profile.rates(), "welfare": m.best_equilibrium.value },
        },
    });
    if game.scenario().is_symmetric(1e-12) {
        results["ess_rate"] = json!(game.symmetric_ess()?);
    }
    if let Some(tau) = sf.analyze.as_ref().and_then(|a| a.tau.as_ref()) {
        let ne = game.normalized_equilibrium(tau)?;
        results["normalized_equilibrium"] = json!({
            "rates": ne.rates.rates(),
            "c": ne.c,
            "multipliers": ne.multipliers,
            "residual": ne.residual,
        });
    }
    Ok(results)
}

fn hybrid_capacity_table(s: &HybridScenario) -> Value {
    (0..s.n_receivers())
        .map(|j| json!({ "receiver": j + 1, "coalitions": capacity_table(s.region(j)) }))
        .collect()
}

fn profile_json(p: &HybridProfile) -> Value {
    json!({ "alpha": p.alpha.rates(), "mix": p.mix.rows() })
}

fn analyze_hybrid(sf: &ScenarioFile) -> Result<Value, CliError> {
    let s = sf.hybrid_scenario()?;
    let block = sf.analyze.clone().unwrap_or_default();
    let starts = block.cop_starts.unwrap_or(DEFAULT_COP_STARTS);
    let m = block.nash_grid.unwrap_or(DEFAULT_SIMPLEX_RESOLUTION);
    let sol = solve_cop(&s, starts, sf.seed)?;
    let dev = hybrid_deviation(&s, &sol.profile, DEFAULT_REST_TOL.max(sf.tol), m)?;
    Ok(json!({
        "capacity": hybrid_capacity_table(&s),
        "cop": {
            "profile": profile_json(&sol.profile),
            "potential": sol.value,
            "best_start": sol.best_start,
            "iterations": sol.history.len(),
        },
        "cop_is_nash": dev.is_none(),
        "cop_deviation": dev.map(|d| json!({ "user": d.user + 1, "alpha": d.alpha, "mix": d.row, "gain": d.gain })),
    }))
}

fn verify_single(sf: &ScenarioFile) -> Result<(Option<bool>, Value), CliError> {
    let game = static_game(sf)?;
    let v = sf.verify.as_ref().ok_or_else(|| CliError::Schema("missing `verify` block".into()))?;
    let mut verdict = true;
    let mut results = json!({});
    if let Some(p) = &v.profile {
        let a = RateProfile::new(p.clone())?;
        let violation = game.nash_violation(&a, sf.tol)?;
        let nash = violation.is_none();
        let strong = game.is_strong_equilibrium(&a, sf.tol);
        let mut entry = json!({
            "profile": p,
            "is_nash": nash,
            "is_strong_equilibrium": strong,
            "nash_violation": violation.as_ref().map(nash_violation_json),
        });
        if game.n_users() <= 3 {
            let cn = game.region().sum_bound();
            let grid: Vec<f64> = (0..ORACLE_GRID).map(|k| cn * k as f64 / (ORACLE_GRID - 1) as f64).collect();
            let dev = oracle::coalition_deviation(&game, &a, &grid, sf.tol)?;
            entry["coalition_oracle_passes"] = json!(dev.is_none());
            entry["coalition_deviation"] =
                json!(dev.map(|d| json!({ "coalition": members(d.coalition), "profile": d.profile.rates() })));
        }
        verdict &= nash && strong;
        results["profile_check"] = entry;
    }
    if let Some(atoms) = &v.device {
        let support = atoms
            .iter()
            .map(|a| Ok((RateProfile::new(a.profile.clone())?, a.weight)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let device = CorrelatedDevice::new(support)?;
        let grid = deviation_grid(&game, v.deviation_points.unwrap_or(DEFAULT_DEVIATION_POINTS))?;
        let w = cce_violation(&device, &game, &grid, sf.tol)?;
        verdict &= w.is_none();
        results["cce_check"] = json!({
            "is_cce": w.is_none(),
            "witness": w.map(|w| json!({
                "user": w.user + 1,
                "signal": w.signal,
                "deviation": w.deviation,
                "obey_payoff": w.obey_payoff,
                "deviate_payoff": w.deviate_payoff,
            })),
        });
    }
    Ok((Some(verdict), results))
}

fn verify_hybrid(sf: &ScenarioFile) -> Result<(Option<bool>, Value), CliError> {
    let s = sf.hybrid_scenario()?;
    let v = sf.verify.as_ref().ok_or_else(|| CliError::Schema("missing `verify` block".into()))?;
    let alpha = v.profile.clone().ok_or_else(|| CliError::Schema("verify.profile missing".into()))?;
    let mix = v.mix.clone().ok_or_else(|| CliError::Schema("verify.mix missing".into()))?;
    let prof = HybridProfile::new(RateProfile::new(alpha)?, ChannelMix::new(mix)?)?;
    let m = v.simplex_resolution.unwrap_or(DEFAULT_SIMPLEX_RESOLUTION);
    let infeasible = hybrid_violation(&s, &prof, sf.tol)?;
    let dev = hybrid_deviation(&s, &prof, sf.tol, m)?;
    let nash = infeasible.is_none() && dev.is_none();
    Ok((
        Some(nash),
        json!({
            "profile": profile_json(&prof),
            "is_hybrid_nash": nash,
            "violated_receiver": infeasible.map(|(j, c)| json!({ "receiver": j + 1, "coalition": members(c) })),
            "deviation": dev.map(|d| json!({ "user": d.user + 1, "alpha": d.alpha, "mix": d.row, "gain": d.gain })),
        }),
    ))
}

fn integrator(sim: &SimulateBlock, dt: f64, t_end: f64) -> Result<IntegratorConfig, CliError> {
    Ok(IntegratorConfig::new(sim.dt.unwrap_or(dt), sim.t_end.unwrap_or(t_end), sim.sample_every.unwrap_or(100))?)
}

fn simulate_single(sf: &ScenarioFile) -> Result<(Vec<u8>, Value), CliError> {
    let game = static_game(sf)?;
    let sim = sf.simulate.clone().unwrap_or_default();
    let pop = PopulationGame::with_ess_grid(game, sim.grid_points.unwrap_or(101))?;
    let protocol = match &sim.protocol {
        None => RevisionProtocol::smith(1.0)?,
        Some(p) => {
            let base = match p.kind {
                ProtocolName::Bnn => RevisionProtocol::bnn(),
                ProtocolName::Replicator => RevisionProtocol::replicator(),
                ProtocolName::Smith => RevisionProtocol::smith(p.theta.unwrap_or(1.0))?,
            };
            if p.theta.is_some() && p.kind != ProtocolName::Smith {
                return Err(CliError::Schema("simulate.protocol.theta applies to smith only".into()));
            }
            match p.growth {
                Some(g) => base.with_growth(g)?,
                None => base,
            }
        }
    };
    let len = pop.grid().len();
    let mu0 = match &sim.initial {
        None | Some(InitialPopulation::Uniform) => PopulationState::uniform(len)?,
        Some(InitialPopulation::DiracAt(r)) => PopulationState::dirac(len, pop.grid().nearest(*r))?,
        Some(InitialPopulation::Mass(m)) => PopulationState::new(m.clone())?,
    };
    let cfg = integrator(&sim, 1e-2, 100.0)?;
    let traj = pop.simulate(&mu0, &protocol, &cfg)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let status = match traj.status {
        RunStatus::Completed => json!({ "state": "completed" }),
        RunStatus::GateHalted { t } => json!({ "state": "gate_halted", "t": t }),
    };
    Ok((
        csv,
        json!({
            "grid": { "points": len, "hi": pop.grid().hi(), "step": pop.grid().step() },
            "status": status,
            "final_time": traj.final_time(),
            "final_mean_rate": traj.final_mean_rate(),
            "ess_rate": pop.ess_rate(),
            "final_residual": traj.residuals.last().copied(),
            "max_mass_drift": traj.max_mass_drift,
            "min_mass_before_clip": traj.min_mass,
            "max_clipped_mass": traj.max_clipped,
            "positivity_violations": traj.positivity_violations,
        }),
    ))
}

fn simulate_hybrid_task(sf: &ScenarioFile) -> Result<(Vec<u8>, Value), CliError> {
    let s = sf.hybrid_scenario()?;
    let sim = sf.simulate.clone().unwrap_or_default();
    let mix = match &sim.initial_mix {
        Some(rows) => ChannelMix::new(rows.clone())?,
        None => ChannelMix::uniform(s.n_users(), s.n_receivers())?,
    };
    let alpha = sim.initial_alpha.clone().ok_or_else(|| CliError::Schema("simulate.initial_alpha missing".into()))?;
    let state0 = HybridState::from_rates(mix, &alpha)?;
    let mut cfg = HybridDynConfig::new(sim.theta.unwrap_or(1.0), sim.mu_bar.unwrap_or(0.9), integrator(&sim, 1e-3, 60.0)?)?;
    cfg.feasibility_tol = sf.tol;
    let rest_tol = sim.rest_tol.unwrap_or(DEFAULT_REST_TOL);
    cfg.residual_tol = rest_tol;
    let traj = simulate_hybrid(&s, &state0, &cfg)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;

    let fin = &traj.final_state;
    let rest = interior_rest_point_check(&s, fin, &cfg, rest_tol)?;
    let prof = fin.profile()?;
    let infeasible = hybrid_violation(&s, &prof, sf.tol)?;
    let dev = hybrid_deviation(&s, &prof, rest_tol, DEFAULT_SIMPLEX_RESOLUTION)?;
    let separated = match (traj.chi_settled_at, traj.beta_settled_at) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    let mut results = json!({
        "capacity": hybrid_capacity_table(&s),
        "final_time": fin.t,
        "final_mix": fin.mix.rows(),
        "final_beta": fin.beta,
        "final_alpha": fin.alpha(),
        "final_residual_chi": traj.residual_chi.last().copied(),
        "final_residual_beta": traj.residual_beta.last().copied(),
        "chi_settled_at": traj.chi_settled_at,
        "beta_settled_at": traj.beta_settled_at,
        "timescale_separated": separated,
        "max_row_drift": traj.max_row_drift,
        "rest_point": {
            "tol": rest_tol,
            "defects": rest.defects,
            "smith_residual": rest.smith_residual,
            "interior": rest.interior,
            "passes": rest.passes,
        },
        "terminal_feasible": infeasible.is_none(),
        "violated_receiver": infeasible.map(|(j, c)| json!({ "receiver": j + 1, "coalition": members(c) })),
        "terminal_is_hybrid_nash": infeasible.is_none() && dev.is_none(),
        "terminal_deviation": dev.map(|d| json!({ "user": d.user + 1, "alpha": d.alpha, "mix": d.row, "gain": d.gain })),
        "terminal_potential": potential_psi(&s, &prof)?,
    });
    if let Some(r) = &sim.reference {
        results["reference_comparison"] = reference_comparison(r, &prof);
    }
    Ok((csv, results))
}

fn reference_comparison(r: &crate::scenario::ReferenceValues, prof: &HybridProfile) -> Value {
    let row = prof.mix.row(r.user - 1);
    let mix_err: Vec<f64> = row.iter().zip(&r.mix).map(|(a, b)| (a - b).abs()).collect();
    let alpha_rel: Vec<f64> = prof.alpha.rates().iter().zip(&r.alpha).map(|(a, b)| ((a - b) / b).abs()).collect();
    let mix_ok = mix_err.iter().all(|&e| e <= r.mix_band);
    let alpha_ok = alpha_rel.iter().all(|&e| e <= r.alpha_rel_band);
    let mut out = json!({
        "user": r.user,
        "reference_mix": r.mix,
        "observed_mix": row,
        "mix_abs_error": mix_err,
        "mix_band": r.mix_band,
        "reference_alpha": r.alpha,
        "observed_alpha": prof.alpha.rates(),
        "alpha_rel_error": alpha_rel,
        "alpha_rel_band": r.alpha_rel_band,
        "mix_matches": mix_ok,
        "alpha_matches": alpha_ok,
        "matches": mix_ok && alpha_ok,
    });
    if !(mix_ok && alpha_ok) {
        let mut parts = Vec::new();
        if !mix_ok {
            parts.push(format!(
                "user {} mix {:?} is outside +/-{} of the reference {:?}",
                r.user,
                row,
                r.mix_band,
                r.mix
            ));
        }
        if !alpha_ok {
            parts.push(format!(
                "rates {:?} are outside {}% of the reference {:?}",
                prof.alpha.rates(),
                r.alpha_rel_band * 100.0,
                r.alpha
            ));
        }
        out["discrepancy"] = json!(parts.join("; "));
    }
    out
}
