//! Scenario files: JSON documents describing one game and one task.

use std::path::Path;

use macgame_core::hybrid_game::{dbm_to_mw, HybridScenario};
use macgame_core::{LogBase, SingleReceiverScenario, UtilityFamily, UtilitySpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    SingleReceiver,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Analyze,
    Simulate,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBaseName {
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "e")]
    E,
}

impl LogBaseName {
    pub fn base(self) -> LogBase {
        match self {
            LogBaseName::Two => LogBase::Base2,
            LogBaseName::E => LogBase::Natural,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "2" => Some(LogBaseName::Two),
            "e" => Some(LogBaseName::E),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBaseName::Two => "2",
            LogBaseName::E => "e",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    #[serde(default)]
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    #[default]
    Identity,
    Log1p,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleReceiverBlock {
    pub power: Vec<f64>,
    pub gain: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dbm: Option<f64>,
}

/// `power` and `gain` are `N` rows of `J` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridBlock {
    pub power: Vec<Vec<f64>>,
    pub gain: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeBlock {
    /// Weights of the normalized equilibrium, one per user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cop_starts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nash_grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    Bnn,
    Replicator,
    Smith,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: ProtocolName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPopulation {
    Uniform,
    /// Point mass on the grid node nearest to this rate.
    DiracAt(f64),
    Mass(Vec<f64>),
}

/// Published values a hybrid run is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValues {
    /// 1-based index of the user whose mix is compared.
    pub user: usize,
    pub mix: Vec<f64>,
    pub alpha: Vec<f64>,
    #[serde(default = "default_mix_band")]
    pub mix_band: f64,
    #[serde(default = "default_alpha_band")]
    pub alpha_rel_band: f64,
}

fn default_mix_band() -> f64 {
    0.05
}

fn default_alpha_band() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_every: Option<usize>,
    // single receiver
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialPopulation>,
    // hybrid
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceValues>,
    /// Tolerance of the terminal rest-point and Nash checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceAtom {
    pub profile: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Single receiver: rate profile checked for Nash and strong equilibrium.
    /// Hybrid: the rates `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<Vec<DeviceAtom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simplex_resolution: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: Kind,
    pub task: Task,
    #[serde(default)]
    pub log_base: LogBaseName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub utility: UtilityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_receiver: Option<SingleReceiverBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

fn noise_value(noise: Option<f64>, noise_dbm: Option<f64>, block: &str) -> Result<f64, CliError> {
    match (noise, noise_dbm) {
        (Some(n), None) => Ok(n),
        (None, Some(d)) => Ok(dbm_to_mw(d)),
        (Some(_), Some(_)) => Err(schema(format!("{block}: give either `noise` or `noise_dbm`, not both"))),
        (None, None) => Err(schema(format!("{block}: missing `noise` or `noise_dbm`"))),
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let sf: ScenarioFile = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        sf.validate()?;
        Ok(sf)
    }

    /// Pretty JSON of the parsed structure; parsing it again gives the same value.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn n_users(&self) -> usize {
        match self.kind {
            Kind::SingleReceiver => self.single_receiver.as_ref().map_or(0, |b| b.power.len()),
            Kind::Hybrid => self.hybrid.as_ref().map_or(0, |b| b.power.len()),
        }
    }

    pub fn utility_spec(&self) -> Result<UtilitySpec, CliError> {
        let u = &self.utility;
        let family = match (u.family, u.gamma) {
            (FamilyName::Identity, None) => UtilityFamily::Identity,
            (FamilyName::Log1p, None) => UtilityFamily::Log1p,
            (FamilyName::Power, Some(g)) => UtilityFamily::Power(g),
            (FamilyName::Power, None) => return Err(schema("utility: `power` needs `gamma`")),
            (_, Some(_)) => return Err(schema("utility: `gamma` only applies to `power`")),
        };
        let spec = match family {
            UtilityFamily::Power(g) => UtilitySpec::power(g).map_err(|e| schema(format!("utility: {e}")))?,
            f => UtilitySpec::new(f),
        };
        match &u.scale {
            Some(w) => spec.with_scale(w.clone()).map_err(|e| schema(format!("utility: {e}"))),
            None => Ok(spec),
        }
    }

    pub fn single_scenario(&self) -> Result<SingleReceiverScenario, CliError> {
        let b = self.single_receiver.as_ref().ok_or_else(|| schema("missing `single_receiver` block"))?;
        let noise = noise_value(b.noise, b.noise_dbm, "single_receiver")?;
        SingleReceiverScenario::new(b.power.clone(), b.gain.clone(), noise, self.log_base.base())
            .map_err(|e| schema(format!("single_receiver: {e}")))
    }

    pub fn hybrid_scenario(&self) -> Result<HybridScenario, CliError> {
        let b = self.hybrid.as_ref().ok_or_else(|| schema("missing `hybrid` block"))?;
        let n = b.power.len();
        let j = b.power.first().map_or(0, Vec::len);
        if b.gain.len() != n {
            return Err(schema(format!("hybrid: `gain` has {} rows, `power` has {n}", b.gain.len())));
        }
        for (name, m) in [("power", &b.power), ("gain", &b.gain)] {
            if let Some(k) = m.iter().position(|r| r.len() != j) {
                return Err(schema(format!("hybrid: `{name}` row {k} has {} entries, expected {j}", m[k].len())));
            }
        }
        let noise = noise_value(b.noise, b.noise_dbm, "hybrid")?;
        HybridScenario::new(
            n,
            j,
            b.power.concat(),
            b.gain.concat(),
            noise,
            self.log_base.base(),
            self.utility_spec()?,
        )
        .map_err(|e| schema(format!("hybrid: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(schema(format!("tol must be positive, got {}", self.tol)));
        }
        self.utility_spec()?;
        match self.kind {
            Kind::SingleReceiver => {
                if self.hybrid.is_some() {
                    return Err(schema("`hybrid` block given for a single_receiver scenario"));
                }
                self.single_scenario()?;
                self.utility_spec()?.validate(self.n_users()).map_err(|e| schema(format!("utility: {e}")))?;
            }
            Kind::Hybrid => {
                if self.single_receiver.is_some() {
                    return Err(schema("`single_receiver` block given for a hybrid scenario"));
                }
                self.hybrid_scenario()?;
            }
        }
        let (task_block, others) = match self.task {
            Task::Analyze => ("analyze", [self.simulate.is_some(), self.verify.is_some()]),
            Task::Simulate => ("simulate", [self.analyze.is_some(), self.verify.is_some()]),
            Task::Verify => ("verify", [self.analyze.is_some(), self.simulate.is_some()]),
        };
        if others.iter().any(|&b| b) {
            return Err(schema(format!("only the `{task_block}` task block may be given for task {task_block}")));
        }
        if let Some(sim) = &self.simulate {
            self.validate_simulate(sim)?;
        } else if self.task == Task::Simulate && self.kind == Kind::Hybrid {
            return Err(schema("hybrid simulate needs a `simulate` block with `initial_alpha`"));
        }
        match &self.verify {
            Some(v) => self.validate_verify(v)?,
            None if self.task == Task::Verify => return Err(schema("task verify needs a `verify` block")),
            None => {}
        }
        if let Some(a) = &self.analyze {
            if let Some(tau) = &a.tau {
                if self.kind == Kind::Hybrid {
                    return Err(schema("analyze.tau applies to single_receiver scenarios"));
                }
                if tau.len() != self.n_users() {
                    return Err(schema(format!("analyze.tau has {} entries, expected {}", tau.len(), self.n_users())));
                }
            }
        }
        Ok(())
    }

    fn validate_simulate(&self, sim: &SimulateBlock) -> Result<(), CliError> {
        let single_only = sim.protocol.is_some() || sim.grid_points.is_some() || sim.initial.is_some();
        let hybrid_only = sim.theta.is_some()
            || sim.mu_bar.is_some()
            || sim.initial_mix.is_some()
            || sim.initial_alpha.is_some()
            || sim.reference.is_some()
            || sim.rest_tol.is_some();
        match self.kind {
            Kind::SingleReceiver if hybrid_only => {
                return Err(schema("simulate: theta, mu_bar, initial_mix, initial_alpha, reference and rest_tol are hybrid fields"))
            }
            Kind::Hybrid if single_only => {
                return Err(schema("simulate: protocol, grid_points and initial are single_receiver fields"))
            }
            _ => {}
        }
        for (name, v) in [("dt", sim.dt), ("t_end", sim.t_end), ("mu_bar", sim.mu_bar), ("rest_tol", sim.rest_tol)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(schema(format!("simulate.{name} must be positive, got {x}")));
                }
            }
        }
        if sim.sample_every == Some(0) {
            return Err(schema("simulate.sample_every must be at least 1"));
        }
        if self.kind == Kind::Hybrid {
            let n = self.n_users();
            let j = self.hybrid.as_ref().map_or(0, |b| b.power[0].len());
            if let Some(m) = &sim.initial_mix {
                if m.len() != n || m.iter().any(|r| r.len() != j) {
                    return Err(schema(format!("simulate.initial_mix must be {n} rows of {j}")));
                }
            }
            match &sim.initial_alpha {
                Some(a) if a.len() != n => {
                    return Err(schema(format!("simulate.initial_alpha has {} entries, expected {n}", a.len())));
                }
                Some(_) => {}
                None => return Err(schema("simulate.initial_alpha is required for hybrid scenarios")),
            }
            if let Some(r) = &sim.reference {
                if r.user == 0 || r.user > n || r.mix.len() != j || r.alpha.len() != n {
                    return Err(schema("simulate.reference: user out of range or wrong lengths"));
                }
            }
        }
        Ok(())
    }

    fn validate_verify(&self, v: &VerifyBlock) -> Result<(), CliError> {
        let n = self.n_users();
        if let Some(p) = &v.profile {
            if p.len() != n {
                return Err(schema(format!("verify.profile has {} entries, expected {n}", p.len())));
            }
        }
        match self.kind {
            Kind::SingleReceiver => {
                if v.mix.is_some() || v.simplex_resolution.is_some() {
                    return Err(schema("verify.mix and verify.simplex_resolution are hybrid fields"));
                }
                if let Some(atoms) = &v.device {
                    if let Some(k) = atoms.iter().position(|a| a.profile.len() != n) {
                        return Err(schema(format!("verify.device[{k}].profile must have {n} entries")));
                    }
                }
                if v.profile.is_none() && v.device.is_none() {
                    return Err(schema("verify needs `profile` or `device`"));
                }
            }
            Kind::Hybrid => {
                if v.device.is_some() || v.deviation_points.is_some() {
                    return Err(schema("verify.device applies to single_receiver scenarios"));
                }
                if v.profile.is_none() || v.mix.is_none() {
                    return Err(schema("hybrid verify needs `profile` (rates) and `mix`"));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ScenarioFile::from_json(&text).map_err(|e| match e {
        CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}
