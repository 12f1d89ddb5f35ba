//! Single-population evolutionary dynamics of the symmetric rate game on a
//! discretized action space `[0, C_1]`.
//!
//! A population state is a probability vector over grid rates. Fitness of a
//! rate `a` against state `mu` is the utility of `a` times the probability
//! that `N - 1` independent draws from `mu` leave the joint profile in the
//! capacity region, gated by the expectation-level (mixed) capacity
//! constraints.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capacity::{Coalition, DEFAULT_TOL};
use crate::error::{invalid, Error, Result};
use crate::numerics::{kahan_sum, rk4_step, IntegratorConfig, KahanSum};
use crate::static_game::StaticGame;

/// Seed for the Monte Carlo fitness estimate used when `N >= 4`.
pub const MC_SEED: u64 = 0xC0FFEE;
pub const MC_DRAWS: usize = 100_000;

/// Increasing rates `0 = a_0 < ... < a_{G-1} = hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    points: Vec<f64>,
}

impl ActionGrid {
    /// `n` equally spaced points on `[0, hi]`.
    pub fn uniform(hi: f64, n: usize) -> Result<Self> {
        if !(hi > 0.0 && hi.is_finite()) {
            return Err(invalid(format!("grid upper end must be positive, got {hi}")));
        }
        if n < 2 {
            return Err(invalid(format!("grid needs at least 2 points, got {n}")));
        }
        let step = hi / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|k| k as f64 * step).collect();
        points[n - 1] = hi;
        Ok(Self { points })
    }

    /// Uniform grid with the node nearest to `anchor` moved onto it, so that
    /// a Dirac state at `anchor` is representable.
    pub fn anchored(hi: f64, n: usize, anchor: f64) -> Result<Self> {
        let mut grid = Self::uniform(hi, n)?;
        if !(0.0..=hi).contains(&anchor) {
            return Err(invalid(format!("anchor {anchor} outside [0, {hi}]")));
        }
        let k = grid.nearest(anchor);
        grid.points[k] = anchor;
        Ok(grid)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Nominal spacing `hi / (G - 1)`.
    pub fn step(&self) -> f64 {
        self.hi() / (self.len() - 1) as f64
    }

    pub fn nearest(&self, x: f64) -> usize {
        let k = self.points.partition_point(|&p| p < x);
        if k == 0 {
            0
        } else if k == self.len() || x - self.points[k - 1] <= self.points[k] - x {
            k - 1
        } else {
            k
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    mass: Vec<f64>,
}

impl PopulationState {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(invalid("population state must be nonempty"));
        }
        if let Some(m) = mass.iter().find(|&&m| !(m >= 0.0 && m.is_finite())) {
            return Err(invalid(format!("masses must be nonnegative, got {m}")));
        }
        let total = kahan_sum(mass.iter().copied());
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("masses must sum to 1, got {total}")));
        }
        Ok(Self { mass })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("population state must be nonempty"));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn dirac(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(invalid(format!("index {k} outside grid of {n} points")));
        }
        let mut mass = vec![0.0; n];
        mass[k] = 1.0;
        Self::new(mass)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.mass
    }
}

/// `E(mu) = sum_k a_k mu(a_k)`.
pub fn mean_rate(mu: &[f64], grid: &ActionGrid) -> f64 {
    kahan_sum(mu.iter().zip(grid.points()).map(|(m, a)| m * a))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Bnn,
    Replicator,
    SmithTheta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevisionProtocol {
    kind: ProtocolKind,
    theta: f64,
    growth: f64,
}

impl RevisionProtocol {
    pub fn bnn() -> Self {
        Self { kind: ProtocolKind::Bnn, theta: 1.0, growth: 1.0 }
    }

    pub fn replicator() -> Self {
        Self { kind: ProtocolKind::Replicator, theta: 1.0, growth: 1.0 }
    }

    pub fn smith(theta: f64) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(invalid(format!("Smith exponent must be >= 1, got {theta}")));
        }
        Ok(Self { kind: ProtocolKind::SmithTheta, theta, growth: 1.0 })
    }

    pub fn with_growth(mut self, growth: f64) -> Result<Self> {
        if !(growth > 0.0 && growth.is_finite()) {
            return Err(invalid(format!("growth rate must be positive, got {growth}")));
        }
        self.growth = growth;
        Ok(self)
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }
}

/// Symmetric static game lifted to a population over an action grid.
#[derive(Debug, Clone)]
pub struct PopulationGame {
    game: StaticGame,
    grid: ActionGrid,
    /// `C_k` for coalitions of size `k = 1..=N` (index `k - 1`).
    caps: Vec<f64>,
    tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A step would have left the mixed capacity region; the state was
    /// placed on the boundary, where the gated dynamics stop.
    GateHalted { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTrajectory {
    pub grid: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub mean_rates: Vec<f64>,
    /// `max_k |dlambda(a_k)/dt|` at each sample.
    pub residuals: Vec<f64>,
    /// Largest `|sum lambda - 1|` seen after a step, before renormalization.
    pub max_mass_drift: f64,
    /// Most negative mass produced by a step before clipping.
    pub min_mass: f64,
    /// Largest total mass removed by clipping in one step.
    pub max_clipped: f64,
    /// Steps that produced a mass below the configured clip floor.
    pub positivity_violations: usize,
    pub status: RunStatus,
}

impl PopulationTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_mean_rate(&self) -> f64 {
        *self.mean_rates.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial state")
    }

    /// CSV with columns `t, lambda_0..lambda_{G-1}, mean_rate, residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| invalid(format!("csv output failed: {e}"));
        let mut header = vec!["t".to_string()];
        header.extend((0..self.grid.len()).map(|k| format!("lambda_{k}")));
        header.push("mean_rate".into());
        header.push("residual".into());
        w.write_record(&header).map_err(io)?;
        for (s, state) in self.states.iter().enumerate() {
            let mut row = vec![self.times[s].to_string()];
            row.extend(state.iter().map(f64::to_string));
            row.push(self.mean_rates[s].to_string());
            row.push(self.residuals[s].to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| invalid(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

impl PopulationGame {
    pub fn new(game: StaticGame, grid: ActionGrid) -> Result<Self> {
        if !game.scenario().is_symmetric(1e-12) {
            return Err(Error::Asymmetric("population dynamics need equal received powers".into()));
        }
        if !game.utility().is_shared() {
            return Err(Error::Asymmetric("population dynamics need a shared utility".into()));
        }
        let n = game.n_users();
        let caps = (1..=n)
            .map(|k| game.region().bound(Coalition::from_members(&(0..k).collect::<Vec<_>>())))
            .collect();
        Ok(Self { game, grid, caps, tol: DEFAULT_TOL })
    }

    /// Grid `[0, C_1]` with a node on `C_N / N`.
    pub fn with_ess_grid(game: StaticGame, n_points: usize) -> Result<Self> {
        let c1 = game.region().bound(Coalition::singleton(0));
        let anchor = game.region().sum_bound() / game.n_users() as f64;
        let grid = ActionGrid::anchored(c1, n_points, anchor)?;
        Self::new(game, grid)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(invalid(format!("tolerance must be nonnegative, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn game(&self) -> &StaticGame {
        &self.game
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    fn n(&self) -> usize {
        self.caps.len()
    }

    /// `C_N / N`, the symmetric equilibrium rate.
    pub fn ess_rate(&self) -> f64 {
        self.caps[self.n() - 1] / self.n() as f64
    }

    fn check_state(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.grid.len() {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: mu.len() });
        }
        Ok(())
    }

    pub fn mean_rate(&self, mu: &[f64]) -> f64 {
        mean_rate(mu, &self.grid)
    }

    /// Every coalition of `k` population members satisfies `k E <= C_k`;
    /// by concavity this reduces to `E <= C_N / N`.
    pub fn in_mixed_region(&self, mu: &[f64]) -> bool {
        let e = self.mean_rate(mu);
        e >= 0.0 && self.caps.iter().enumerate().all(|(k, c)| e <= c / (k + 1) as f64 + self.tol)
    }

    /// `(a, mu)` in the mixed region: `a + (k - 1) E <= C_k` for every
    /// coalition size `k`.
    fn point_admissible(&self, a: f64, e: f64) -> bool {
        self.caps.iter().enumerate().all(|(k, c)| a + k as f64 * e <= c + self.tol)
    }

    /// `nu_{N-1}(D_a)` for every grid point.
    fn completion_probabilities(&self, mu: &[f64]) -> Vec<f64> {
        let pts = self.grid.points();
        let tol = self.tol;
        let caps = &self.caps;
        match self.n() {
            1 => pts.iter().map(|&a| if a <= caps[0] + tol { 1.0 } else { 0.0 }).collect(),
            2 => {
                let cum = prefix(mu);
                pts.iter()
                    .map(|&a| {
                        if a > caps[0] + tol {
                            return 0.0;
                        }
                        mass_le(pts, &cum, caps[0].min(caps[1] - a) + tol)
                    })
                    .collect()
            }
            3 => {
                let cum = prefix(mu);
                pts.iter()
                    .map(|&a| {
                        if a > caps[0] + tol {
                            return 0.0;
                        }
                        let single = caps[0].min(caps[1] - a) + tol;
                        let pair = caps[1].min(caps[2] - a) + tol;
                        let mut acc = KahanSum::new();
                        for (&b, &m) in pts.iter().zip(mu) {
                            if b > single {
                                break;
                            }
                            if m > 0.0 {
                                acc.add(m * mass_le(pts, &cum, single.min(pair - b)));
                            }
                        }
                        acc.value()
                    })
                    .collect()
            }
            _ => self.monte_carlo_completion(mu),
        }
    }

    /// Monte Carlo estimate for `N >= 4` with a fixed seed: each draw of
    /// `N - 1` companions yields the largest rate `a` that completes it.
    fn monte_carlo_completion(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.n();
        let pts = self.grid.points();
        let Ok(dist) = WeightedIndex::new(mu) else {
            return vec![0.0; pts.len()];
        };
        let mut rng = ChaCha8Rng::seed_from_u64(MC_SEED);
        let mut limits = Vec::with_capacity(MC_DRAWS);
        let mut draw = vec![0.0; n - 1];
        for _ in 0..MC_DRAWS {
            for d in draw.iter_mut() {
                *d = pts[dist.sample(&mut rng)];
            }
            draw.sort_by(|x, y| y.total_cmp(x));
            let mut partial = 0.0;
            let mut limit = self.caps[0];
            let mut ok = true;
            for (k, &b) in draw.iter().enumerate() {
                // Companions alone: the k + 1 largest fit in C_{k+1}.
                limit = limit.min(self.caps[k + 1] - partial - b);
                partial += b;
                if partial > self.caps[k] + self.tol {
                    ok = false;
                    break;
                }
            }
            if ok {
                limits.push(limit);
            }
        }
        limits.sort_by(f64::total_cmp);
        let total = MC_DRAWS as f64;
        pts.iter()
            .map(|&a| {
                let below = limits.partition_point(|&l| l + self.tol < a);
                (limits.len() - below) as f64 / total
            })
            .collect()
    }

    /// `F(a_k, mu)` for every grid point.
    pub fn fitness_vector(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.check_state(mu)?;
        let e = self.mean_rate(mu);
        let n = self.n();
        let gate = self.caps[n - 1] - (n - 1) as f64 * e + self.tol;
        let nu = self.completion_probabilities(mu);
        Ok(self
            .grid
            .points()
            .iter()
            .zip(&nu)
            .map(|(&a, &p)| if a <= gate { self.game.g(0, a) * p } else { 0.0 })
            .collect())
    }

    pub fn fitness(&self, k: usize, mu: &[f64]) -> Result<f64> {
        if k >= self.grid.len() {
            return Err(invalid(format!("grid index {k} out of range")));
        }
        Ok(self.fitness_vector(mu)?[k])
    }

    /// Switch rate `beta^x_a(mu)` from grid point `x` to grid point `a`.
    pub fn protocol_rate(&self, p: &RevisionProtocol, x: usize, a: usize, mu: &[f64]) -> Result<f64> {
        if x >= self.grid.len() || a >= self.grid.len() {
            return Err(invalid("grid index out of range"));
        }
        let f = self.fitness_vector(mu)?;
        let e = self.mean_rate(mu);
        let pts = self.grid.points();
        if !self.in_mixed_region(mu) || !self.point_admissible(pts[a], e) || !self.point_admissible(pts[x], e) {
            return Ok(0.0);
        }
        Ok(match p.kind {
            ProtocolKind::Bnn => (f[a] - average(mu, &f)).max(0.0),
            ProtocolKind::Replicator => (f[a] - f[x]).max(0.0),
            ProtocolKind::SmithTheta => (f[a] - f[x]).max(0.0).powf(p.theta),
        })
    }

    /// Mean dynamics `K [sum_x lambda(x) beta^x_a - lambda(a) sum_x beta^a_x]`.
    pub fn mean_dynamics_rhs(&self, mu: &[f64], p: &RevisionProtocol) -> Result<Vec<f64>> {
        self.check_state(mu)?;
        let g = self.grid.len();
        if !self.in_mixed_region(mu) {
            return Ok(vec![0.0; g]);
        }
        let f = self.fitness_vector(mu)?;
        let e = self.mean_rate(mu);
        let adm: Vec<bool> = self.grid.points().iter().map(|&a| self.point_admissible(a, e)).collect();
        let k = p.growth;
        let mut out = vec![0.0; g];

        if p.kind == ProtocolKind::Bnn {
            let avg = average(mu, &f);
            let excess: Vec<f64> =
                (0..g).map(|a| if adm[a] { (f[a] - avg).max(0.0) } else { 0.0 }).collect();
            let adm_mass = kahan_sum((0..g).filter(|&x| adm[x]).map(|x| mu[x]));
            let total_excess = kahan_sum(excess.iter().copied());
            for a in 0..g {
                let outflow = if adm[a] { mu[a] * total_excess } else { 0.0 };
                out[a] = k * (excess[a] * adm_mass - outflow);
            }
            return Ok(out);
        }

        let theta = if p.kind == ProtocolKind::SmithTheta { p.theta } else { 1.0 };
        let rate = |x: usize, a: usize| -> f64 {
            if !(adm[x] && adm[a]) {
                return 0.0;
            }
            let d = f[a] - f[x];
            if d <= 0.0 {
                0.0
            } else if theta == 1.0 {
                d
            } else {
                d.powf(theta)
            }
        };
        for a in 0..g {
            let mut inflow = KahanSum::new();
            let mut outflow = KahanSum::new();
            for x in 0..g {
                if mu[x] > 0.0 {
                    inflow.add(mu[x] * rate(x, a));
                }
                if mu[a] > 0.0 {
                    outflow.add(rate(a, x));
                }
            }
            out[a] = k * (inflow.value() - mu[a] * outflow.value());
        }
        Ok(out)
    }

    /// `max_k |dlambda(a_k)/dt|`.
    pub fn residual(&self, mu: &[f64], p: &RevisionProtocol) -> Result<f64> {
        Ok(self.mean_dynamics_rhs(mu, p)?.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Fixed-step RK4 integration of the mean dynamics.
    ///
    /// After each step negative masses are clipped to zero and the state is
    /// renormalized (when enabled). A step that would leave the mixed
    /// capacity region is shortened by bisection so the state lands on the
    /// boundary, and the run stops there since the gated dynamics vanish
    /// beyond it.
    pub fn simulate(
        &self,
        mu0: &PopulationState,
        p: &RevisionProtocol,
        cfg: &IntegratorConfig,
    ) -> Result<PopulationTrajectory> {
        self.check_state(mu0.mass())?;
        let mut x = mu0.mass().to_vec();
        let mut t = 0.0;
        let mut traj = PopulationTrajectory {
            grid: self.grid.points().to_vec(),
            times: Vec::new(),
            states: Vec::new(),
            mean_rates: Vec::new(),
            residuals: Vec::new(),
            max_mass_drift: 0.0,
            min_mass: 0.0,
            max_clipped: 0.0,
            positivity_violations: 0,
            status: RunStatus::Completed,
        };
        self.record(&mut traj, t, &x, p)?;

        let steps = cfg.n_steps();
        for step in 1..=steps {
            let h = cfg.dt.min(cfg.t_end - t);
            let mut y = self.advance(&x, p, h, t)?;
            let mut halted = false;
            if self.in_mixed_region(&x) && !self.in_mixed_region(&y) {
                let (lo, y_lo) = self.locate_gate(&x, p, h, t)?;
                y = y_lo;
                t += lo;
                halted = true;
            } else {
                t = if step == steps { cfg.t_end } else { t + h };
            }
            traj.max_mass_drift = traj.max_mass_drift.max((kahan_sum(y.iter().copied()) - 1.0).abs());
            x = self.clean(y, cfg, &mut traj);
            if halted {
                traj.status = RunStatus::GateHalted { t };
                self.record(&mut traj, t, &x, p)?;
                return Ok(traj);
            }
            if step % cfg.sample_every == 0 || step == steps {
                self.record(&mut traj, t, &x, p)?;
            }
        }
        Ok(traj)
    }

    fn advance(&self, x: &[f64], p: &RevisionProtocol, h: f64, t: f64) -> Result<Vec<f64>> {
        let mut failure = None;
        let y = rk4_step(
            |s| match self.mean_dynamics_rhs(s, p) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![0.0; s.len()]
                }
            },
            x,
            h,
        )
        .map_err(|e| Error::NumericalAbort { t, reason: e.to_string() })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(y),
        }
    }

    /// Largest step length in `(0, h]` keeping the state in the mixed region.
    fn locate_gate(&self, x: &[f64], p: &RevisionProtocol, h: f64, t: f64) -> Result<(f64, Vec<f64>)> {
        let (mut lo, mut hi) = (0.0, h);
        let mut y_lo = x.to_vec();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let y = self.advance(x, p, mid, t)?;
            if self.in_mixed_region(&y) {
                lo = mid;
                y_lo = y;
            } else {
                hi = mid;
            }
        }
        Ok((lo, y_lo))
    }

    fn clean(&self, mut y: Vec<f64>, cfg: &IntegratorConfig, traj: &mut PopulationTrajectory) -> Vec<f64> {
        let mut clipped = 0.0;
        let mut step_min = 0.0f64;
        for v in y.iter_mut() {
            if *v < 0.0 {
                step_min = step_min.min(*v);
                clipped -= *v;
                *v = 0.0;
            }
        }
        traj.min_mass = traj.min_mass.min(step_min);
        traj.max_clipped = traj.max_clipped.max(clipped);
        if step_min < cfg.clip_floor {
            traj.positivity_violations += 1;
        }
        if cfg.renormalize {
            let total = kahan_sum(y.iter().copied());
            if total > 0.0 {
                for v in y.iter_mut() {
                    *v /= total;
                }
            }
        }
        y
    }

    fn record(&self, traj: &mut PopulationTrajectory, t: f64, x: &[f64], p: &RevisionProtocol) -> Result<()> {
        traj.times.push(t);
        traj.mean_rates.push(self.mean_rate(x));
        traj.residuals.push(self.residual(x, p)?);
        traj.states.push(x.to_vec());
        Ok(())
    }
}

fn average(mu: &[f64], f: &[f64]) -> f64 {
    kahan_sum(mu.iter().zip(f).map(|(m, v)| m * v))
}

fn prefix(mu: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(mu.len() + 1);
    let mut acc = KahanSum::new();
    cum.push(0.0);
    for &m in mu {
        acc.add(m);
        cum.push(acc.value());
    }
    cum
}

/// Mass of grid points `<= x`.
fn mass_le(points: &[f64], cum: &[f64], x: f64) -> f64 {
    cum[points.partition_point(|&p| p <= x)]
}
