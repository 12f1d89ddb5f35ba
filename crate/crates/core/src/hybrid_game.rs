//! Multi-receiver rate and channel-selection game.
//!
//! User `i` picks a total rate `alpha_i` and a distribution `p_i` over
//! receivers. Receiver `j` carries the load `alpha_i p_ij` of each user and
//! has its own coalition capacity region. Expected payoff is
//! `sum_j p_ij g_i(alpha_i p_ij)` when every receiver's region holds the
//! loads, and zero otherwise.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::capacity::{CapacityRegion, Coalition, LogBase, RateProfile, MAX_USERS};
use crate::error::{invalid, Error, Result};
use crate::numerics::{project_polytope, project_simplex};
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, PartialEq)]
pub struct HybridScenario {
    n_users: usize,
    n_receivers: usize,
    /// Row-major `N x J`.
    power: Vec<f64>,
    gain: Vec<f64>,
    noise: f64,
    log_base: LogBase,
    utility: UtilitySpec,
    regions: Vec<CapacityRegion>,
}

impl HybridScenario {
    pub fn new(
        n_users: usize,
        n_receivers: usize,
        power: Vec<f64>,
        gain: Vec<f64>,
        noise: f64,
        log_base: LogBase,
        utility: UtilitySpec,
    ) -> Result<Self> {
        if n_users == 0 || n_receivers == 0 {
            return Err(invalid("need at least one user and one receiver"));
        }
        if n_users > MAX_USERS {
            return Err(Error::TooManyUsers { n: n_users, max: MAX_USERS });
        }
        let cells = n_users * n_receivers;
        for v in [&power, &gain] {
            if v.len() != cells {
                return Err(Error::DimensionMismatch { expected: cells, got: v.len() });
            }
        }
        if let Some(x) = power.iter().chain(&gain).find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(invalid(format!("powers and gains must be positive, got {x}")));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(invalid(format!("noise must be positive, got {noise}")));
        }
        utility.validate(n_users)?;
        let regions = (0..n_receivers)
            .map(|j| {
                let mut bounds = vec![0.0; 1 << n_users];
                for omega in Coalition::all(n_users) {
                    let total: f64 = omega.members().map(|i| power[i * n_receivers + j] * gain[i * n_receivers + j]).sum();
                    bounds[omega.0 as usize] = log_base.log1p(total / noise);
                }
                CapacityRegion::from_bounds(n_users, bounds)
            })
            .collect::<Result<_>>()?;
        Ok(Self { n_users, n_receivers, power, gain, noise, log_base, utility, regions })
    }

    /// Two users, three receivers, `P = 1` mW, gains `(0.1, 0.2, 0.3)` for
    /// both users and noise `-20` dBm, with identity utility.
    pub fn reference_example(log_base: LogBase) -> Self {
        let gain = vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3];
        Self::new(2, 3, vec![1.0; 6], gain, dbm_to_mw(-20.0), log_base, UtilitySpec::identity())
            .expect("valid reference parameters")
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_receivers(&self) -> usize {
        self.n_receivers
    }

    pub fn power(&self, i: usize, j: usize) -> f64 {
        self.power[i * self.n_receivers + j]
    }

    pub fn gain(&self, i: usize, j: usize) -> f64 {
        self.gain[i * self.n_receivers + j]
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn log_base(&self) -> LogBase {
        self.log_base
    }

    pub fn utility(&self) -> &UtilitySpec {
        &self.utility
    }

    pub fn with_log_base(&self, log_base: LogBase) -> Self {
        Self::new(
            self.n_users,
            self.n_receivers,
            self.power.clone(),
            self.gain.clone(),
            self.noise,
            log_base,
            self.utility.clone(),
        )
        .expect("parameters already validated")
    }

    pub fn region(&self, j: usize) -> &CapacityRegion {
        &self.regions[j]
    }

    /// `C_{j,S}`.
    pub fn receiver_capacity(&self, j: usize, omega: Coalition) -> Result<f64> {
        if j >= self.n_receivers {
            return Err(invalid(format!("receiver {j} out of range")));
        }
        if omega.is_empty() || !omega.is_subset_of(Coalition::full(self.n_users)) {
            return Err(invalid(format!("coalition {:#b} is not a nonempty set of users", omega.0)));
        }
        Ok(self.regions[j].bound(omega))
    }

    /// `C_{j,N}`.
    pub fn receiver_sum_capacity(&self, j: usize) -> f64 {
        self.regions[j].sum_bound()
    }

    pub fn g(&self, i: usize, x: f64) -> f64 {
        self.utility.value(i, x, self.log_base)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Row-stochastic `N x J` channel-selection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMix {
    n_receivers: usize,
    p: Vec<f64>,
}

impl ChannelMix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(invalid("channel mix needs at least one row"));
        };
        let j = first.len();
        if j == 0 {
            return Err(invalid("channel mix needs at least one receiver"));
        }
        let mut p = Vec::with_capacity(rows.len() * j);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::DimensionMismatch { expected: j, got: row.len() });
            }
            if row.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(invalid(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("row {i} sums to {s}, not 1")));
            }
            p.extend_from_slice(row);
        }
        Ok(Self { n_receivers: j, p })
    }

    pub fn uniform(n: usize, j: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / j as f64; j]; n])
    }

    pub fn one_hot(n: usize, j: usize, choice: &[usize]) -> Result<Self> {
        if choice.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: choice.len() });
        }
        let rows = choice
            .iter()
            .map(|&c| {
                if c >= j {
                    return Err(invalid(format!("receiver {c} out of range")));
                }
                let mut r = vec![0.0; j];
                r[c] = 1.0;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Self::new(rows)
    }

    pub fn n_users(&self) -> usize {
        self.p.len() / self.n_receivers
    }

    pub fn n_receivers(&self) -> usize {
        self.n_receivers
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n_receivers + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n_receivers..(i + 1) * self.n_receivers]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_users()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn with_row(&self, i: usize, row: &[f64]) -> Result<Self> {
        let mut rows = self.rows();
        rows[i] = row.to_vec();
        Self::new(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridProfile {
    pub alpha: RateProfile,
    pub mix: ChannelMix,
}

impl HybridProfile {
    pub fn new(alpha: RateProfile, mix: ChannelMix) -> Result<Self> {
        if alpha.len() != mix.n_users() {
            return Err(Error::DimensionMismatch { expected: mix.n_users(), got: alpha.len() });
        }
        Ok(Self { alpha, mix })
    }

    /// Load `alpha_i p_ij` of user `i` on receiver `j`.
    pub fn load(&self, i: usize, j: usize) -> f64 {
        self.alpha[i] * self.mix.get(i, j)
    }

    /// Loads on receiver `j`, one per user.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.alpha.len()).map(|i| self.load(i, j)).collect()
    }
}

fn check_profile(s: &HybridScenario, prof: &HybridProfile) -> Result<()> {
    if prof.alpha.len() != s.n_users {
        return Err(Error::DimensionMismatch { expected: s.n_users, got: prof.alpha.len() });
    }
    if prof.mix.n_receivers() != s.n_receivers {
        return Err(Error::DimensionMismatch { expected: s.n_receivers, got: prof.mix.n_receivers() });
    }
    Ok(())
}

/// First `(receiver, coalition)` whose bound the loads exceed by more than `tol`.
pub fn hybrid_violation(s: &HybridScenario, prof: &HybridProfile, tol: f64) -> Result<Option<(usize, Coalition)>> {
    check_profile(s, prof)?;
    for j in 0..s.n_receivers {
        if let Some(c) = s.regions[j].first_violation(&prof.column(j), tol)? {
            return Ok(Some((j, c)));
        }
    }
    Ok(None)
}

/// Every receiver's region holds the loads `alpha_i p_ij`.
pub fn hybrid_feasible(s: &HybridScenario, prof: &HybridProfile, tol: f64) -> Result<bool> {
    Ok(hybrid_violation(s, prof, tol)?.is_none())
}

/// `sum_j p_ij g_i(alpha_i p_ij)` ignoring feasibility.
pub fn raw_payoff(s: &HybridScenario, i: usize, alpha: f64, row: &[f64]) -> f64 {
    row.iter().map(|&p| p * s.g(i, alpha * p)).sum()
}

pub fn expected_payoff(s: &HybridScenario, prof: &HybridProfile, i: usize) -> Result<f64> {
    if i >= s.n_users {
        return Err(invalid(format!("user {i} out of range")));
    }
    Ok(if hybrid_feasible(s, prof, 0.0)? { raw_payoff(s, i, prof.alpha[i], prof.mix.row(i)) } else { 0.0 })
}

/// `Psi = sum_i sum_j p_ij g_i(alpha_i p_ij)`, or negative infinity when
/// the profile is infeasible.
pub fn potential_psi(s: &HybridScenario, prof: &HybridProfile) -> Result<f64> {
    if !hybrid_feasible(s, prof, 0.0)? {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((0..s.n_users).map(|i| raw_payoff(s, i, prof.alpha[i], prof.mix.row(i))).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitResponse {
    pub beta: f64,
    /// `false` when the returned split overloads receiver `j`, which only
    /// happens when the floor is returned because the others saturate it.
    pub feasible: bool,
}

/// Best load of user `i` on receiver `j` against the other users' loads:
/// `max(r_{ij}, min_{S ∋ i} (C_{j,S} - sum_{k in S, k != i} alpha_k p_kj))`,
/// with coalitions and the floor's interference restricted to users that
/// transmit to `j`.
pub fn best_response_split(s: &HybridScenario, prof: &HybridProfile, i: usize, j: usize) -> Result<SplitResponse> {
    check_profile(s, prof)?;
    if i >= s.n_users || j >= s.n_receivers {
        return Err(invalid(format!("user {i} / receiver {j} out of range")));
    }
    let active: Vec<usize> = (0..s.n_users).filter(|&k| k == i || prof.mix.get(k, j) > 0.0).collect();
    let active_set = Coalition::from_members(&active);
    let loads = prof.column(j);
    let region = &s.regions[j];
    let headroom = Coalition::all(s.n_users)
        .filter(|c| c.contains(i) && c.is_subset_of(active_set))
        .map(|c| region.bound(c) - c.without(i).sum(&loads))
        .fold(f64::INFINITY, f64::min);
    let interference: f64 = active.iter().filter(|&&k| k != i).map(|&k| s.power(k, j) * s.gain(k, j)).sum();
    let floor = s.log_base.log1p(s.power(i, j) * s.gain(i, j) / (s.noise + interference));
    let beta = floor.max(headroom);
    let mut trial = loads;
    trial[i] = beta;
    let feasible = region.contains_rates(&trial, 0.0)?;
    Ok(SplitResponse { beta, feasible })
}

/// Receivers maximizing `g_i(beta_ij)` and the implied rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverChoice {
    pub receivers: Vec<usize>,
    /// `sum_{j in K*} beta_ij`.
    pub alpha: f64,
    /// One-hot row when the maximizer is unique; any distribution over
    /// `receivers` is a best reply otherwise.
    pub one_hot: Option<Vec<f64>>,
}

pub fn best_receiver_set(s: &HybridScenario, i: usize, beta_row: &[f64]) -> Result<ReceiverChoice> {
    if beta_row.len() != s.n_receivers {
        return Err(Error::DimensionMismatch { expected: s.n_receivers, got: beta_row.len() });
    }
    let values: Vec<f64> = beta_row.iter().map(|&b| s.g(i, b)).collect();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * (1.0 + best.abs());
    let receivers: Vec<usize> = (0..values.len()).filter(|&j| values[j] >= best - tie).collect();
    let alpha = receivers.iter().map(|&j| beta_row[j]).sum();
    let one_hot = (receivers.len() == 1).then(|| {
        let mut r = vec![0.0; s.n_receivers];
        r[receivers[0]] = 1.0;
        r
    });
    Ok(ReceiverChoice { receivers, alpha, one_hot })
}

/// Largest load user `i` can add on each receiver given the others, or
/// `None` where the others alone already overload the receiver.
fn headrooms(s: &HybridScenario, prof: &HybridProfile, i: usize) -> Result<Vec<Option<f64>>> {
    (0..s.n_receivers)
        .map(|j| {
            let mut col = prof.column(j);
            col[i] = 0.0;
            s.regions[j].max_completion(i, &col, 0.0)
        })
        .collect()
}

/// Profitable unilateral deviation found by [`hybrid_deviation`].
#[derive(Debug, Clone, PartialEq)]
pub struct HybridDeviation {
    pub user: usize,
    pub alpha: f64,
    pub row: Vec<f64>,
    pub gain: f64,
}

/// All distributions over `j` receivers with entries in multiples of `1/m`.
pub fn simplex_grid(j: usize, m: usize) -> Vec<Vec<f64>> {
    fn rec(j: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == j - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / m as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(j, left - k, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(j, m, m, &mut Vec::with_capacity(j), &mut out);
    out
}

/// Searches each user's deviations `(alpha', p')` with `p'` on a simplex grid
/// of resolution `1/m`. For a fixed `p'` the payoff grows with `alpha'`, so
/// only the largest feasible `alpha'` is tried. An infeasible profile is
/// reported as a deviation to the best feasible reply of the first user
/// that has one.
pub fn hybrid_deviation(s: &HybridScenario, prof: &HybridProfile, tol: f64, m: usize) -> Result<Option<HybridDeviation>> {
    check_profile(s, prof)?;
    if m == 0 {
        return Err(invalid("deviation resolution must be positive"));
    }
    let grid = simplex_grid(s.n_receivers, m);
    let feasible = hybrid_feasible(s, prof, 0.0)?;
    for i in 0..s.n_users {
        let current = if feasible { raw_payoff(s, i, prof.alpha[i], prof.mix.row(i)) } else { 0.0 };
        let room = headrooms(s, prof, i)?;
        let mut best: Option<HybridDeviation> = None;
        for row in &grid {
            let Some(alpha) = max_alpha(&room, row) else { continue };
            let gain = raw_payoff(s, i, alpha, row) - current;
            if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(HybridDeviation { user: i, alpha, row: row.clone(), gain });
            }
        }
        if best.is_some() {
            return Ok(best);
        }
    }
    Ok(None)
}

/// Largest `alpha` with `alpha p_j <= room_j` for every receiver used.
fn max_alpha(room: &[Option<f64>], row: &[f64]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (r, &p) in room.iter().zip(row) {
        if p > 0.0 {
            alpha = alpha.min((*r)? / p);
        }
    }
    alpha.is_finite().then_some(alpha)
}

pub fn is_hybrid_nash(s: &HybridScenario, prof: &HybridProfile, tol: f64, m: usize) -> Result<bool> {
    Ok(hybrid_feasible(s, prof, tol)? && hybrid_deviation(s, prof, tol, m)?.is_none())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopSolution {
    pub profile: HybridProfile,
    pub value: f64,
    /// Objective after each accepted ascent step of the winning start.
    pub history: Vec<f64>,
    pub best_start: usize,
}

pub const DEFAULT_COP_STARTS: usize = 16;
const COP_MAX_ITERS: usize = 5_000;

/// Multi-start projected gradient ascent of `Psi` over the feasible loads
/// `L_ij = alpha_i p_ij`, followed by best-reply polishing.
///
/// In load coordinates each receiver's constraint is a polytope, so the
/// feasible set is their product and projection is exact per receiver.
pub fn solve_cop(s: &HybridScenario, n_starts: usize, seed: u64) -> Result<CopSolution> {
    if n_starts == 0 {
        return Err(invalid("need at least one start"));
    }
    let (n, jn) = (s.n_users, s.n_receivers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CopSolution> = None;
    for start in 0..n_starts {
        let mut loads = vec![0.0; n * jn];
        for i in 0..n {
            let cap = (0..jn).map(|j| s.regions[j].bound(Coalition::singleton(i))).fold(f64::INFINITY, f64::min);
            let alpha = rng.random::<f64>() * cap;
            let w: Vec<f64> = (0..jn).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = w.iter().sum();
            for j in 0..jn {
                loads[i * jn + j] = alpha * w[j] / total;
            }
        }
        let (loads, history) = ascend(s, project_loads(s, &loads)?)?;
        let loads = polish(s, loads)?;
        let value = psi_loads(s, &loads);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(CopSolution { profile: profile_from_loads(s, &loads)?, value, history, best_start: start });
        }
    }
    Ok(best.expect("at least one start"))
}

fn psi_loads(s: &HybridScenario, loads: &[f64]) -> f64 {
    let jn = s.n_receivers;
    (0..s.n_users)
        .map(|i| {
            let row = &loads[i * jn..(i + 1) * jn];
            let alpha: f64 = row.iter().sum();
            if alpha <= 0.0 {
                return 0.0;
            }
            row.iter().map(|&l| l * s.g(i, l)).sum::<f64>() / alpha
        })
        .sum()
}

fn grad_loads(s: &HybridScenario, loads: &[f64]) -> Vec<f64> {
    let jn = s.n_receivers;
    let base = s.log_base;
    let mut grad = vec![0.0; loads.len()];
    for i in 0..s.n_users {
        let row = &loads[i * jn..(i + 1) * jn];
        let alpha: f64 = row.iter().sum::<f64>().max(1e-12);
        let psi_i = row.iter().map(|&l| l * s.g(i, l)).sum::<f64>() / alpha;
        for j in 0..jn {
            let l = row[j];
            let d = s.utility.derivative(i, l.max(1e-12), base).min(1e12);
            grad[i * jn + j] = (s.g(i, l) + l * d - psi_i) / alpha;
        }
    }
    grad
}

fn project_loads(s: &HybridScenario, loads: &[f64]) -> Result<Vec<f64>> {
    let (n, jn) = (s.n_users, s.n_receivers);
    let mut out = vec![0.0; loads.len()];
    for j in 0..jn {
        let col: Vec<f64> = (0..n).map(|i| loads[i * jn + j]).collect();
        let region = &s.regions[j];
        let mut proj = project_polytope(&col, &region.halfspaces(), 1e-14, 100_000)?;
        // Pull back any residual overshoot so the column is feasible exactly.
        let scale = region
            .coalitions()
            .map(|c| {
                let sum = c.sum(&proj);
                if sum > 0.0 { (region.bound(c) / sum).min(1.0) } else { 1.0 }
            })
            .fold(1.0, f64::min);
        for v in proj.iter_mut() {
            *v *= scale;
        }
        for i in 0..n {
            out[i * jn + j] = proj[i];
        }
    }
    Ok(out)
}

fn ascend(s: &HybridScenario, mut x: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut value = psi_loads(s, &x);
    let mut history = vec![value];
    let mut step = 1.0;
    for _ in 0..COP_MAX_ITERS {
        let grad = grad_loads(s, &x);
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
            let y = project_loads(s, &trial)?;
            let fy = psi_loads(s, &y);
            if fy > value {
                accepted = Some((y, fy));
                break;
            }
            step *= 0.5;
        }
        let Some((y, fy)) = accepted else { break };
        let moved = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        let gain = fy - value;
        value = fy;
        history.push(value);
        if moved <= 1e-12 || gain <= 1e-14 * value.abs().max(1.0) {
            break;
        }
        step *= 2.0;
    }
    Ok((x, history))
}

/// Replaces each user's loads by the best box vertex `L_ij in {0, room_j}`
/// when that improves the user's payoff, until no user improves.
fn polish(s: &HybridScenario, mut loads: Vec<f64>) -> Result<Vec<f64>> {
    let (n, jn) = (s.n_users, s.n_receivers);
    for _ in 0..100 {
        let mut improved = false;
        for i in 0..n {
            let prof = profile_from_loads(s, &loads)?;
            let room = headrooms(s, &prof, i)?;
            let current = raw_payoff(s, i, prof.alpha[i], prof.mix.row(i));
            let mut best_row: Option<(Vec<f64>, f64)> = None;
            for mask in 1u32..(1 << jn) {
                let row: Option<Vec<f64>> =
                    (0..jn).map(|j| if mask >> j & 1 == 1 { room[j] } else { Some(0.0) }).collect();
                let Some(row) = row else { continue };
                let alpha: f64 = row.iter().sum();
                if alpha <= 0.0 {
                    continue;
                }
                let value = row.iter().map(|&l| l * s.g(i, l)).sum::<f64>() / alpha;
                if value > current + 1e-12 * current.abs().max(1.0)
                    && best_row.as_ref().is_none_or(|(_, v)| value > *v)
                {
                    best_row = Some((row, value));
                }
            }
            if let Some((row, _)) = best_row {
                loads[i * jn..(i + 1) * jn].copy_from_slice(&row);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(loads)
}

fn profile_from_loads(s: &HybridScenario, loads: &[f64]) -> Result<HybridProfile> {
    let jn = s.n_receivers;
    let mut alpha = Vec::with_capacity(s.n_users);
    let mut rows = Vec::with_capacity(s.n_users);
    for i in 0..s.n_users {
        let row = &loads[i * jn..(i + 1) * jn];
        let a: f64 = row.iter().sum();
        alpha.push(a);
        if a > 0.0 {
            rows.push(project_simplex(&row.iter().map(|l| l / a).collect::<Vec<_>>()));
        } else {
            rows.push(vec![1.0 / jn as f64; jn]);
        }
    }
    HybridProfile::new(RateProfile::new(alpha)?, ChannelMix::new(rows)?)
}
