//! Single-receiver Gaussian multiple-access capacity region.
//!
//! The region is the polymatroid
//!
//! ```text
//! C = { a >= 0 : sum_{i in S} a_i <= C_S for every nonempty coalition S },
//! C_S = log(1 + sum_{i in S} P_i h_i / noise)
//! ```
//!
//! Coalitions are bit-masks over at most [`MAX_USERS`] users.

use crate::error::{invalid, Error, Result};
use crate::numerics::Halfspace;

/// Dense coalition enumeration is exponential; beyond this it is refused.
pub const MAX_USERS: usize = 20;

/// Default feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative slack absorbed by every bound comparison. Covers the rounding of
/// sums such as `3 * (C/3)` that land on a face in exact arithmetic.
pub const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LogBase {
    #[default]
    Base2,
    Natural,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Base2 => x.log2(),
            LogBase::Natural => x.ln(),
        }
    }

    /// `log(1 + x)` in this base, accurate for small `x`.
    pub fn log1p(self, x: f64) -> f64 {
        match self {
            LogBase::Base2 => x.ln_1p() / std::f64::consts::LN_2,
            LogBase::Natural => x.ln_1p(),
        }
    }

    /// `ln(base)`, the factor relating this base to natural logs.
    pub fn ln_base(self) -> f64 {
        match self {
            LogBase::Base2 => std::f64::consts::LN_2,
            LogBase::Natural => 1.0,
        }
    }
}

/// A nonempty subset of users, stored as a bit-mask (bit `i` = user `i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(pub u32);

impl Coalition {
    pub fn singleton(i: usize) -> Self {
        Coalition(1 << i)
    }

    pub fn full(n: usize) -> Self {
        Coalition(((1u64 << n) - 1) as u32)
    }

    pub fn from_members(members: &[usize]) -> Self {
        Coalition(members.iter().fold(0, |m, &i| m | (1 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1 << i))
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }

    /// All nonempty coalitions of `n` users, in increasing mask order.
    pub fn all(n: usize) -> impl Iterator<Item = Coalition> {
        (1..(1u64 << n)).map(|m| Coalition(m as u32))
    }

    /// Sum of `values[i]` over the members.
    pub fn sum(self, values: &[f64]) -> f64 {
        self.members().take_while(|&i| i < values.len()).map(|i| values[i]).sum()
    }
}

/// Transmit powers, channel gains and noise of one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleReceiverScenario {
    power: Vec<f64>,
    gain: Vec<f64>,
    noise: f64,
    log_base: LogBase,
}

impl SingleReceiverScenario {
    pub fn new(power: Vec<f64>, gain: Vec<f64>, noise: f64, log_base: LogBase) -> Result<Self> {
        if power.is_empty() {
            return Err(invalid("at least one user is required"));
        }
        if power.len() != gain.len() {
            return Err(Error::DimensionMismatch { expected: power.len(), got: gain.len() });
        }
        if let Some(p) = power.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(invalid(format!("power must be positive, got {p}")));
        }
        if let Some(h) = gain.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
            return Err(invalid(format!("gain must be positive, got {h}")));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(invalid(format!("noise must be positive, got {noise}")));
        }
        Ok(Self { power, gain, noise, log_base })
    }

    /// Scenario with unit noise and unit gains whose powers equal `snr`.
    pub fn from_snr(snr: &[f64], log_base: LogBase) -> Result<Self> {
        Self::new(snr.to_vec(), vec![1.0; snr.len()], 1.0, log_base)
    }

    /// `n` identical users with received power `power_gain` over `noise`.
    pub fn symmetric(n: usize, power_gain: f64, noise: f64, log_base: LogBase) -> Result<Self> {
        Self::new(vec![power_gain; n], vec![1.0; n], noise, log_base)
    }

    pub fn n_users(&self) -> usize {
        self.power.len()
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn log_base(&self) -> LogBase {
        self.log_base
    }

    pub fn with_log_base(mut self, log_base: LogBase) -> Self {
        self.log_base = log_base;
        self
    }

    /// Received power `P_i h_i`.
    pub fn received(&self, i: usize) -> f64 {
        self.power[i] * self.gain[i]
    }

    /// True when every user has the same received power (relative `tol`).
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let r0 = self.received(0);
        (1..self.n_users()).all(|i| (self.received(i) - r0).abs() <= tol * r0.abs())
    }

    /// `C_S` for one coalition.
    pub fn coalition_bound(&self, omega: Coalition) -> f64 {
        let total: f64 = omega.members().take_while(|&i| i < self.n_users()).map(|i| self.received(i)).sum();
        self.log_base.log1p(total / self.noise)
    }
}

/// Coalition-indexed rate bounds of one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRegion {
    n_users: usize,
    /// Indexed by coalition mask; entry 0 is unused and holds 0.
    bounds: Vec<f64>,
}

impl CapacityRegion {
    /// Region from explicit bounds indexed by mask (`bounds[0]` ignored).
    /// Bounds must be positive and monotone under inclusion.
    pub fn from_bounds(n_users: usize, bounds: Vec<f64>) -> Result<Self> {
        if n_users == 0 {
            return Err(invalid("at least one user is required"));
        }
        if n_users > MAX_USERS {
            return Err(Error::TooManyUsers { n: n_users, max: MAX_USERS });
        }
        let expected = 1usize << n_users;
        if bounds.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: bounds.len() });
        }
        for omega in Coalition::all(n_users) {
            let c = bounds[omega.0 as usize];
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid(format!("bound of coalition {:#b} must be positive, got {c}", omega.0)));
            }
            for i in omega.members() {
                let sub = omega.without(i);
                if !sub.is_empty() && bounds[sub.0 as usize] > c {
                    return Err(invalid(format!(
                        "bounds are not monotone: C[{:#b}] > C[{:#b}]",
                        sub.0, omega.0
                    )));
                }
            }
        }
        let mut bounds = bounds;
        bounds[0] = 0.0;
        Ok(Self { n_users, bounds })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn bound(&self, omega: Coalition) -> f64 {
        self.bounds[omega.0 as usize]
    }

    /// `C_N`, the bound of the grand coalition.
    pub fn sum_bound(&self) -> f64 {
        self.bound(Coalition::full(self.n_users))
    }

    pub fn coalitions(&self) -> impl Iterator<Item = Coalition> {
        Coalition::all(self.n_users)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n_users {
            return Err(Error::DimensionMismatch { expected: self.n_users, got: len });
        }
        Ok(())
    }

    /// First coalition whose bound `rates` violates by more than `tol`
    /// (plus rounding slack).
    pub fn first_violation(&self, rates: &[f64], tol: f64) -> Result<Option<Coalition>> {
        self.check_dim(rates.len())?;
        if rates.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            // Negative rates are outside the region; report the offending singleton.
            let i = rates.iter().position(|&a| a < 0.0 || !a.is_finite()).unwrap();
            return Ok(Some(Coalition::singleton(i)));
        }
        Ok(self.coalitions().find(|&omega| {
            let c = self.bound(omega);
            omega.sum(rates) > c + tol + ROUNDING_SLACK * c
        }))
    }

    pub fn contains(&self, a: &RateProfile, tol: f64) -> Result<bool> {
        self.contains_rates(a.rates(), tol)
    }

    pub fn contains_rates(&self, rates: &[f64], tol: f64) -> Result<bool> {
        Ok(self.first_violation(rates, tol)?.is_none())
    }

    /// Largest `x >= 0` such that `rates` with entry `i` replaced by `x` stays
    /// in the region, or `None` when no such completion exists.
    pub fn max_completion(&self, i: usize, rates: &[f64], tol: f64) -> Result<Option<f64>> {
        self.check_dim(rates.len())?;
        let mut best = f64::INFINITY;
        for omega in self.coalitions() {
            let c = self.bound(omega);
            let others = omega.without(i).sum(rates);
            if omega.contains(i) {
                best = best.min(c - others);
            } else if others > c + tol + ROUNDING_SLACK * c {
                return Ok(None);
            }
        }
        if best < -tol {
            return Ok(None);
        }
        Ok(Some(best.max(0.0)))
    }

    /// Region as halfspaces `sum_{i in S} a_i <= C_S` (nonnegativity excluded).
    pub fn halfspaces(&self) -> Vec<Halfspace> {
        self.coalitions()
            .map(|omega| Halfspace {
                normal: (0..self.n_users).map(|i| if omega.contains(i) { 1.0 } else { 0.0 }).collect(),
                bound: self.bound(omega),
            })
            .collect()
    }

    /// Vertex of the maximal face reached by filling users in `order`:
    /// `a_{o_k} = C_{o_1..o_k} - C_{o_1..o_{k-1}}`.
    pub fn face_vertex(&self, order: &[usize]) -> Result<RateProfile> {
        self.check_dim(order.len())?;
        let mut seen = Coalition(0);
        let mut rates = vec![0.0; self.n_users];
        let mut prev = 0.0;
        for &i in order {
            if i >= self.n_users || seen.contains(i) {
                return Err(invalid(format!("order {order:?} is not a permutation")));
            }
            seen = Coalition(seen.0 | 1 << i);
            let c = self.bound(seen);
            rates[i] = c - prev;
            prev = c;
        }
        RateProfile::new(rates)
    }

    /// All distinct vertices of the maximal face (one per user ordering).
    /// Refused above 8 users.
    pub fn face_vertices(&self) -> Result<Vec<RateProfile>> {
        if self.n_users > 8 {
            return Err(Error::TooManyUsers { n: self.n_users, max: 8 });
        }
        let mut out: Vec<RateProfile> = Vec::new();
        for order in permutations(self.n_users) {
            let v = self.face_vertex(&order)?;
            if !out.iter().any(|w| w.max_abs_diff(&v) <= 1e-12) {
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(k) = (0..n.saturating_sub(1)).rev().find(|&k| current[k] < current[k + 1]) else {
            break;
        };
        let l = (k + 1..n).rev().find(|&l| current[k] < current[l]).unwrap();
        current.swap(k, l);
        current[k + 1..].reverse();
    }
    out
}

/// Per-user transmission rates in bits (or nats) per channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile(Vec<f64>);

impl RateProfile {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some(a) = rates.iter().find(|&&a| !(a >= 0.0 && a.is_finite())) {
            return Err(invalid(format!("rates must be finite and nonnegative, got {a}")));
        }
        Ok(Self(rates))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn with_rate(&self, i: usize, rate: f64) -> Result<Self> {
        let mut r = self.0.clone();
        r[i] = rate;
        Self::new(r)
    }

    pub fn max_abs_diff(&self, other: &RateProfile) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for RateProfile {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Build the capacity region of `scenario`.
pub fn build_region(scenario: &SingleReceiverScenario) -> Result<CapacityRegion> {
    let n = scenario.n_users();
    if n > MAX_USERS {
        return Err(Error::TooManyUsers { n, max: MAX_USERS });
    }
    let mut bounds = vec![0.0; 1 << n];
    for omega in Coalition::all(n) {
        bounds[omega.0 as usize] = scenario.coalition_bound(omega);
    }
    CapacityRegion::from_bounds(n, bounds)
}

/// Rate user `i` achieves when the other members of `omega` are treated as noise.
pub fn safe_rate(scenario: &SingleReceiverScenario, i: usize, omega: Coalition) -> Result<f64> {
    if i >= scenario.n_users() || !omega.contains(i) {
        return Err(Error::NotInCoalition { user: i, coalition: omega.0 });
    }
    let interference: f64 = omega.without(i).members().map(|k| scenario.received(k)).sum();
    Ok(scenario.log_base().log1p(scenario.received(i) / (scenario.noise() + interference)))
}

/// `true` iff the profile sums to `C_N` and every user is at or above its
/// treat-others-as-noise floor `r_{i,N}`.
pub fn on_max_face(
    region: &CapacityRegion,
    scenario: &SingleReceiverScenario,
    a: &RateProfile,
    tol: f64,
) -> Result<bool> {
    let n = region.n_users();
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    if (a.total() - region.sum_bound()).abs() > tol + ROUNDING_SLACK * region.sum_bound() {
        return Ok(false);
    }
    let full = Coalition::full(n);
    for i in 0..n {
        if a[i] < safe_rate(scenario, i, full)? - tol {
            return Ok(false);
        }
    }
    Ok(true)
}
