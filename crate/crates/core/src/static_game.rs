//! The one-shot rate allocation game on a single receiver.
//!
//! Each user picks a rate; a user's payoff is `g_i(a_i)` when the whole
//! profile lies in the capacity region and zero otherwise. Pure Nash
//! equilibria are exactly the points of the maximal face `sum a = C_N` above
//! the per-user floors `r_{i,N}`, and they coincide with strong equilibria.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::capacity::{DEFAULT_TOL, 
    build_region, on_max_face, safe_rate, CapacityRegion, Coalition, LogBase, RateProfile,
    SingleReceiverScenario, ROUNDING_SLACK,
};
use crate::error::{invalid, Error, Result};
use crate::numerics::{bisect, project_polytope, Halfspace};
use crate::utility::{UtilityFamily, UtilitySpec};

#[derive(Debug, Clone, PartialEq)]
pub struct StaticGame {
    scenario: SingleReceiverScenario,
    region: CapacityRegion,
    utility: UtilitySpec,
}

/// Best response together with whether it is actually attainable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub rate: f64,
    /// `false` when `(rate, a_{-i})` lies outside the region, which happens
    /// only when the other users are already infeasible and the floor
    /// `r_{i,N}` is returned.
    pub feasible: bool,
}

/// Why a profile fails the Nash test.
#[derive(Debug, Clone, PartialEq)]
pub enum NashViolation {
    Infeasible { coalition: Coalition },
    SlackCapacity { gap: f64 },
    BelowFloor { user: usize, rate: f64, floor: f64 },
    ProfitableDeviation { user: usize, rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub profile: RateProfile,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyMetrics {
    /// Worst strong-equilibrium welfare over the social optimum.
    pub spoa: f64,
    /// Best equilibrium welfare over the social optimum.
    pub pos: f64,
    pub optimum: Optimum,
    pub worst_equilibrium: Optimum,
    pub best_equilibrium: Optimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedEquilibrium {
    pub rates: RateProfile,
    /// Common scalar `c`; the multipliers are `c / tau_i`.
    pub c: f64,
    pub multipliers: Vec<f64>,
    /// `|sum a - C_N|`.
    pub residual: f64,
}

const OPT_MAX_ITERS: usize = 20_000;

impl StaticGame {
    pub fn new(scenario: SingleReceiverScenario, utility: UtilitySpec) -> Result<Self> {
        utility.validate(scenario.n_users())?;
        let region = build_region(&scenario)?;
        Ok(Self { scenario, region, utility })
    }

    pub fn scenario(&self) -> &SingleReceiverScenario {
        &self.scenario
    }

    pub fn region(&self) -> &CapacityRegion {
        &self.region
    }

    pub fn utility(&self) -> &UtilitySpec {
        &self.utility
    }

    pub fn n_users(&self) -> usize {
        self.scenario.n_users()
    }

    pub fn log_base(&self) -> LogBase {
        self.scenario.log_base()
    }

    /// `g_i(x)`.
    pub fn g(&self, i: usize, x: f64) -> f64 {
        self.utility.value(i, x, self.log_base())
    }

    /// `r_{i,N}`: user `i`'s rate when every other user is treated as noise.
    pub fn floor(&self, i: usize) -> f64 {
        safe_rate(&self.scenario, i, Coalition::full(self.n_users())).expect("user index in range")
    }

    fn check_dim(&self, a: &RateProfile) -> Result<()> {
        if a.len() != self.n_users() {
            return Err(Error::DimensionMismatch { expected: self.n_users(), got: a.len() });
        }
        Ok(())
    }

    pub fn payoff(&self, i: usize, a: &RateProfile) -> Result<f64> {
        self.check_dim(a)?;
        Ok(if self.region.contains(a, 0.0)? { self.g(i, a[i]) } else { 0.0 })
    }

    /// Sum of utilities, ignoring feasibility.
    pub fn welfare(&self, rates: &[f64]) -> f64 {
        rates.iter().enumerate().map(|(i, &x)| self.g(i, x)).sum()
    }

    /// Constrained potential `1_C(a) * sum_i g_i(a_i)`.
    pub fn potential(&self, a: &RateProfile) -> Result<f64> {
        self.check_dim(a)?;
        Ok(if self.region.contains(a, 0.0)? { self.welfare(a.rates()) } else { 0.0 })
    }

    /// `max(r_{i,N}, min_{S ∋ i} (C_S - sum_{k in S, k != i} a_k))`, the
    /// best-reply formula evaluated as written, with a feasibility flag.
    pub fn best_response_formula(&self, i: usize, a: &RateProfile) -> Result<BestResponse> {
        self.check_dim(a)?;
        if i >= self.n_users() {
            return Err(invalid(format!("user {i} out of range")));
        }
        let headroom = self
            .region
            .coalitions()
            .filter(|s| s.contains(i))
            .map(|s| self.region.bound(s) - s.without(i).sum(a.rates()))
            .fold(f64::INFINITY, f64::min);
        let rate = self.floor(i).max(headroom);
        let feasible = self.region.contains(&a.with_rate(i, rate)?, 0.0)?;
        Ok(BestResponse { rate, feasible })
    }

    /// Best reply of user `i` to the others' rates in `a` (entry `i` ignored).
    pub fn best_response(&self, i: usize, a: &RateProfile) -> Result<f64> {
        let br = self.best_response_formula(i, a)?;
        if !br.feasible {
            return Err(Error::NoFeasibleCompletion { user: i });
        }
        Ok(br.rate)
    }

    /// First reason `a` is not a pure Nash equilibrium, if any.
    pub fn nash_violation(&self, a: &RateProfile, tol: f64) -> Result<Option<NashViolation>> {
        self.check_dim(a)?;
        if let Some(coalition) = self.region.first_violation(a.rates(), tol)? {
            return Ok(Some(NashViolation::Infeasible { coalition }));
        }
        let c = self.region.sum_bound();
        let gap = c - a.total();
        if gap > tol + ROUNDING_SLACK * c {
            return Ok(Some(NashViolation::SlackCapacity { gap }));
        }
        for i in 0..self.n_users() {
            let floor = self.floor(i);
            if a[i] < floor - tol {
                return Ok(Some(NashViolation::BelowFloor { user: i, rate: a[i], floor }));
            }
        }
        for i in 0..self.n_users() {
            let br = self.best_response_formula(i, a)?;
            if (br.rate - a[i]).abs() > tol + ROUNDING_SLACK * c {
                return Ok(Some(NashViolation::ProfitableDeviation { user: i, rate: br.rate }));
            }
        }
        Ok(None)
    }

    pub fn is_nash(&self, a: &RateProfile, tol: f64) -> bool {
        matches!(self.nash_violation(a, tol), Ok(None))
    }

    /// Strong equilibria coincide with pure Nash equilibria in this game:
    /// feasible, on the maximal face and above the floors.
    pub fn is_strong_equilibrium(&self, a: &RateProfile, tol: f64) -> bool {
        a.len() == self.n_users()
            && matches!(self.region.contains(a, tol), Ok(true))
            && matches!(on_max_face(&self.region, &self.scenario, a, tol), Ok(true))
    }

    fn linear_weights(&self) -> Option<Vec<f64>> {
        matches!(self.utility.family(), UtilityFamily::Identity)
            .then(|| (0..self.n_users()).map(|i| self.utility.scale(i)).collect())
    }

    /// Face vertex filling users by weight, descending (`best`) or ascending.
    fn greedy_vertex(&self, weights: &[f64], best: bool) -> Result<RateProfile> {
        let mut order: Vec<usize> = (0..self.n_users()).collect();
        order.sort_by(|&a, &b| {
            let o = weights[a].total_cmp(&weights[b]);
            (if best { o.reverse() } else { o }).then(a.cmp(&b))
        });
        self.region.face_vertex(&order)
    }

    /// Maximizes total utility over the capacity region.
    pub fn social_optimum(&self) -> Result<Optimum> {
        if let Some(w) = self.linear_weights() {
            let profile = self.greedy_vertex(&w, true)?;
            let value = self.welfare(profile.rates());
            return Ok(Optimum { profile, value });
        }
        let start = self.interior_start();
        let ascent = self.maximize_concave(&self.region.halfspaces(), start)?;
        // Increasing utilities peak on the maximal face; lift the ascent
        // point there and finish with exact exchanges.
        let mut lifted = ascent.profile.clone().into_inner();
        for i in 0..self.n_users() {
            if let Some(top) = self.region.max_completion(i, &lifted, DEFAULT_TOL)? {
                lifted[i] = lifted[i].max(top);
            }
        }
        let polished = self.maximize_on_face(RateProfile::new(lifted)?)?;
        Ok(if polished.value >= ascent.value { polished } else { ascent })
    }

    /// Maximizes `sum g_i` over the maximal face by pairwise exchanges
    /// `a + d (e_i - e_j)`, each solved exactly by bisection on the
    /// directional derivative. A base point admitting no improving exchange
    /// is optimal for a separable concave objective.
    fn maximize_on_face(&self, start: RateProfile) -> Result<Optimum> {
        let n = self.n_users();
        let base = self.log_base();
        let mut x = start.into_inner();
        for _ in 0..OPT_MAX_ITERS {
            let mut moved = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let cap = self
                        .region
                        .coalitions()
                        .filter(|s| s.contains(i) && !s.contains(j))
                        .map(|s| self.region.bound(s) - s.sum(&x))
                        .fold(x[j], f64::min)
                        .max(0.0);
                    let slope = |d: f64| {
                        self.utility.derivative(i, (x[i] + d).max(1e-300), base)
                            - self.utility.derivative(j, (x[j] - d).max(1e-300), base)
                    };
                    if cap <= 0.0 || slope(0.0) <= 0.0 {
                        continue;
                    }
                    let d = if slope(cap) >= 0.0 { cap } else { bisect(slope, 0.0, cap, f64::MIN_POSITIVE)? };
                    let before = self.g(i, x[i]) + self.g(j, x[j]);
                    let after = self.g(i, x[i] + d) + self.g(j, x[j] - d);
                    if after > before {
                        x[i] += d;
                        x[j] = (x[j] - d).max(0.0);
                        moved = moved.max(d);
                    }
                }
            }
            if moved <= 1e-15 * self.region.sum_bound() {
                break;
            }
        }
        let profile = RateProfile::new(x)?;
        Ok(Optimum { value: self.welfare(profile.rates()), profile })
    }

    fn interior_start(&self) -> Vec<f64> {
        let n = self.n_users();
        let c = self.region.sum_bound();
        (0..n)
            .map(|i| (0.5 * c / n as f64).min(0.5 * self.region.bound(Coalition::singleton(i))))
            .collect()
    }

    /// Projected gradient ascent of `sum g_i` over `{a >= 0} ∩ halfspaces`,
    /// with backtracking from step `1/L`.
    fn maximize_concave(&self, halfspaces: &[Halfspace], start: Vec<f64>) -> Result<Optimum> {
        let n = self.n_users();
        let base = self.log_base();
        let project = |x: &[f64]| project_polytope(x, halfspaces, 1e-15, 200_000);
        let mut x = project(&start)?;
        let lower = x.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-3);
        let lipschitz = (0..n)
            .map(|i| self.utility.curvature_bound(i, lower, base))
            .fold(0.0, f64::max)
            .max(1e-12);
        let mut step = (1.0 / lipschitz).min(1e3);
        let mut value = self.welfare(&x);

        for _ in 0..OPT_MAX_ITERS {
            let grad: Vec<f64> = (0..n)
                .map(|i| self.utility.derivative(i, x[i].max(1e-12), base).min(1e12))
                .collect();
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n).map(|i| x[i] + step * grad[i]).collect();
                let y = project(&trial)?;
                let dist2: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                let lin: f64 = (0..n).map(|i| grad[i] * (y[i] - x[i])).sum();
                let fy = self.welfare(&y);
                if fy >= value + lin - dist2 / (2.0 * step) - 1e-15 * value.abs() {
                    accepted = Some((y, fy, dist2));
                    break;
                }
                step *= 0.5;
            }
            let Some((y, fy, dist2)) = accepted else { break };
            let converged = dist2.sqrt() <= 1e-13 * (1.0 + step);
            if fy >= value {
                x = y;
                value = fy;
            }
            if converged {
                break;
            }
            step *= 1.5;
        }
        let profile = RateProfile::new(x.iter().map(|v| v.max(0.0)).collect())?;
        let value = self.welfare(profile.rates());
        Ok(Optimum { profile, value })
    }

    /// Strong price of anarchy and price of stability.
    pub fn efficiency_metrics(&self) -> Result<EfficiencyMetrics> {
        let optimum = self.social_optimum()?;
        if let Some(w) = self.linear_weights() {
            if self.utility.is_shared() {
                // Welfare is constant on the maximal face.
                let eq = Optimum { profile: optimum.profile.clone(), value: optimum.value };
                return Ok(EfficiencyMetrics {
                    spoa: 1.0,
                    pos: 1.0,
                    worst_equilibrium: eq.clone(),
                    best_equilibrium: eq,
                    optimum,
                });
            }
            let worst = self.greedy_vertex(&w, false)?;
            let best = self.greedy_vertex(&w, true)?;
            let worst = Optimum { value: self.welfare(worst.rates()), profile: worst };
            let best = Optimum { value: self.welfare(best.rates()), profile: best };
            return Ok(EfficiencyMetrics {
                spoa: worst.value / optimum.value,
                pos: best.value / optimum.value,
                worst_equilibrium: worst,
                best_equilibrium: best,
                optimum,
            });
        }

        let worst = self.worst_face_vertex()?;
        let face_start = self.region.face_vertex(&(0..self.n_users()).collect::<Vec<_>>())?;
        let best = self.maximize_on_face(face_start)?;
        Ok(EfficiencyMetrics {
            spoa: worst.value / optimum.value,
            pos: best.value / optimum.value,
            worst_equilibrium: worst,
            best_equilibrium: best,
            optimum,
        })
    }

    /// Minimum of a concave welfare over the maximal face, attained at a
    /// vertex. Exhaustive up to 8 users; adjacent-swap descent beyond.
    fn worst_face_vertex(&self) -> Result<Optimum> {
        let n = self.n_users();
        let eval = |order: &[usize]| -> Result<Optimum> {
            let profile = self.region.face_vertex(order)?;
            Ok(Optimum { value: self.welfare(profile.rates()), profile })
        };
        if n <= 8 {
            let mut worst: Option<Optimum> = None;
            for order in crate::capacity::permutations(n) {
                let cand = eval(&order)?;
                if worst.as_ref().is_none_or(|w| cand.value < w.value) {
                    worst = Some(cand);
                }
            }
            return Ok(worst.expect("at least one permutation"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut current = eval(&order)?;
        loop {
            let mut improved = false;
            for k in 0..n - 1 {
                order.swap(k, k + 1);
                let cand = eval(&order)?;
                if cand.value < current.value {
                    current = cand;
                    improved = true;
                } else {
                    order.swap(k, k + 1);
                }
            }
            if !improved {
                return Ok(current);
            }
        }
    }

    /// Normalized equilibrium with weights `tau`: `g_i'(a_i) = c / tau_i` and
    /// `sum a_i = C_N`.
    pub fn normalized_equilibrium(&self, tau: &[f64]) -> Result<NormalizedEquilibrium> {
        if tau.len() != self.n_users() {
            return Err(Error::DimensionMismatch { expected: self.n_users(), got: tau.len() });
        }
        normalized_split(&self.utility, self.log_base(), tau, self.region.sum_bound())
    }

    /// `C_N / N`, the constrained ESS of a symmetric game, after checking the
    /// invasion inequality against a grid of smaller mutants.
    pub fn symmetric_ess(&self) -> Result<f64> {
        if !self.scenario.is_symmetric(1e-12) {
            return Err(Error::Asymmetric("users have different received powers".into()));
        }
        if !self.utility.is_shared() {
            return Err(Error::Asymmetric("users have different utility weights".into()));
        }
        let n = self.n_users();
        let r = self.region.sum_bound() / n as f64;
        if !self.region.contains_rates(&vec![r; n], 0.0)? {
            return Err(invalid("the symmetric split is infeasible"));
        }
        for k in 0..20 {
            let mutant = r * k as f64 / 20.0;
            for eps in [0.05, 0.1, 0.25, 0.5, 0.75, 0.95] {
                if self.ess_margin(mutant, eps)? <= 0.0 {
                    return Err(invalid(format!("mutant {mutant} invades at eps = {eps}")));
                }
            }
        }
        Ok(r)
    }

    /// `u(r*, r_eps, ..) - u(mut, r_eps, ..)` with `r_eps = eps*mut + (1-eps)*r*`.
    pub fn ess_margin(&self, mutant: f64, eps: f64) -> Result<f64> {
        let n = self.n_users();
        let r = self.region.sum_bound() / n as f64;
        let mixed = eps * mutant + (1.0 - eps) * r;
        let mut incumbent = vec![mixed; n];
        incumbent[0] = r;
        let mut invader = vec![mixed; n];
        invader[0] = mutant;
        Ok(self.payoff(0, &RateProfile::new(incumbent)?)? - self.payoff(0, &RateProfile::new(invader)?)?)
    }

    /// Random point of the maximal face: Dirichlet(1) mixture of its vertices.
    pub fn sample_max_face<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RateProfile> {
        let vertices = self.region.face_vertices()?;
        let weights: Vec<f64> = (0..vertices.len()).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = weights.iter().sum();
        let mut rates = vec![0.0; self.n_users()];
        for (v, w) in vertices.iter().zip(&weights) {
            for (r, x) in rates.iter_mut().zip(v.rates()) {
                *r += w / total * x;
            }
        }
        RateProfile::new(rates)
    }
}

/// Solves `g_i'(a_i) = c / tau_i`, `sum a_i = total` for a strictly concave
/// utility by bisection on `c`.
pub fn normalized_split(
    utility: &UtilitySpec,
    base: LogBase,
    tau: &[f64],
    total: f64,
) -> Result<NormalizedEquilibrium> {
    if !utility.is_strictly_concave() {
        return Err(Error::Unsupported(
            "normalized equilibrium needs a strictly concave utility".into(),
        ));
    }
    utility.validate(tau.len())?;
    if let Some(t) = tau.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(invalid(format!("tau must be positive, got {t}")));
    }
    if !(total > 0.0) {
        return Err(invalid(format!("total capacity must be positive, got {total}")));
    }
    let allocation = |c: f64| -> Vec<f64> {
        tau.iter()
            .enumerate()
            .map(|(i, &t)| utility.inverse_derivative(i, c / t, base).expect("concave family"))
            .collect()
    };
    let excess = |c: f64| allocation(c).iter().sum::<f64>() - total;

    let mut hi = 1.0;
    let mut lo = 1.0;
    for _ in 0..2000 {
        if excess(hi) < 0.0 {
            break;
        }
        hi *= 2.0;
    }
    for _ in 0..2000 {
        if excess(lo) > 0.0 {
            break;
        }
        lo *= 0.5;
    }
    if !(excess(hi) <= 0.0 && excess(lo) >= 0.0) {
        return Err(Error::BadBracket { lo, hi });
    }
    // Iterate to floating-point resolution; bisect stops once the midpoint stalls.
    let c = bisect(excess, lo, hi, f64::MIN_POSITIVE)?;
    let rates = allocation(c);
    let residual = (rates.iter().sum::<f64>() - total).abs();
    if residual > 1e-10 {
        return Err(Error::NoConvergence { iterations: 2000 });
    }
    Ok(NormalizedEquilibrium {
        rates: RateProfile::new(rates)?,
        c,
        multipliers: tau.iter().map(|t| c / t).collect(),
        residual,
    })
}

/// Exhaustive deviation searches on rate grids, used to cross-check the
/// closed-form equilibrium characterizations.
pub mod oracle {
    use super::*;

    /// A coalition deviation that strictly benefits every member.
    #[derive(Debug, Clone, PartialEq)]
    pub struct CoalitionDeviation {
        pub coalition: Coalition,
        pub profile: RateProfile,
    }

    /// Searches every coalition's joint deviations over `grid`. Returns the
    /// first deviation that raises every member's payoff by more than `tol`.
    pub fn coalition_deviation(
        game: &StaticGame,
        a: &RateProfile,
        grid: &[f64],
        tol: f64,
    ) -> Result<Option<CoalitionDeviation>> {
        let n = game.n_users();
        if n > 3 {
            return Err(Error::TooManyUsers { n, max: 3 });
        }
        let current: Vec<f64> = (0..n).map(|i| game.payoff(i, a)).collect::<Result<_>>()?;
        for coalition in Coalition::all(n) {
            let members: Vec<usize> = coalition.members().collect();
            let mut idx = vec![0usize; members.len()];
            let mut rates = a.rates().to_vec();
            loop {
                for (m, &k) in members.iter().zip(&idx) {
                    rates[*m] = grid[k];
                }
                if game.region.contains_rates(&rates, 0.0)? {
                    let gains = members.iter().all(|&i| game.g(i, rates[i]) > current[i] + tol);
                    if gains {
                        return Ok(Some(CoalitionDeviation {
                            coalition,
                            profile: RateProfile::new(rates)?,
                        }));
                    }
                }
                // Odometer increment over grid^|coalition|.
                let mut pos = 0;
                while pos < idx.len() {
                    idx[pos] += 1;
                    if idx[pos] < grid.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == idx.len() {
                    break;
                }
            }
        }
        Ok(None)
    }

    /// Best unilateral deviation of each user over `points` uniform rates on
    /// `[0, C_{i}]`; returns `(user, rate, gain)` for the first user whose gain
    /// exceeds `tol`.
    pub fn unilateral_deviation(
        game: &StaticGame,
        a: &RateProfile,
        points: usize,
        tol: f64,
    ) -> Result<Option<(usize, f64, f64)>> {
        let n = game.n_users();
        for i in 0..n {
            let current = game.payoff(i, a)?;
            let hi = game.region.bound(Coalition::singleton(i));
            for k in 0..points {
                let r = hi * k as f64 / (points - 1) as f64;
                let gain = game.payoff(i, &a.with_rate(i, r)?)? - current;
                if gain > tol {
                    return Ok(Some((i, r, gain)));
                }
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym(n: usize) -> StaticGame {
        let s = SingleReceiverScenario::symmetric(n, 25.0, 0.1, LogBase::Base2).unwrap();
        StaticGame::new(s, UtilitySpec::identity()).unwrap()
    }

    fn asym2(utility: UtilitySpec) -> StaticGame {
        let s = SingleReceiverScenario::from_snr(&[3.0, 1.0], LogBase::Base2).unwrap();
        StaticGame::new(s, utility).unwrap()
    }

    fn profile(r: &[f64]) -> RateProfile {
        RateProfile::new(r.to_vec()).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let g = sym(3);
        assert_eq!(g.payoff(0, &profile(&[8.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(g.payoff(0, &profile(&[2.5, 1.0, 1.0])).unwrap(), 2.5);
        let s = SingleReceiverScenario::symmetric(2, 25.0, 0.1, LogBase::Base2).unwrap();
        let lg = StaticGame::new(s, UtilitySpec::log1p()).unwrap();
        assert_eq!(lg.payoff(0, &profile(&[3.0, 1.0])).unwrap(), 2.0);
        assert!(g.payoff(0, &profile(&[1.0])).is_err());
    }

    #[test]
    fn best_response_examples() {
        let g = sym(2);
        let br = g.best_response(0, &profile(&[0.0, 2.0])).unwrap();
        assert!((br - (501f64.log2() - 2.0)).abs() < 1e-12);
        assert!((br - 6.9687).abs() < 1e-4);

        // Others saturate the grand coalition: the formula falls back to the floor.
        let c12 = g.region().sum_bound();
        let f = g.best_response_formula(0, &profile(&[0.0, c12])).unwrap();
        assert!((f.rate - g.floor(0)).abs() < 1e-15);
        assert!(!f.feasible);
        assert!(matches!(
            g.best_response(0, &profile(&[0.0, c12])),
            Err(Error::NoFeasibleCompletion { user: 0 })
        ));

        let one = sym(1);
        let c1 = one.region().sum_bound();
        assert_eq!(one.best_response(0, &profile(&[0.3])).unwrap(), c1);
    }

    #[test]
    fn nash_examples() {
        let g = sym(3);
        let c = g.region().sum_bound();
        assert!(g.is_nash(&profile(&[c / 3.0; 3]), 1e-9));
        assert!(matches!(
            g.nash_violation(&profile(&[2.0, 2.0, 2.0]), 1e-9).unwrap(),
            Some(NashViolation::SlackCapacity { .. })
        ));
        assert!(matches!(
            g.nash_violation(&profile(&[8.0, 0.0, 0.0]), 1e-9).unwrap(),
            Some(NashViolation::Infeasible { .. })
        ));
    }

    #[test]
    fn sampled_face_points_are_nash_and_survive_deviation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in [sym(2), asym2(UtilitySpec::identity()), asym2(UtilitySpec::log1p())] {
            for _ in 0..10 {
                let a = g.sample_max_face(&mut rng).unwrap();
                assert!(g.is_nash(&a, 1e-9), "{a:?}");
                assert!(g.is_strong_equilibrium(&a, 1e-9));
                assert_eq!(unilateral_deviation(&g, &a, 1001, 1e-9).unwrap(), None);
            }
        }
    }

    #[test]
    fn strong_equilibrium_matches_coalition_oracle_on_small_grid() {
        let g = asym2(UtilitySpec::identity());
        let c = g.region().sum_bound();
        let grid: Vec<f64> = (0..=20).map(|k| c * k as f64 / 20.0).collect();
        for &x in &grid {
            for &y in &grid {
                let a = profile(&[x, y]);
                let oracle_stable = coalition_deviation(&g, &a, &grid, 1e-12).unwrap().is_none();
                if g.is_strong_equilibrium(&a, 1e-9) {
                    assert!(oracle_stable, "{a:?}");
                }
                if !g.region().contains(&a, 0.0).unwrap() {
                    assert!(!oracle_stable);
                    assert!(!g.is_strong_equilibrium(&a, 1e-9));
                }
            }
        }
    }

    #[test]
    fn strong_equals_nash_on_infeasible_profile() {
        let g = sym(2);
        let a = profile(&[9.0, 9.0]);
        assert!(!g.is_strong_equilibrium(&a, 1e-9));
        assert!(!g.is_nash(&a, 1e-9));
    }

    #[test]
    fn potential_examples() {
        let g = sym(3);
        assert_eq!(g.potential(&profile(&[8.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(g.potential(&profile(&[1.0, 2.0, 0.5])).unwrap(), 3.5);
    }

    #[test]
    fn social_optimum_identity() {
        let g = sym(3);
        let opt = g.social_optimum().unwrap();
        assert!((opt.value - 751f64.log2()).abs() < 1e-12);
        assert!(g.is_nash(&opt.profile, 1e-9));
        let one = sym(1);
        let o1 = one.social_optimum().unwrap();
        assert_eq!(o1.profile.rates(), &[one.region().sum_bound()]);
    }

    #[test]
    fn social_optimum_log1p_symmetric_is_equal_split() {
        let s = SingleReceiverScenario::symmetric(2, 25.0, 0.1, LogBase::Base2).unwrap();
        let g = StaticGame::new(s, UtilitySpec::log1p()).unwrap();
        let c = g.region().sum_bound();
        let opt = g.social_optimum().unwrap();
        let expected = 2.0 * (1.0 + c / 2.0).log2();
        assert!((opt.value - expected).abs() < 1e-9, "{} vs {expected}", opt.value);
        assert!((opt.profile[0] - c / 2.0).abs() < 1e-6);
    }

    #[test]
    fn social_optimum_concave_against_dense_grid() {
        for utility in [UtilitySpec::log1p(), UtilitySpec::power(0.5).unwrap()] {
            let g = asym2(utility);
            let opt = g.social_optimum().unwrap();
            let c1 = g.region().bound(Coalition::singleton(0));
            let c = g.region().sum_bound();
            // Optimum lies on the face: scan a1 over [r_1, C_1] with a2 = C - a1.
            let m = 1_000_000;
            let lo = g.floor(0);
            let grid_best = (0..=m)
                .map(|k| {
                    let a1 = lo + (c1 - lo) * k as f64 / m as f64;
                    g.welfare(&[a1, c - a1])
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((opt.value - grid_best).abs() < 1e-6, "{} vs {grid_best}", opt.value);
            assert!(g.region().contains(&opt.profile, 1e-9).unwrap());
        }
    }

    #[test]
    fn efficiency_identity_is_exactly_one() {
        for g in [sym(3), asym2(UtilitySpec::identity())] {
            let m = g.efficiency_metrics().unwrap();
            assert_eq!(m.spoa, 1.0);
            assert_eq!(m.pos, 1.0);
        }
    }

    #[test]
    fn efficiency_log1p_asymmetric() {
        let g = asym2(UtilitySpec::log1p());
        let m = g.efficiency_metrics().unwrap();
        assert!((m.pos - 1.0).abs() < 1e-6, "pos = {}", m.pos);
        assert!(m.spoa <= 1.0 && m.spoa > 0.0);
        assert!(m.spoa <= m.pos + 1e-12);
        // Two face corners for N = 2.
        let corners = g.region().face_vertices().unwrap();
        let worst = corners.iter().map(|v| g.welfare(v.rates())).fold(f64::INFINITY, f64::min);
        assert!((m.worst_equilibrium.value - worst).abs() < 1e-12);
        assert!(g.is_nash(&m.best_equilibrium.profile, 1e-6));
    }

    #[test]
    fn efficiency_weighted_identity_uses_vertices() {
        let g = asym2(UtilitySpec::identity().with_scale(vec![1.0, 3.0]).unwrap());
        let m = g.efficiency_metrics().unwrap();
        assert!(m.spoa < 1.0);
        assert!((m.pos - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalized_equilibrium_closed_form() {
        let ne = normalized_split(&UtilitySpec::log1p(), LogBase::Natural, &[1.0, 1.0], 4.0).unwrap();
        assert!((ne.c - 1.0 / 3.0).abs() < 1e-10);
        assert!((ne.rates[0] - 2.0).abs() < 1e-10 && (ne.rates[1] - 2.0).abs() < 1e-10);
        assert!(ne.residual <= 1e-10);
    }

    #[test]
    fn normalized_equilibrium_weighted_ratio() {
        let u = UtilitySpec::log1p();
        let ne = normalized_split(&u, LogBase::Natural, &[2.0, 1.0], 4.0).unwrap();
        // Closed form: a_i = tau_i / c - 1 with sum = 4 gives c = 3/6.
        assert!((ne.c - 0.5).abs() < 1e-12);
        let d1 = u.derivative(0, ne.rates[0], LogBase::Natural);
        let d2 = u.derivative(1, ne.rates[1], LogBase::Natural);
        assert!((d1 / d2 - 0.5).abs() < 1e-12);
        assert_eq!(ne.multipliers.len(), 2);
    }

    #[test]
    fn normalized_equilibrium_symmetric_is_equal_split() {
        let s = SingleReceiverScenario::symmetric(3, 25.0, 0.1, LogBase::Base2).unwrap();
        let g = StaticGame::new(s, UtilitySpec::power(0.5).unwrap()).unwrap();
        let ne = g.normalized_equilibrium(&[1.0, 1.0, 1.0]).unwrap();
        let c = g.region().sum_bound();
        for i in 0..3 {
            assert!((ne.rates[i] - c / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn normalized_equilibrium_rejects_identity() {
        assert!(matches!(sym(2).normalized_equilibrium(&[1.0, 1.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ess_examples() {
        let g = sym(3);
        let r = g.symmetric_ess().unwrap();
        assert!((r - 751f64.log2() / 3.0).abs() < 1e-15);
        assert!((r - 3.1842).abs() < 1e-4);
        for mutant in [0.5 * r, 0.9 * r] {
            for eps in [0.1, 0.5] {
                assert!(g.ess_margin(mutant, eps).unwrap() > 0.0);
            }
        }
        let one = sym(1);
        assert_eq!(one.symmetric_ess().unwrap(), one.region().sum_bound());
        assert!(matches!(
            asym2(UtilitySpec::identity()).symmetric_ess(),
            Err(Error::Asymmetric(_))
        ));
    }
}
