//! Coupled dynamics of the hybrid game: generalized Smith dynamics on each
//! user's channel-selection row and G-function dynamics on the split rates
//! `beta_ij`, integrated jointly with fixed-step RK4.

use std::io::Write;

use crate::capacity::{Coalition, DEFAULT_TOL};
use crate::error::{invalid, Error, Result};
use crate::hybrid_game::{hybrid_feasible, ChannelMix, HybridProfile, HybridScenario};
use crate::numerics::{rk4_step, IntegratorConfig};
use crate::RateProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub mix: ChannelMix,
    /// Row-major `N x J` split rates.
    pub beta: Vec<f64>,
    pub t: f64,
}

impl HybridState {
    pub fn new(mix: ChannelMix, beta: Vec<f64>) -> Result<Self> {
        let cells = mix.n_users() * mix.n_receivers();
        if beta.len() != cells {
            return Err(Error::DimensionMismatch { expected: cells, got: beta.len() });
        }
        if beta.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
            return Err(invalid("split rates must be nonnegative"));
        }
        Ok(Self { mix, beta, t: 0.0 })
    }

    /// Splits `alpha_i` over receivers as `beta_ij = alpha_i p_ij`.
    pub fn from_rates(mix: ChannelMix, alpha: &[f64]) -> Result<Self> {
        if alpha.len() != mix.n_users() {
            return Err(Error::DimensionMismatch { expected: mix.n_users(), got: alpha.len() });
        }
        let jn = mix.n_receivers();
        let beta = (0..mix.n_users() * jn).map(|k| alpha[k / jn] * mix.as_slice()[k]).collect();
        Self::new(mix, beta)
    }

    pub fn n_users(&self) -> usize {
        self.mix.n_users()
    }

    pub fn n_receivers(&self) -> usize {
        self.mix.n_receivers()
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.beta[i * self.n_receivers() + j]
    }

    /// `alpha_i = sum_j beta_ij`.
    pub fn alpha(&self) -> Vec<f64> {
        let jn = self.n_receivers();
        (0..self.n_users()).map(|i| self.beta[i * jn..(i + 1) * jn].iter().sum()).collect()
    }

    pub fn profile(&self) -> Result<HybridProfile> {
        HybridProfile::new(RateProfile::new(self.alpha())?, self.mix.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridDynConfig {
    pub theta: f64,
    pub mu_bar: f64,
    pub integrator: IntegratorConfig,
    /// Threshold for the first-passage times of the two residuals.
    pub residual_tol: f64,
    /// Feasibility tolerance used to gate the Smith rates.
    pub feasibility_tol: f64,
}

impl HybridDynConfig {
    pub fn new(theta: f64, mu_bar: f64, integrator: IntegratorConfig) -> Result<Self> {
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(invalid(format!("theta must be >= 1, got {theta}")));
        }
        if !(mu_bar > 0.0 && mu_bar.is_finite()) {
            return Err(invalid(format!("mu_bar must be positive, got {mu_bar}")));
        }
        Ok(Self { theta, mu_bar, integrator, residual_tol: 1e-3, feasibility_tol: DEFAULT_TOL })
    }
}

fn check_state(s: &HybridScenario, state: &HybridState) -> Result<()> {
    if state.n_users() != s.n_users() {
        return Err(Error::DimensionMismatch { expected: s.n_users(), got: state.n_users() });
    }
    if state.n_receivers() != s.n_receivers() {
        return Err(Error::DimensionMismatch { expected: s.n_receivers(), got: state.n_receivers() });
    }
    Ok(())
}

/// `u_ij = g_i(alpha_i p_ij)`.
fn payoffs(s: &HybridScenario, alpha: &[f64], p: &[f64]) -> Vec<f64> {
    let jn = s.n_receivers();
    (0..p.len()).map(|k| s.g(k / jn, alpha[k / jn] * p[k])).collect()
}

fn feasible_raw(s: &HybridScenario, alpha: &[f64], p: &[f64], tol: f64) -> Result<bool> {
    let jn = s.n_receivers();
    for j in 0..jn {
        let col: Vec<f64> = (0..s.n_users()).map(|i| alpha[i] * p[i * jn + j]).collect();
        if !s.region(j).contains_rates(&col, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `eta^i_{j j'} = max(0, u_ij' - u_ij)^theta` when the profile is feasible,
/// zero otherwise.
pub fn switch_rate(
    s: &HybridScenario,
    i: usize,
    j: usize,
    j2: usize,
    alpha: &[f64],
    mix: &ChannelMix,
    cfg: &HybridDynConfig,
) -> Result<f64> {
    if i >= s.n_users() || j >= s.n_receivers() || j2 >= s.n_receivers() {
        return Err(invalid("user or receiver index out of range"));
    }
    let prof = HybridProfile::new(RateProfile::new(alpha.to_vec())?, mix.clone())?;
    if !hybrid_feasible(s, &prof, cfg.feasibility_tol)? {
        return Ok(0.0);
    }
    let gap = s.g(i, alpha[i] * mix.get(i, j2)) - s.g(i, alpha[i] * mix.get(i, j));
    Ok(gap.max(0.0).powf(cfg.theta))
}

fn smith_raw(s: &HybridScenario, alpha: &[f64], p: &[f64], cfg: &HybridDynConfig) -> Result<Vec<f64>> {
    let jn = s.n_receivers();
    let mut chi = vec![0.0; p.len()];
    if !feasible_raw(s, alpha, p, cfg.feasibility_tol)? {
        return Ok(chi);
    }
    let u = payoffs(s, alpha, p);
    let eta = |gap: f64| -> f64 {
        if gap <= 0.0 {
            0.0
        } else if cfg.theta == 1.0 {
            gap
        } else {
            gap.powf(cfg.theta)
        }
    };
    for i in 0..s.n_users() {
        let row = i * jn;
        for j in 0..jn {
            let mut inflow = 0.0;
            let mut outflow = 0.0;
            for j2 in 0..jn {
                inflow += p[row + j2] * eta(u[row + j] - u[row + j2]);
                outflow += eta(u[row + j2] - u[row + j]);
            }
            chi[row + j] = inflow - p[row + j] * outflow;
        }
    }
    Ok(chi)
}

fn gfunction_raw(s: &HybridScenario, p: &[f64], beta: &[f64], mu_bar: f64) -> Vec<f64> {
    let jn = s.n_receivers();
    let n = s.n_users();
    let weighted: Vec<f64> = (0..jn).map(|j| (0..n).map(|i| p[i * jn + j] * beta[i * jn + j]).sum()).collect();
    (0..p.len())
        .map(|k| {
            let j = k % jn;
            -mu_bar * (weighted[j] - s.receiver_sum_capacity(j)) * p[k] * beta[k]
        })
        .collect()
}

/// Generalized Smith dynamics on the channel-selection rows at the state's
/// rates `alpha_i = sum_j beta_ij`.
pub fn smith_rhs(s: &HybridScenario, state: &HybridState, cfg: &HybridDynConfig) -> Result<Vec<f64>> {
    check_state(s, state)?;
    smith_raw(s, &state.alpha(), state.mix.as_slice(), cfg)
}

/// `dbeta_ij/dt = -mu_bar (sum_k p_kj beta_kj - C_{j,N}) p_ij beta_ij`.
pub fn gfunction_rhs(s: &HybridScenario, state: &HybridState, cfg: &HybridDynConfig) -> Result<Vec<f64>> {
    check_state(s, state)?;
    Ok(gfunction_raw(s, state.mix.as_slice(), &state.beta, cfg.mu_bar))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridTrajectory {
    pub n_users: usize,
    pub n_receivers: usize,
    pub times: Vec<f64>,
    pub mixes: Vec<Vec<f64>>,
    pub betas: Vec<Vec<f64>>,
    pub alphas: Vec<Vec<f64>>,
    pub residual_chi: Vec<f64>,
    pub residual_beta: Vec<f64>,
    /// First step time at which `max|chi|` fell below the configured tolerance.
    pub chi_settled_at: Option<f64>,
    /// First step time at which `max|dbeta/dt|` fell below the tolerance.
    pub beta_settled_at: Option<f64>,
    /// Largest `|sum_j p_ij - 1|` after a step, before renormalization.
    pub max_row_drift: f64,
    pub final_state: HybridState,
}

impl HybridTrajectory {
    /// CSV with columns `t, p_11..p_NJ, beta_11..beta_NJ, alpha_1..alpha_N,
    /// residual_chi, residual_beta` (1-based indices).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (n, jn) = (self.n_users, self.n_receivers);
        let sep = if n < 10 && jn < 10 { "" } else { "_" };
        let mut header = vec!["t".to_string()];
        for name in ["p", "beta"] {
            for i in 1..=n {
                for j in 1..=jn {
                    header.push(format!("{name}_{i}{sep}{j}"));
                }
            }
        }
        header.extend((1..=n).map(|i| format!("alpha_{i}")));
        header.push("residual_chi".into());
        header.push("residual_beta".into());
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| invalid(format!("csv output failed: {e}"));
        w.write_record(&header).map_err(io)?;
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.mixes[k].iter().map(f64::to_string));
            row.extend(self.betas[k].iter().map(f64::to_string));
            row.extend(self.alphas[k].iter().map(f64::to_string));
            row.push(self.residual_chi[k].to_string());
            row.push(self.residual_beta[k].to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| invalid(format!("csv output failed: {e}")))?;
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Joint RK4 integration of the Smith and G-function dynamics. After each
/// step rows of the mix are clipped at zero and renormalized and negative
/// split rates are clipped to zero.
pub fn simulate_hybrid(s: &HybridScenario, state0: &HybridState, cfg: &HybridDynConfig) -> Result<HybridTrajectory> {
    check_state(s, state0)?;
    let (n, jn) = (s.n_users(), s.n_receivers());
    for i in 0..n {
        for j in 0..jn {
            let cap = s.region(j).bound(Coalition::singleton(i));
            if state0.beta(i, j) > cap + cfg.feasibility_tol {
                return Err(invalid(format!(
                    "initial beta_{i}{j} = {} exceeds the single-user capacity {cap}",
                    state0.beta(i, j)
                )));
            }
        }
    }
    let cells = n * jn;
    let mut x: Vec<f64> = state0.mix.as_slice().iter().chain(&state0.beta).copied().collect();
    let rhs = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (p, beta) = z.split_at(cells);
        let alpha: Vec<f64> = (0..n).map(|i| beta[i * jn..(i + 1) * jn].iter().sum()).collect();
        Ok((smith_raw(s, &alpha, p, cfg)?, gfunction_raw(s, p, beta, cfg.mu_bar)))
    };

    let mut traj = HybridTrajectory {
        n_users: n,
        n_receivers: jn,
        times: Vec::new(),
        mixes: Vec::new(),
        betas: Vec::new(),
        alphas: Vec::new(),
        residual_chi: Vec::new(),
        residual_beta: Vec::new(),
        chi_settled_at: None,
        beta_settled_at: None,
        max_row_drift: 0.0,
        final_state: state0.clone(),
    };
    let record = |traj: &mut HybridTrajectory, t: f64, z: &[f64], chi: f64, bdot: f64| {
        let (p, beta) = z.split_at(cells);
        traj.times.push(t);
        traj.mixes.push(p.to_vec());
        traj.betas.push(beta.to_vec());
        traj.alphas.push((0..n).map(|i| beta[i * jn..(i + 1) * jn].iter().sum()).collect());
        traj.residual_chi.push(chi);
        traj.residual_beta.push(bdot);
    };
    let settle = |traj: &mut HybridTrajectory, t: f64, chi: f64, bdot: f64| {
        if traj.chi_settled_at.is_none() && chi <= cfg.residual_tol {
            traj.chi_settled_at = Some(t);
        }
        if traj.beta_settled_at.is_none() && bdot <= cfg.residual_tol {
            traj.beta_settled_at = Some(t);
        }
    };

    let (chi0, bd0) = rhs(&x)?;
    let (mut chi_res, mut bd_res) = (max_abs(&chi0), max_abs(&bd0));
    record(&mut traj, 0.0, &x, chi_res, bd_res);
    settle(&mut traj, 0.0, chi_res, bd_res);

    let ic = &cfg.integrator;
    let steps = ic.n_steps();
    let mut t = 0.0;
    for step in 1..=steps {
        let h = ic.dt.min(ic.t_end - t);
        let mut failure = None;
        let y = rk4_step(
            |z| match rhs(z) {
                Ok((a, b)) => a.into_iter().chain(b).collect(),
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![0.0; z.len()]
                }
            },
            &x,
            h,
        )
        .map_err(|e| Error::NumericalAbort { t, reason: e.to_string() })?;
        if let Some(e) = failure {
            return Err(e);
        }
        t = if step == steps { ic.t_end } else { t + h };
        x = y;
        for i in 0..n {
            let row = &mut x[i * jn..(i + 1) * jn];
            let drift = (row.iter().sum::<f64>() - 1.0).abs();
            traj.max_row_drift = traj.max_row_drift.max(drift);
            for v in row.iter_mut() {
                *v = v.max(0.0);
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                return Err(Error::NumericalAbort { t, reason: format!("mix row {i} vanished") });
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        for v in x[cells..].iter_mut() {
            *v = v.max(0.0);
        }
        let (chi, bd) = rhs(&x)?;
        chi_res = max_abs(&chi);
        bd_res = max_abs(&bd);
        settle(&mut traj, t, chi_res, bd_res);
        if step % ic.sample_every == 0 || step == steps {
            record(&mut traj, t, &x, chi_res, bd_res);
        }
    }
    let (p, beta) = x.split_at(cells);
    let rows = (0..n).map(|i| p[i * jn..(i + 1) * jn].to_vec()).collect();
    let mut final_state = HybridState::new(ChannelMix::new(rows)?, beta.to_vec())?;
    final_state.t = t;
    traj.final_state = final_state;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestPointReport {
    /// `|sum_i p_ij beta_ij - C_{j,N}|` per receiver.
    pub defects: Vec<f64>,
    /// `max|chi|` at the state's rates.
    pub smith_residual: f64,
    /// Every `p_ij` and `beta_ij` exceeds the tolerance.
    pub interior: bool,
    /// The profile `(alpha, P)` with `alpha_i = sum_j beta_ij` satisfies every
    /// receiver region.
    pub feasible: bool,
    pub passes: bool,
}

pub fn interior_rest_point_check(
    s: &HybridScenario,
    state: &HybridState,
    cfg: &HybridDynConfig,
    tol: f64,
) -> Result<RestPointReport> {
    check_state(s, state)?;
    let (n, jn) = (s.n_users(), s.n_receivers());
    let defects: Vec<f64> = (0..jn)
        .map(|j| {
            let w: f64 = (0..n).map(|i| state.mix.get(i, j) * state.beta(i, j)).sum();
            (w - s.receiver_sum_capacity(j)).abs()
        })
        .collect();
    let smith_residual = max_abs(&smith_rhs(s, state, cfg)?);
    let interior = state.mix.as_slice().iter().chain(&state.beta).all(|&v| v > tol);
    let feasible = hybrid_feasible(s, &state.profile()?, cfg.feasibility_tol)?;
    let passes = interior && smith_residual <= tol && defects.iter().all(|&d| d <= tol);
    Ok(RestPointReport { defects, smith_residual, interior, feasible, passes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::LogBase;
    use crate::hybrid_game::HybridScenario;
    use crate::utility::UtilitySpec;

    fn example() -> HybridScenario {
        HybridScenario::reference_example(LogBase::Base2)
    }

    fn cfg(theta: f64, dt: f64, t_end: f64) -> HybridDynConfig {
        HybridDynConfig::new(theta, 0.9, IntegratorConfig::new(dt, t_end, 100).unwrap()).unwrap()
    }

    fn paper_start() -> HybridState {
        let mix = ChannelMix::new(vec![vec![0.2, 0.3, 0.5], vec![0.25, 0.5, 0.25]]).unwrap();
        HybridState::from_rates(mix, &[0.2, 0.1]).unwrap()
    }

    #[test]
    fn switch_rate_examples() {
        let s = example();
        let c = cfg(1.0, 1e-3, 1.0);
        let third = 1.0 / 3.0;
        let mix = ChannelMix::new(vec![vec![third; 3], vec![third; 3]]).unwrap();
        assert_eq!(switch_rate(&s, 0, 0, 1, &[1.0, 1.0], &mix, &c).unwrap(), 0.0);
        let heavy = ChannelMix::new(vec![vec![0.2, 0.3, 0.5], vec![0.25, 0.5, 0.25]]).unwrap();
        assert_eq!(switch_rate(&s, 0, 0, 2, &[10.0, 20.0], &heavy, &c).unwrap(), 0.0);
        // Identity g, alpha = 1: u_i1 = 0.5, u_i2 = 0 on a (0.5, 0, 0.5) row.
        let mix = ChannelMix::new(vec![vec![0.5, 0.0, 0.5], vec![third; 3]]).unwrap();
        let c2 = cfg(2.0, 1e-3, 1.0);
        assert!((switch_rate(&s, 0, 1, 0, &[1.0, 0.0], &mix, &c2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smith_rows_sum_to_zero_and_favor_better_receivers() {
        let s = example();
        let c = cfg(1.0, 1e-3, 1.0);
        let st = paper_start();
        let chi = smith_rhs(&s, &st, &c).unwrap();
        for i in 0..2 {
            assert!(chi[i * 3..i * 3 + 3].iter().sum::<f64>().abs() < 1e-15);
        }
        // User 1 has the largest load on receiver 3, so mass flows there.
        assert!(chi[2] > 0.0 && chi[0] < 0.0);

        let third = 1.0 / 3.0;
        let uniform = HybridState::from_rates(ChannelMix::new(vec![vec![third; 3]; 2]).unwrap(), &[1.0, 1.0]).unwrap();
        assert!(smith_rhs(&s, &uniform, &c).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smith_direction_increases_payoff_at_fixed_rates() {
        let s = example();
        let c = cfg(1.0, 1e-3, 1.0);
        let st = paper_start();
        let chi = smith_rhs(&s, &st, &c).unwrap();
        let alpha = st.alpha();
        for i in 0..2 {
            let d: f64 = (0..3).map(|j| chi[i * 3 + j] * s.g(i, alpha[i] * st.mix.get(i, j))).sum();
            assert!(d > 0.0);
        }
    }

    #[test]
    fn gfunction_examples() {
        let s = example();
        let c = cfg(1.0, 1e-3, 1.0);
        let mix = ChannelMix::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let st = HybridState::new(mix.clone(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(gfunction_rhs(&s, &st, &c).unwrap()[0], 0.0);
        let c1 = s.receiver_sum_capacity(0);
        let at_cap = HybridState::new(mix, vec![c1, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(gfunction_rhs(&s, &at_cap, &c).unwrap()[0], 0.0);
    }

    #[test]
    fn logistic_solution() {
        let s = HybridScenario::new(1, 1, vec![1.0], vec![0.1], 0.01, LogBase::Base2, UtilitySpec::identity()).unwrap();
        let c_cap = s.receiver_sum_capacity(0);
        let b0 = 0.2;
        let st = HybridState::new(ChannelMix::new(vec![vec![1.0]]).unwrap(), vec![b0]).unwrap();
        for t_end in [1.0, 5.0] {
            let config = cfg(1.0, 1e-3, t_end);
            let traj = simulate_hybrid(&s, &st, &config).unwrap();
            let exact = c_cap / (1.0 + (c_cap / b0 - 1.0) * (-0.9 * c_cap * t_end).exp());
            assert!((traj.final_state.beta[0] - exact).abs() <= 1e-6);
        }
    }

    #[test]
    fn rest_point_check_examples() {
        let s = example();
        let c = cfg(1.0, 1e-3, 1.0);
        // Equal u_ij per user and weighted loads at capacity: identical
        // alpha p_ij across receivers makes the rows uniform.
        let third = 1.0 / 3.0;
        let mix = ChannelMix::new(vec![vec![third; 3]; 2]).unwrap();
        let beta: Vec<f64> = (0..6).map(|k| 1.5 * s.receiver_sum_capacity(k % 3)).collect();
        let st = HybridState::new(mix, beta).unwrap();
        let r = interior_rest_point_check(&s, &st, &c, 1e-9).unwrap();
        assert!(r.defects.iter().all(|&d| d < 1e-12), "{r:?}");
        assert!(r.interior);
        assert!(r.passes);

        let mut bumped = st.clone();
        bumped.beta[0] += 0.1;
        let r = interior_rest_point_check(&s, &bumped, &c, 1e-9).unwrap();
        assert!((r.defects[0] - third * 0.1).abs() < 1e-12);
    }

    #[test]
    fn initial_beta_above_single_user_capacity_rejected() {
        let s = example();
        let mix = ChannelMix::new(vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let st = HybridState::new(mix, vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(simulate_hybrid(&s, &st, &cfg(1.0, 1e-3, 0.01)).is_err());
    }

    #[test]
    fn csv_header() {
        let s = example();
        let traj = simulate_hybrid(&s, &paper_start(), &cfg(1.0, 1e-3, 0.002)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t,p_11,p_12,p_13,p_21,p_22,p_23,beta_11,beta_12,beta_13,beta_21,beta_22,beta_23,alpha_1,alpha_2,residual_chi,residual_beta"
        );
    }
}
