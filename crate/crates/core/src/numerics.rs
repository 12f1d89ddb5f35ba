//! Deterministic numerical kernels shared by the game solvers and the
//! dynamics integrators.
//!
//! Every reduction here runs in a fixed order so repeated calls on identical
//! inputs are bitwise reproducible.

use crate::error::{invalid, Error, Result};

/// Compensated summation accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Step-size and sampling settings for the fixed-step integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Record every `sample_every`-th step (the initial state is always recorded).
    pub sample_every: usize,
    /// Masses / probabilities below this floor after a step count as a
    /// positivity violation; anything in `[clip_floor, 0)` is rounding noise.
    pub clip_floor: f64,
    pub renormalize: bool,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, sample_every: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(invalid(format!("t_end must be positive, got {t_end}")));
        }
        if dt > t_end {
            return Err(invalid(format!("dt = {dt} exceeds t_end = {t_end}")));
        }
        if sample_every == 0 {
            return Err(invalid("sample_every must be at least 1"));
        }
        Ok(Self {
            dt,
            t_end,
            sample_every,
            clip_floor: -1e-12,
            renormalize: true,
        })
    }

    /// Number of full steps needed to reach `t_end`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }
}

/// One classical four-stage Runge-Kutta step of the autonomous system
/// `x' = rhs(x)`.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = state.len();
    let k1 = rhs(state);
    check_len(&k1, n)?;
    let x2: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k1[i]).collect();
    let k2 = rhs(&x2);
    check_len(&k2, n)?;
    let x3: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k2[i]).collect();
    let k3 = rhs(&x3);
    check_len(&k3, n)?;
    let x4: Vec<f64> = (0..n).map(|i| state[i] + dt * k3[i]).collect();
    let k4 = rhs(&x4);
    check_len(&k4, n)?;

    let next: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if let Some(i) = next.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("rk4 state component {i}")));
    }
    Ok(next)
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("rhs component {i}")));
    }
    Ok(())
}

/// Root of a monotone scalar map by bisection.
///
/// Returns the midpoint of the final bracket, whose width is at most `tol`
/// unless an exact zero is hit first.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(invalid(format!("bisect needs lo < hi and tol > 0, got [{lo}, {hi}], tol {tol}")));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NonFinite("bisect endpoint".into()));
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::BadBracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Euclidean projection onto the probability simplex `{x >= 0, sum x = 1}`.
pub fn project_simplex(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = row.iter().sum();
    if row.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * n as f64 {
        return row.to_vec();
    }

    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    row.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Linear inequality `normal . x <= bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

impl Halfspace {
    pub fn violation(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.bound
    }

    fn project(&self, x: &mut [f64]) {
        let excess = self.violation(x);
        if excess <= 0.0 {
            return;
        }
        let norm2 = dot(&self.normal, &self.normal);
        if norm2 == 0.0 {
            return;
        }
        let scale = excess / norm2;
        for (xi, ai) in x.iter_mut().zip(&self.normal) {
            *xi -= scale * ai;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean projection onto `{x >= 0} ∩ halfspaces` by Dykstra's
/// alternating projections.
///
/// Stops when a full sweep moves the iterate by less than `tol` in the
/// infinity norm; returns [`Error::NoConvergence`] after `max_sweeps`.
pub fn project_polytope(
    point: &[f64],
    halfspaces: &[Halfspace],
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let n = point.len();
    for h in halfspaces {
        if h.normal.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: h.normal.len() });
        }
    }
    let m = halfspaces.len() + 1;
    let mut x = point.to_vec();
    let mut increments = vec![vec![0.0; n]; m];
    let mut y = vec![0.0; n];

    for _ in 0..max_sweeps {
        let start = x.clone();
        for (k, inc) in increments.iter_mut().enumerate() {
            for i in 0..n {
                y[i] = x[i] + inc[i];
            }
            if k == 0 {
                for yi in y.iter_mut() {
                    *yi = yi.max(0.0);
                }
            } else {
                halfspaces[k - 1].project(&mut y);
            }
            for i in 0..n {
                inc[i] = x[i] + inc[i] - y[i];
                x[i] = y[i];
            }
        }
        let moved = x
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved <= tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { iterations: max_sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_zero_rhs_is_identity() {
        let x = vec![0.3, -1.2, 7.0];
        let y = rk4_step(|s| vec![0.0; s.len()], &x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rk4_exponential_decay_single_step() {
        let y = rk4_step(|s| vec![-s[0]], &[1.0], 0.1).unwrap();
        // RK4 local value: 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
        let local = 1.0 - 0.1 + 0.005 - 0.1f64.powi(3) / 6.0 + 0.1f64.powi(4) / 24.0;
        assert!((y[0] - local).abs() < 1e-15);
        assert!((y[0] - 0.9048375).abs() < 1e-7);
        assert!((y[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn rk4_generator_conserves_total() {
        // Columns sum to zero: a Smith-type rate matrix.
        let a = [[-0.7, 0.2, 0.5], [0.3, -0.2, 0.1], [0.4, 0.0, -0.6]];
        let mut x = vec![0.2, 0.5, 0.3];
        for _ in 0..100 {
            let before: f64 = x.iter().sum();
            x = rk4_step(
                |s| (0..3).map(|i| (0..3).map(|j| a[i][j] * s[j]).sum()).collect(),
                &x,
                0.05,
            )
            .unwrap();
            let after: f64 = x.iter().sum();
            assert!((after - before).abs() <= 1e-13);
        }
    }

    #[test]
    fn rk4_rejects_nan() {
        let err = rk4_step(|_| vec![f64::NAN], &[1.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn rk4_is_bitwise_deterministic() {
        let f = |s: &[f64]| vec![s[1], -s[0].sin() - 0.1 * s[1]];
        let a = rk4_step(f, &[0.4, 0.1], 0.01).unwrap();
        let b = rk4_step(f, &[0.4, 0.1], 0.01).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn bisect_linear() {
        let r = bisect(|x| x - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bisect_normalized_equilibrium_multiplier() {
        let r = bisect(|x| 2.0 / x - 6.0, 0.1, 10.0, 1e-13).unwrap();
        assert!((r - 1.0 / 3.0).abs() <= 1e-13);
    }

    #[test]
    fn bisect_bracket_width_and_iteration_bound() {
        let mut calls = 0usize;
        let (lo, hi, tol) = (0.0, 3.0, 1e-6);
        let r = bisect(
            |x| {
                calls += 1;
                x * x - 2.0
            },
            lo,
            hi,
            tol,
        )
        .unwrap();
        assert!((r - 2f64.sqrt()).abs() <= tol);
        let bound = ((hi - lo) / tol).log2().ceil() as usize;
        // Two endpoint evaluations plus one per iteration.
        assert!(calls - 2 <= bound, "{} iterations > {bound}", calls - 2);
    }

    #[test]
    fn bisect_bad_bracket() {
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-9),
            Err(Error::BadBracket { .. })
        ));
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        let p = project_simplex(&[0.6, 0.6, 0.6]);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn polytope_projection_onto_triangle() {
        // {x >= 0, x1 + x2 <= 1}; projecting (1, 1) lands on (0.5, 0.5).
        let h = vec![Halfspace { normal: vec![1.0, 1.0], bound: 1.0 }];
        let p = project_polytope(&[1.0, 1.0], &h, 1e-14, 1000).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let q = project_polytope(&[2.0, -1.0], &h, 1e-14, 1000).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12 && q[1].abs() < 1e-12);
    }

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        let mut xs = vec![1.0];
        xs.extend(std::iter::repeat(1e-16).take(10_000));
        let k = kahan_sum(xs.iter().copied());
        assert!((k - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn integrator_config_validation() {
        assert!(IntegratorConfig::new(0.0, 1.0, 1).is_err());
        assert!(IntegratorConfig::new(2.0, 1.0, 1).is_err());
        assert!(IntegratorConfig::new(0.1, 1.0, 0).is_err());
        assert_eq!(IntegratorConfig::new(0.01, 10.0, 1).unwrap().n_steps(), 1000);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn simplex_projection_is_on_simplex_and_idempotent(
            row in prop::collection::vec(-3.0f64..3.0, 1..8)
        ) {
            let p = project_simplex(&row);
            let sum: f64 = p.iter().sum();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((sum - 1.0).abs() <= 1e-15 * row.len() as f64 + 1e-15);
            let q = project_simplex(&p);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn simplex_projection_preserves_order(
            row in prop::collection::vec(-3.0f64..3.0, 2..8)
        ) {
            let p = project_simplex(&row);
            for i in 0..row.len() {
                for j in 0..row.len() {
                    if row[i] > row[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }
}
