//! Constrained correlated equilibria of the single-receiver game.
//!
//! A device is a finite distribution over rate profiles. Each user is told
//! its own component (the signal) and may replace it by any rate; the check
//! compares conditional expected payoffs of obeying against every constant
//! deviation on a grid, per user and per signal value.

use crate::capacity::{Coalition, RateProfile};
use crate::error::{invalid, Error, Result};
use crate::population::ActionGrid;
use crate::static_game::StaticGame;

/// Signals closer than this are treated as the same recommendation.
pub const SIGNAL_MERGE_TOL: f64 = 1e-12;
pub const DEFAULT_DEVIATION_POINTS: usize = 501;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedDevice {
    support: Vec<(RateProfile, f64)>,
}

/// A profitable deviation from obeying one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct CceWitness {
    pub user: usize,
    pub signal: f64,
    pub deviation: f64,
    /// Conditional expected payoff of obeying the signal.
    pub obey_payoff: f64,
    /// Conditional expected payoff of playing `deviation` instead.
    pub deviate_payoff: f64,
}

impl CorrelatedDevice {
    pub fn new(support: Vec<(RateProfile, f64)>) -> Result<Self> {
        let Some((first, _)) = support.first() else {
            return Err(Error::EmptySupport);
        };
        let n = first.len();
        for (k, (profile, w)) in support.iter().enumerate() {
            if profile.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: profile.len() });
            }
            if !(*w > 0.0 && w.is_finite()) {
                return Err(invalid(format!("atom {k} has non-positive weight {w}")));
            }
            if support[..k].iter().any(|(p, _)| p == profile) {
                return Err(invalid(format!("atom {k} repeats an earlier profile")));
            }
        }
        let total: f64 = support.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights must sum to 1, got {total}")));
        }
        Ok(Self { support })
    }

    pub fn dirac(profile: RateProfile) -> Self {
        Self { support: vec![(profile, 1.0)] }
    }

    pub fn support(&self) -> &[(RateProfile, f64)] {
        &self.support
    }

    pub fn n_users(&self) -> usize {
        self.support[0].0.len()
    }
}

/// Device mixing pure Nash profiles; every such mixture is a CCE.
pub fn mixture_of_nash(
    game: &StaticGame,
    profiles: Vec<RateProfile>,
    weights: Vec<f64>,
    tol: f64,
) -> Result<CorrelatedDevice> {
    if profiles.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: profiles.len(), got: weights.len() });
    }
    for (index, p) in profiles.iter().enumerate() {
        if !game.is_nash(p, tol) {
            return Err(Error::NotNash { index });
        }
    }
    CorrelatedDevice::new(profiles.into_iter().zip(weights).collect())
}

/// `points` uniform deviation rates on `[0, max_i C_i]`.
pub fn deviation_grid(game: &StaticGame, points: usize) -> Result<ActionGrid> {
    let hi = (0..game.n_users())
        .map(|i| game.region().bound(Coalition::singleton(i)))
        .fold(0.0, f64::max);
    ActionGrid::uniform(hi, points)
}

/// First profitable (user, signal, deviation) triple, if any.
pub fn cce_violation(
    device: &CorrelatedDevice,
    game: &StaticGame,
    dev_grid: &ActionGrid,
    tol: f64,
) -> Result<Option<CceWitness>> {
    let n = game.n_users();
    if device.n_users() != n {
        return Err(Error::DimensionMismatch { expected: n, got: device.n_users() });
    }
    for i in 0..n {
        let cap = game.region().bound(Coalition::singleton(i));
        let rates: Vec<f64> = dev_grid.points().iter().copied().filter(|&r| r <= cap).collect();
        for (signal, atoms) in group_by_signal(device, i) {
            let mass: f64 = atoms.iter().map(|(_, w)| w).sum();
            let mut obey = 0.0;
            for (p, w) in &atoms {
                obey += w * game.payoff(i, p)?;
            }
            let obey = obey / mass;
            for &r in &rates {
                let mut dev = 0.0;
                for (p, w) in &atoms {
                    dev += w * game.payoff(i, &p.with_rate(i, r)?)?;
                }
                let dev = dev / mass;
                if dev > obey + tol {
                    return Ok(Some(CceWitness {
                        user: i,
                        signal,
                        deviation: r,
                        obey_payoff: obey,
                        deviate_payoff: dev,
                    }));
                }
            }
        }
    }
    Ok(None)
}

pub fn is_cce(device: &CorrelatedDevice, game: &StaticGame, dev_grid: &ActionGrid, tol: f64) -> Result<bool> {
    Ok(cce_violation(device, game, dev_grid, tol)?.is_none())
}

/// Atoms grouped by user `i`'s recommended rate, in order of first appearance.
fn group_by_signal(device: &CorrelatedDevice, i: usize) -> Vec<(f64, Vec<(&RateProfile, f64)>)> {
    let mut groups: Vec<(f64, Vec<(&RateProfile, f64)>)> = Vec::new();
    for (p, w) in &device.support {
        let s = p[i];
        match groups.iter_mut().find(|(g, _)| (g - s).abs() <= SIGNAL_MERGE_TOL * (1.0 + s.abs())) {
            Some((_, atoms)) => atoms.push((p, *w)),
            None => groups.push((s, vec![(p, *w)])),
        }
    }
    groups
}
