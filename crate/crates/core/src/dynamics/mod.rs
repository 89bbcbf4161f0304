//! Nonlinear ACS maps, quasi-differencing, and the backward solver for
//! models with a lagged endogenous state.

mod backward;
mod gz;
mod quasi;

use std::fmt::Write as _;

use serde::Serialize;

use crate::closedform::acs_support_bounds;
use crate::error::{Error, Result};

pub use backward::{
    backward_solve, paths_csv, BackwardOptions, BackwardPath, BackwardSolveResult, PathOutcome,
    Stage, TerminalBranch, TransitionFilter,
};
pub use gz::{gz_residual, solve_gz, GzOptions, GzSolution};
pub use quasi::{quasi_difference, QuasiDifferenced};

const DIVERGENCE_BOUND: f64 = 1e6;
const STEP_TOL: f64 = 1e-13;
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    ConvergedTo {
        fixed_point: f64,
    },
    DivergedAt {
        t: usize,
    },
    DomainBreakdownAt {
        t: usize,
    },
    /// Still moving after the requested number of steps.
    Unsettled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub value: f64,
    /// Derivative of the map at the fixed point.
    pub slope: f64,
    pub stable: bool,
}

impl FixedPoint {
    fn new(value: f64, slope: f64) -> Self {
        Self {
            value,
            slope,
            stable: slope.abs() < 1.0,
        }
    }
}

/// Iterates of a scalar map, finite up to the recorded breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub status: TrajectoryStatus,
    pub fixed_points: Vec<FixedPoint>,
    /// Iterates at or below this value put the policy rate at its floor.
    pub kink: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,regime\n");
        for (t, v) in self.values.iter().enumerate() {
            let regime = if *v <= self.kink { "ZIR" } else { "PIR" };
            writeln!(out, "{t},{v},{regime}").expect("write to string");
        }
        out
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::Domain("the number of steps must be positive".into()));
    }
    Ok(())
}

fn run(
    pi0: f64,
    steps: usize,
    mut step: impl FnMut(f64) -> Option<f64>,
) -> (Vec<f64>, TrajectoryStatus) {
    let mut values = vec![pi0];
    let mut x = pi0;
    for t in 1..=steps {
        let Some(next) = step(x).filter(|v| v.is_finite()) else {
            return (values, TrajectoryStatus::DomainBreakdownAt { t });
        };
        values.push(next);
        if next.abs() > DIVERGENCE_BOUND {
            return (values, TrajectoryStatus::DivergedAt { t });
        }
        if (next - x).abs() < STEP_TOL {
            return (values, TrajectoryStatus::ConvergedTo { fixed_point: next });
        }
        x = next;
    }
    (values, TrajectoryStatus::Unsettled)
}

/// `pi_{t+1} = max(-mu, psi pi_t)`, the absorbing-state map in log
/// deviations from target.
pub fn iterate_absorbing(pi0: f64, psi: f64, mu: f64, steps: usize) -> Result<Trajectory> {
    check_steps(steps)?;
    if !(psi > 0.0 && pi0.is_finite() && mu.is_finite()) {
        return Err(Error::Domain(format!(
            "psi = {psi} must be positive, pi0 and mu finite"
        )));
    }
    let mut fixed_points = Vec::new();
    // Floor branch: x = -mu needs psi (-mu) <= -mu.
    if psi * -mu <= -mu {
        fixed_points.push(FixedPoint::new(-mu, 0.0));
    }
    // Rule branch: x = 0 needs 0 >= -mu.
    if mu >= 0.0 && !(mu == 0.0 && fixed_points.len() == 1) {
        fixed_points.push(FixedPoint::new(0.0, psi));
    }
    let (values, status) = run(pi0, steps, |x| Some((-mu).max(psi * x)));
    Ok(Trajectory {
        values,
        status,
        fixed_points,
        kink: -mu / psi,
    })
}

/// Parameters of the transitory-state map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitoryMap {
    pub psi: f64,
    pub p: f64,
    pub r: f64,
    pub pi_star: f64,
    pub r_l: f64,
    pub pi_bar: f64,
}

impl TransitoryMap {
    pub fn new(
        psi: f64,
        p: f64,
        r: f64,
        pi_star: f64,
        r_l: f64,
        pi_bar: Option<f64>,
    ) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("p = {p} must lie in (0, 1]")));
        }
        if !(psi > 0.0 && r > 0.0 && pi_star > 0.0 && r_l.is_finite()) {
            return Err(Error::Domain(
                "psi, r and pi_star must be positive, r_L finite".into(),
            ));
        }
        let pi_bar = pi_bar.unwrap_or(pi_star);
        if !(pi_bar > 0.0) {
            return Err(Error::Domain(format!("pi_bar = {pi_bar} must be positive")));
        }
        Ok(Self {
            psi,
            p,
            r,
            pi_star,
            r_l,
            pi_bar,
        })
    }

    pub fn mu(&self) -> f64 {
        (self.r * self.pi_star).ln()
    }

    /// Largest admissible iterate; the map is undefined from here up.
    pub fn domain_bound(&self) -> f64 {
        ((self.pi_bar / self.pi_star).ln() - (1.0 - self.p).ln()) / self.psi
    }

    pub fn kink(&self) -> f64 {
        -self.mu() / self.psi
    }

    /// Value of the map on the floor branch, `None` if undefined.
    pub fn floor_value(&self) -> Option<f64> {
        let den = self.r * self.pi_bar - 1.0 + self.p;
        (den > 0.0).then(|| (self.p * self.pi_bar / self.pi_star / den).ln() - self.r_l)
    }

    pub fn apply(&self, x: f64) -> Option<f64> {
        if x <= self.kink() {
            return self.floor_value();
        }
        if x >= self.domain_bound() {
            return None;
        }
        let ratio = self.pi_bar / self.pi_star;
        let den = ratio - (1.0 - self.p) * (self.psi * x).exp();
        (den > 0.0).then(|| (self.p * ratio / den).ln() + self.psi * x - self.r_l)
    }

    fn slope(&self, x: f64) -> f64 {
        if x <= self.kink() {
            return 0.0;
        }
        let ratio = self.pi_bar / self.pi_star;
        self.psi * ratio / (ratio - (1.0 - self.p) * (self.psi * x).exp())
    }

    /// Fixed points on both branches, in increasing order.
    pub fn fixed_points(&self) -> Vec<FixedPoint> {
        let mut out = Vec::new();
        let kink = self.kink();
        if let Some(v) = self.floor_value() {
            if v <= kink {
                out.push(FixedPoint::new(v, 0.0));
            }
        }
        let hi = self.domain_bound().min(kink + 50.0);
        let gap = |x: f64| self.apply(x).map(|v| v - x);
        let samples = 4096;
        let grid: Vec<f64> = (0..=samples)
            .map(|i| kink + (hi - kink) * i as f64 / samples as f64)
            .collect();
        for w in grid.windows(2) {
            let (mut a, mut b) = (w[0].max(kink + f64::EPSILON * kink.abs().max(1.0)), w[1]);
            let (Some(fa), Some(fb)) = (gap(a), gap(b)) else {
                continue;
            };
            if fa == 0.0 {
                out.push(FixedPoint::new(a, self.slope(a)));
                continue;
            }
            if fa.signum() == fb.signum() {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                match gap(mid) {
                    Some(fm) if fm.signum() == fa.signum() => a = mid,
                    Some(_) => b = mid,
                    None => break,
                }
            }
            let x = 0.5 * (a + b);
            out.push(FixedPoint::new(x, self.slope(x)));
        }
        out
    }
}

/// Iterates the two-branch transitory map from `pi0`. Leaving the domain of
/// the map is reported as a breakdown.
pub fn iterate_transitory(map: &TransitoryMap, pi0: f64, steps: usize) -> Result<Trajectory> {
    check_steps(steps)?;
    let (values, status) = run(pi0, steps, |x| map.apply(x));
    Ok(Trajectory {
        values,
        status,
        fixed_points: map.fixed_points(),
        kink: map.kink(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Existence {
    pub exists: bool,
    /// `r^{-1} <= pi_star`.
    pub first_condition: bool,
    /// Upper bound on `-r_L`, when the first condition holds.
    pub bound: Option<f64>,
    /// `bound - (-r_L)`.
    pub margin: Option<f64>,
    /// The shock sits on the bound up to rounding.
    pub boundary: bool,
}

/// Existence of a bounded solution of the nonlinear ACS model under an
/// absorbing-state shock.
pub fn existence_nonlinear(map: &TransitoryMap) -> Result<Existence> {
    let b = acs_support_bounds(map.psi, map.p, map.r, map.pi_star, Some(map.pi_bar))?;
    let margin = b.nonlinear_bound.map(|v| v + map.r_l);
    let boundary = margin.is_some_and(|m| m.abs() <= BOUNDARY_TOL * (1.0 + map.r_l.abs()));
    Ok(Existence {
        exists: b.first_condition && margin.is_some_and(|m| m >= 0.0 || boundary),
        first_condition: b.first_condition,
        bound: b.nonlinear_bound,
        margin,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorbing_classification() {
        let t = iterate_absorbing(-0.003, 1.5, 0.01, 200).unwrap();
        assert_eq!(
            t.status,
            TrajectoryStatus::ConvergedTo { fixed_point: -0.01 }
        );
        assert_eq!(t.fixed_points.len(), 2);
        assert!(t.fixed_points[0].stable && !t.fixed_points[1].stable);
        let t = iterate_absorbing(0.0, 1.5, 0.01, 10).unwrap();
        assert_eq!(t.status, TrajectoryStatus::ConvergedTo { fixed_point: 0.0 });
        for pi0 in [-0.05, 0.0, 0.02] {
            let t = iterate_absorbing(pi0, 1.5, -0.01, 500).unwrap();
            assert!(
                matches!(t.status, TrajectoryStatus::DivergedAt { .. }),
                "{pi0}"
            );
            assert!(t.fixed_points.is_empty());
        }
    }

    #[test]
    fn transitory_kink_value() {
        let map = TransitoryMap::new(1.5, 0.8, 1.005, 1.005, -0.004, None).unwrap();
        let v = map.apply(map.kink()).unwrap();
        let expected = (0.8f64 / (1.005 * 1.005 - 1.0 + 0.8)).ln() + 0.004;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn transitory_existence_and_breakdown() {
        let base = TransitoryMap::new(1.5, 0.8, 1.005, 1.005, -1e-3, None).unwrap();
        let bound = existence_nonlinear(&base).unwrap().bound.unwrap();
        assert!(bound > 0.0);
        let inside = TransitoryMap {
            r_l: -0.9 * bound,
            ..base
        };
        assert!(existence_nonlinear(&inside).unwrap().exists);
        let t = iterate_transitory(&inside, -0.05, 500).unwrap();
        assert!(matches!(t.status, TrajectoryStatus::ConvergedTo { .. }));
        assert_eq!(t.fixed_points.len(), 2);
        assert!(t.fixed_points[0].stable && !t.fixed_points[1].stable);

        let outside = TransitoryMap {
            r_l: -1.1 * bound,
            ..base
        };
        assert!(!existence_nonlinear(&outside).unwrap().exists);
        let t = iterate_transitory(&outside, -0.05, 5000).unwrap();
        assert!(
            matches!(t.status, TrajectoryStatus::DomainBreakdownAt { .. }),
            "{:?}",
            t.status
        );
        assert!(t.fixed_points.is_empty());
    }

    #[test]
    fn existence_requires_first_condition() {
        let map = TransitoryMap::new(1.5, 0.8, 0.99, 1.0, -1e-6, None).unwrap();
        let e = existence_nonlinear(&map).unwrap();
        assert!(!e.exists && !e.first_condition);
    }

    #[test]
    fn existence_on_the_bound_is_flagged() {
        let base = TransitoryMap::new(1.5, 0.8, 1.005, 1.005, -1e-3, None).unwrap();
        let bound = existence_nonlinear(&base).unwrap().bound.unwrap();
        let e = existence_nonlinear(&TransitoryMap {
            r_l: -bound,
            ..base
        })
        .unwrap();
        assert!(e.exists && e.boundary);
    }

    #[test]
    fn unit_persistence_is_valid() {
        let map = TransitoryMap::new(1.5, 1.0, 1.005, 1.005, -1e-3, None).unwrap();
        assert!(map.domain_bound().is_infinite());
        assert!(iterate_transitory(&map, -0.02, 100).is_ok());
    }

    #[test]
    fn csv_layout() {
        let t = iterate_absorbing(-0.003, 1.5, 0.01, 5).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("t,value,regime\n0,-0.003,PIR\n1,-0.004"));
        assert!(csv.lines().last().unwrap().ends_with("ZIR"));
    }
}
