use serde::Serialize;

use super::{check_coherency_fast, CoherencyOptions};
use crate::canonical::ReducedNk;
use crate::error::{Error, Result};

const SAMPLES: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffStatus {
    /// Coherent below the cutoff, not coherent above it.
    Bracketed,
    /// Coherent over the whole range; the cutoff is the upper end.
    CoherentThroughout,
    /// Not coherent anywhere on the sampling grid; the cutoff is the lower end.
    IncoherentThroughout,
    /// More than one switch on the sampling grid; the cutoff is the first.
    NonMonotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffResult {
    pub psi_bar: f64,
    pub status: CutoffStatus,
    /// The bisection landed within tolerance of one and was snapped to it.
    pub at_unity: bool,
    /// Maximal coherent runs on the sampling grid, as closed sample ranges.
    pub coherent_intervals: Vec<(f64, f64)>,
    pub evaluations: usize,
}

/// Largest `psi` below which the reduced NK system passes the determinant
/// test, searched on `(lo, hi]` to within `tol`.
pub fn find_psi_bar(
    sys: &ReducedNk,
    lo: f64,
    hi: f64,
    tol: f64,
    opts: &CoherencyOptions,
) -> Result<CutoffResult> {
    if !(lo < hi) || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "bad search range ({lo}, {hi}) or tolerance {tol}"
        )));
    }
    let mut evaluations = 0;
    let mut coherent = |psi: f64| -> Result<bool> {
        evaluations += 1;
        Ok(check_coherency_fast(&sys.with_psi(psi), opts)?.is_coherent())
    };
    let grid: Vec<f64> = (0..SAMPLES)
        .map(|i| lo + (hi - lo) * i as f64 / (SAMPLES - 1) as f64)
        .collect();
    let flags = grid
        .iter()
        .map(|&p| coherent(p))
        .collect::<Result<Vec<_>>>()?;

    let mut coherent_intervals = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                coherent_intervals.push((grid[s], grid[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        coherent_intervals.push((grid[s], grid[SAMPLES - 1]));
    }
    let switches = flags.windows(2).filter(|w| w[0] != w[1]).count();

    let (psi_bar, status) = if flags.iter().all(|f| *f) {
        (hi, CutoffStatus::CoherentThroughout)
    } else if !flags[0] {
        (lo, CutoffStatus::IncoherentThroughout)
    } else {
        let first = flags
            .iter()
            .position(|f| !f)
            .expect("some sample is not coherent");
        let (mut a, mut b) = (grid[first - 1], grid[first]);
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if coherent(mid)? {
                a = mid;
            } else {
                b = mid;
            }
        }
        let status = if switches > 1 {
            CutoffStatus::NonMonotone
        } else {
            CutoffStatus::Bracketed
        };
        (0.5 * (a + b), status)
    };
    let at_unity = status != CutoffStatus::IncoherentThroughout && (psi_bar - 1.0).abs() <= tol;
    Ok(CutoffResult {
        psi_bar: if at_unity { 1.0 } else { psi_bar },
        status,
        at_unity,
        coherent_intervals,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::reduce_nk;
    use crate::markov::MarkovChain;

    fn two_state(rho: f64) -> MarkovChain {
        MarkovChain::rouwenhorst(rho, 0.001, 2).unwrap()
    }

    #[test]
    fn matches_two_state_cutoff_formula() {
        let (beta, sl, p) = (0.99, 0.4479, 0.85);
        let formula = 2.0 * p - 1.0 - (2.0 - 2.0 * p) * (1.0 - 2.0 * p * beta + beta) / sl;
        let sys = reduce_nk(beta, 1.0, sl, 1.0, 0.01, &two_state(0.7)).unwrap();
        let res = find_psi_bar(&sys, 1e-6, 1.5, 1e-7, &CoherencyOptions::default()).unwrap();
        assert_eq!(res.status, CutoffStatus::Bracketed);
        assert!(
            (res.psi_bar - formula).abs() < 1e-6,
            "{} vs {formula}",
            res.psi_bar
        );
    }

    #[test]
    fn negative_formula_value_caps_at_one() {
        let sys = reduce_nk(0.99, 1.0, 0.4479, 1.0, 0.01, &two_state(0.4)).unwrap();
        let res = find_psi_bar(&sys, 1e-6, 1.5, 1e-6, &CoherencyOptions::default()).unwrap();
        assert!(res.at_unity);
        assert_eq!(res.psi_bar, 1.0);
    }

    #[test]
    fn rejects_empty_range() {
        let sys = reduce_nk(0.99, 1.0, 0.4479, 1.0, 0.01, &two_state(0.4)).unwrap();
        assert!(find_psi_bar(&sys, 1.0, 1.0, 1e-6, &CoherencyOptions::default()).is_err());
    }
}
