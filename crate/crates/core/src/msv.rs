//! Minimum-state-variable solutions `Y_t = f(X_t)`.
//!
//! Every candidate regime configuration `J` gives a linear system; its
//! solution is an equilibrium when the implied constraint margins agree with
//! `J` in every state.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::canonical::{CanonicalModel, ReducedNk};
use crate::error::{Error, Result};
use crate::glm::{
    check_config, gray_flips, implied_config, inner_bits, CanonicalSystem, GrayState, RegimeConfig,
    RegimeSystem,
};
use crate::linalg::{det_threshold, is_degenerate, matrix_rows};
use crate::markov::MarkovChain;

#[derive(Debug, Clone)]
pub struct MsvOptions {
    pub det_tol: f64,
    pub margin_tol: f64,
    pub dedupe_tol: f64,
    /// Relative residual tolerance, scaled by `1 + |rhs|_inf`.
    pub residual_tol: f64,
    pub cap: u64,
}

impl Default for MsvOptions {
    fn default() -> Self {
        Self {
            det_tol: 1e-10,
            margin_tol: 1e-9,
            dedupe_tol: 1e-8,
            residual_tol: 1e-9,
            cap: 1 << 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsvSolution {
    /// `n × k`, column `i` is the solution in state `i`.
    #[serde(serialize_with = "ser_matrix")]
    pub y: DMatrix<f64>,
    /// Configurations yielding this solution; more than one only on a boundary.
    pub regimes: Vec<RegimeConfig>,
    pub residual_norm: f64,
    /// `m × k` signed constraint slack.
    #[serde(serialize_with = "ser_matrix")]
    pub margins: DMatrix<f64>,
    pub boundary_flag: bool,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

impl MsvSolution {
    pub fn regime(&self) -> &RegimeConfig {
        &self.regimes[0]
    }

    /// True when the solution takes the same value in every state.
    pub fn is_state_invariant(&self, tol: f64) -> bool {
        let first = self.y.column(0);
        self.y.column_iter().all(|c| (c - first).amax() < tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegimeOutcome {
    Solution(MsvSolution),
    /// The linear solution contradicts `J`; `violations` lists
    /// `(constraint, state)` pairs.
    Infeasible {
        y: DMatrix<f64>,
        violations: Vec<(usize, usize)>,
    },
    /// `A_J` is numerically singular.
    Degenerate {
        det: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsvEnumeration {
    pub solutions: Vec<MsvSolution>,
    pub attempted: u64,
    pub degenerate: Vec<RegimeConfig>,
}

impl MsvEnumeration {
    pub fn count(&self) -> usize {
        self.solutions.len()
    }
}

pub(crate) fn margin_violations(
    cfg: &RegimeConfig,
    margins: &DMatrix<f64>,
    tol: f64,
) -> (Vec<(usize, usize)>, bool) {
    let mut violations = Vec::new();
    let mut boundary = false;
    for j in 0..margins.nrows() {
        for i in 0..margins.ncols() {
            let v = margins[(j, i)];
            if v.abs() < tol {
                boundary = true;
            } else if (v > 0.0) != cfg.is_slack(j, i) {
                violations.push((j, i));
            }
        }
    }
    (violations, boundary)
}

fn residual_of<S: RegimeSystem + ?Sized>(
    sys: &S,
    cfg: &RegimeConfig,
    y: &DMatrix<f64>,
) -> (f64, f64) {
    let rhs = sys.rhs(cfg);
    let v = DVector::from_column_slice(y.as_slice());
    let r = (sys.matrix(cfg) * v - &rhs).amax();
    (r, 1.0 + rhs.amax())
}

/// Solve `A_J vec(Y) = rhs_J` and check the implied margins against `J`.
pub fn solve_regime<S: RegimeSystem + ?Sized>(
    sys: &S,
    cfg: &RegimeConfig,
    opts: &MsvOptions,
) -> Result<RegimeOutcome> {
    check_config(sys, cfg)?;
    let a = sys.matrix(cfg);
    let rhs = sys.rhs(cfg);
    let threshold = det_threshold(&a, opts.det_tol);
    let lu = a.clone().lu();
    let det = lu.determinant();
    if is_degenerate(det, threshold) {
        return Ok(RegimeOutcome::Degenerate { det });
    }
    let v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("A_J for {cfg}")))?;
    let y = DMatrix::from_column_slice(sys.n(), sys.k(), v.as_slice());
    let residual_norm = (&a * &v - &rhs).amax();
    if residual_norm > opts.residual_tol * (1.0 + rhs.amax()) {
        return Ok(RegimeOutcome::Degenerate { det });
    }
    let margins = sys.margins(&y);
    let (violations, boundary_flag) = margin_violations(cfg, &margins, opts.margin_tol);
    if !violations.is_empty() {
        return Ok(RegimeOutcome::Infeasible { y, violations });
    }
    Ok(RegimeOutcome::Solution(MsvSolution {
        y,
        regimes: vec![cfg.clone()],
        residual_norm,
        margins,
        boundary_flag,
    }))
}

fn dedupe(mut found: Vec<MsvSolution>, tol: f64) -> Vec<MsvSolution> {
    found.sort_by(|a, b| a.regime().cmp(b.regime()));
    let mut out: Vec<MsvSolution> = Vec::with_capacity(found.len());
    for s in found {
        if let Some(prev) = out.iter_mut().find(|p| (&p.y - &s.y).amax() < tol) {
            prev.regimes.extend(s.regimes);
            prev.boundary_flag |= s.boundary_flag;
        } else {
            out.push(s);
        }
    }
    out
}

fn count_configs(k: usize, m: usize, cap: u64) -> Result<u64> {
    let bits = (k * m) as u32;
    let required = 1u128 << bits.min(127);
    if bits >= 64 || required > cap as u128 {
        return Err(Error::CapExceeded { required, cap });
    }
    Ok(required as u64)
}

/// Try every regime configuration and keep the verified solutions, sorted by
/// regime bitstring.
pub fn enumerate_msv<S: RegimeSystem + ?Sized>(
    sys: &S,
    opts: &MsvOptions,
) -> Result<MsvEnumeration> {
    let (k, m) = (sys.k(), sys.m());
    let total = count_configs(k, m, opts.cap)?;
    let chunk = 1u64 << 10;
    let parts = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| -> Result<(Vec<MsvSolution>, Vec<RegimeConfig>)> {
            let mut sols = Vec::new();
            let mut degenerate = Vec::new();
            for idx in c * chunk..((c + 1) * chunk).min(total) {
                let cfg = RegimeConfig::from_index(idx, k, m);
                match solve_regime(sys, &cfg, opts)? {
                    RegimeOutcome::Solution(s) => sols.push(s),
                    RegimeOutcome::Degenerate { .. } => degenerate.push(cfg),
                    RegimeOutcome::Infeasible { .. } => {}
                }
            }
            Ok((sols, degenerate))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut solutions = Vec::new();
    let mut degenerate = Vec::new();
    for (s, d) in parts {
        solutions.extend(s);
        degenerate.extend(d);
    }
    degenerate.sort();
    Ok(MsvEnumeration {
        solutions: dedupe(solutions, opts.dedupe_tol),
        attempted: total,
        degenerate,
    })
}

/// [`enumerate_msv`] for the reduced NK system, screening configurations in
/// Gray-code order with rank-one inverse updates. Candidates passing the
/// screen are re-solved and verified exactly.
pub fn enumerate_msv_fast(sys: &ReducedNk, opts: &MsvOptions) -> Result<MsvEnumeration> {
    let k = sys.k();
    let total = count_configs(k, 1, opts.cap)?;
    let inner = inner_bits(k);
    let base_rhs: DVector<f64> = sys.eps() * sys.lambda;
    let bind = sys.binding_rhs();
    let screen_tol = 1e-7 * (1.0 + sys.mu.abs());
    let parts = (0..total >> inner)
        .into_par_iter()
        .map(|c| -> Result<(Vec<MsvSolution>, Vec<RegimeConfig>)> {
            let mut state = GrayState::new(sys.q(), sys.slack_addon(), c << inner);
            let mut sols = Vec::new();
            let mut degenerate = Vec::new();
            let mut visit = |st: &GrayState| -> Result<()> {
                let mask = st.mask();
                if is_degenerate(st.det, st.det_threshold(opts.det_tol)) {
                    degenerate.push(RegimeConfig::from_index(mask, k, 1));
                    return Ok(());
                }
                let candidate = match &st.inv {
                    Some(inv) => {
                        let rhs = DVector::from_fn(k, |i, _| {
                            base_rhs[i] + if (mask >> i) & 1 == 1 { 0.0 } else { bind }
                        });
                        let pi = inv * rhs;
                        (0..k).all(|i| {
                            let mg = sys.psi * pi[i] + sys.mu;
                            mg.abs() < screen_tol || (mg > 0.0) == ((mask >> i) & 1 == 1)
                        })
                    }
                    None => true,
                };
                if candidate {
                    let cfg = RegimeConfig::from_index(mask, k, 1);
                    match solve_regime(sys, &cfg, opts)? {
                        RegimeOutcome::Solution(s) => sols.push(s),
                        RegimeOutcome::Degenerate { .. } => degenerate.push(cfg),
                        RegimeOutcome::Infeasible { .. } => {}
                    }
                }
                Ok(())
            };
            visit(&state)?;
            for bit in gray_flips(inner) {
                state.flip(bit);
                visit(&state)?;
            }
            Ok((sols, degenerate))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut solutions = Vec::new();
    let mut degenerate = Vec::new();
    for (s, d) in parts {
        solutions.extend(s);
        degenerate.extend(d);
    }
    degenerate.sort();
    Ok(MsvEnumeration {
        solutions: dedupe(solutions, opts.dedupe_tol),
        attempted: total,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub passes: bool,
    pub residual_norm: f64,
    pub tolerance: f64,
    pub implied: RegimeConfig,
    #[serde(serialize_with = "ser_matrix")]
    pub margins: DMatrix<f64>,
    pub boundary_flag: bool,
}

/// Residual and inequality audit of a candidate `Y` (`n × k`).
pub fn verify_solution<S: RegimeSystem + ?Sized>(
    sys: &S,
    y: &DMatrix<f64>,
    opts: &MsvOptions,
) -> Result<Verification> {
    if y.nrows() != sys.n() || y.ncols() != sys.k() {
        return Err(Error::Dimension {
            field: "Y".into(),
            expected: format!("{}x{}", sys.n(), sys.k()),
            found: format!("{}x{}", y.nrows(), y.ncols()),
        });
    }
    let implied = implied_config(sys, y);
    let margins = sys.margins(y);
    let boundary_flag = margins.iter().any(|v| v.abs() < opts.margin_tol);
    let (residual_norm, scale) = residual_of(sys, &implied, y);
    let tolerance = opts.residual_tol * scale;
    Ok(Verification {
        passes: residual_norm < tolerance,
        residual_norm,
        tolerance,
        implied,
        margins,
        boundary_flag,
    })
}

/// Chain whose support repeats the constant `fundamental` vector and appends
/// one sunspot coordinate equal to the state index.
pub fn sunspot_chain(fundamental: &[f64], kernel: DMatrix<f64>) -> Result<MarkovChain> {
    let k = kernel.nrows();
    let n_x = fundamental.len() + 1;
    let support = DMatrix::from_fn(n_x, k, |r, i| {
        if r < fundamental.len() {
            fundamental[r]
        } else {
            i as f64
        }
    });
    MarkovChain::new(support, kernel)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SunspotSolution {
    pub solution: MsvSolution,
    /// Same value in every sunspot state.
    pub sunspotless: bool,
}

/// Enumerate MSV solutions when the only varying exogenous coordinates are
/// extrinsic, i.e. carry zero coefficients in the model.
pub fn sunspot_enumerate(
    model: &CanonicalModel,
    chain: &MarkovChain,
    opts: &MsvOptions,
) -> Result<Vec<SunspotSolution>> {
    let support = chain.support();
    for r in 0..support.nrows() {
        let row = support.row(r);
        let varies = row.iter().any(|v| (v - row[0]).abs() > 0.0);
        if varies && !model.exogenous_unused(r) {
            return Err(Error::Validation(format!(
                "exogenous coordinate {r} varies across states but enters the model"
            )));
        }
    }
    let sys = CanonicalSystem::new(model, chain)?;
    let found = enumerate_msv(&sys, opts)?;
    Ok(found
        .solutions
        .into_iter()
        .map(|s| {
            let sunspotless = s.is_state_invariant(opts.dedupe_tol);
            SunspotSolution {
                solution: s,
                sunspotless,
            }
        })
        .collect())
}

/// Largest absolute deviation of `(x_i, y_i)` from their least-squares line.
pub fn affine_fit_residual(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).abs())
        .fold(0.0, f64::max)
}

/// One row per (solution, state): id, regime bits, shock values, solution
/// values, margins.
pub fn solutions_csv(support: &DMatrix<f64>, solutions: &[MsvSolution]) -> String {
    let mut out = String::from("solution_id,regime_bits,state_index");
    let (n, m) = solutions
        .first()
        .map(|s| (s.y.nrows(), s.margins.nrows()))
        .unwrap_or((0, 0));
    for r in 0..support.nrows() {
        write!(out, ",x{}", r + 1).unwrap();
    }
    for r in 0..n {
        write!(out, ",y{}", r + 1).unwrap();
    }
    for r in 0..m {
        write!(out, ",margin{}", r + 1).unwrap();
    }
    out.push('\n');
    for (id, s) in solutions.iter().enumerate() {
        let bits = s
            .regimes
            .iter()
            .map(|r| r.bitstring())
            .collect::<Vec<_>>()
            .join(";");
        for i in 0..s.y.ncols() {
            write!(out, "{id},{bits},{i}").unwrap();
            for v in support
                .column(i)
                .iter()
                .chain(s.y.column(i).iter())
                .chain(s.margins.column(i).iter())
            {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}
