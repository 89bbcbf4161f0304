use nalgebra::{DMatrix, DVector};

use super::{CanonicalModel, ConstraintSpec, LagBlocks, RegimeBlocks};
use crate::error::{Error, Result};
use crate::markov::MarkovChain;

/// Steady-state log nominal rate `log(r * pi_star)`.
pub fn mu_from(r: f64, pi_star: f64) -> f64 {
    (r * pi_star).ln()
}

fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} must be positive")))
    }
}

fn nk_common(beta: f64, sigma: f64, lambda: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta = {beta} must lie in (0, 1)")));
    }
    positive("sigma", sigma)?;
    positive("lambda", lambda)
}

/// Fisher equation with a contemporaneous Taylor rule and ZLB.
///
/// `Y = pi`, `X = (M, 1)`. Slack: `pi' = psi pi + M'`; binding:
/// `pi' = -mu + M'`.
pub fn build_acs(psi: f64, mu: f64) -> Result<CanonicalModel> {
    positive("psi", psi)?;
    let d = m(1, 2, &[-1.0, 0.0]);
    let regimes = vec![
        RegimeBlocks {
            a: m(1, 1, &[0.0]),
            b: m(1, 1, &[1.0]),
            c: m(1, 2, &[0.0, mu]),
            d: d.clone(),
        },
        RegimeBlocks {
            a: m(1, 1, &[-psi]),
            b: m(1, 1, &[1.0]),
            c: m(1, 2, &[0.0, 0.0]),
            d,
        },
    ];
    let constraint = ConstraintSpec::new(&[psi], &[0.0], &[0.0, mu], &[0.0, 0.0]);
    CanonicalModel::new(1, 2, regimes, vec![constraint], None, 0)
}

/// Three-equation NK model with a Taylor rule. `Y = (pi, x)`,
/// `X = (u, eps, nu, 1)`.
pub fn build_nk_tr(
    beta: f64,
    sigma: f64,
    lambda: f64,
    psi: f64,
    psi_x: f64,
    mu: f64,
) -> Result<CanonicalModel> {
    build_nk_ump(beta, sigma, lambda, psi, psi_x, 0.0, mu)
}

/// NK model where the binding-regime Euler equation still receives a share
/// `xi` of the shadow rate.
///
/// The Euler equation reads `x = x' - sigma (R_eff - pi') + eps` with
/// `R_eff = (1 - xi) R + xi R*` and shadow rate `R* = psi pi + psi_x x + nu`.
/// Slack regime: `R = R*`, so `R_eff = R*`. Binding regime: `R = -mu`, so
///
/// ```text
/// (sigma xi psi) pi + (1 + sigma xi psi_x) x - sigma pi' - x'
///     - eps + sigma xi nu - sigma (1 - xi) mu = 0
/// ```
///
/// With `xi = 0` this is the plain Taylor-rule model; with `xi = 1` both
/// regimes coincide.
pub fn build_nk_ump(
    beta: f64,
    sigma: f64,
    lambda: f64,
    psi: f64,
    psi_x: f64,
    xi: f64,
    mu: f64,
) -> Result<CanonicalModel> {
    nk_common(beta, sigma, lambda)?;
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::Domain(format!("xi = {xi} must lie in [0, 1]")));
    }
    let b = m(2, 2, &[-beta, 0.0, -sigma, -1.0]);
    let d = DMatrix::zeros(2, 4);
    let binding = RegimeBlocks {
        a: m(
            2,
            2,
            &[1.0, -lambda, sigma * xi * psi, 1.0 + sigma * xi * psi_x],
        ),
        b: b.clone(),
        c: m(
            2,
            4,
            &[
                -1.0,
                0.0,
                0.0,
                0.0,
                0.0,
                -1.0,
                sigma * xi,
                -sigma * (1.0 - xi) * mu,
            ],
        ),
        d: d.clone(),
    };
    let slack = RegimeBlocks {
        a: m(2, 2, &[1.0, -lambda, sigma * psi, 1.0 + sigma * psi_x]),
        b,
        c: m(2, 4, &[-1.0, 0.0, 0.0, 0.0, 0.0, -1.0, sigma, 0.0]),
        d,
    };
    let constraint =
        ConstraintSpec::new(&[psi, psi_x], &[0.0, 0.0], &[0.0, 0.0, 1.0, mu], &[0.0; 4]);
    CanonicalModel::new(2, 4, vec![binding, slack], vec![constraint], None, 0)
}

/// NK model under discretionary optimal policy. `Y = (pi, x)`,
/// `X = (u, eps, 1)`.
///
/// The indicator is the Euler-implied rate plus `mu` evaluated at the output
/// gap the targeting rule would deliver, `x = -(lambda / gamma) pi`. It
/// coincides with the Euler-implied rate when slack, and when binding its sign
/// is that of `lambda pi + gamma x`. The Euler-implied rate alone equals
/// `-mu` identically at the floor and cannot reject a binding candidate.
pub fn build_nk_op(
    beta: f64,
    sigma: f64,
    lambda: f64,
    gamma: f64,
    mu: f64,
) -> Result<CanonicalModel> {
    nk_common(beta, sigma, lambda)?;
    positive("gamma", gamma)?;
    let d = DMatrix::zeros(2, 3);
    let binding = RegimeBlocks {
        a: m(2, 2, &[1.0, -lambda, 0.0, 1.0]),
        b: m(2, 2, &[-beta, 0.0, -sigma, -1.0]),
        c: m(2, 3, &[-1.0, 0.0, 0.0, 0.0, -1.0, -sigma * mu]),
        d: d.clone(),
    };
    let slack = RegimeBlocks {
        a: m(2, 2, &[1.0, -lambda, lambda / gamma, 1.0]),
        b: m(2, 2, &[-beta, 0.0, 0.0, 0.0]),
        c: m(2, 3, &[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        d,
    };
    let constraint = ConstraintSpec::new(
        &[lambda / (sigma * gamma), 0.0],
        &[1.0, 1.0 / sigma],
        &[0.0, 1.0 / sigma, mu],
        &[0.0; 3],
    );
    CanonicalModel::new(2, 3, vec![binding, slack], vec![constraint], None, 0)
}

/// NK model with an inertial Taylor rule
/// `R = max(-mu, phi R_{-1} + psi pi + psi_x x + nu)`.
///
/// `Y = (pi, x, R)`, `X = (u, eps, nu, 1)`, lagged state `y = R`. The
/// constraint is the shadow rate plus `mu`, so it carries the lag loading
/// `phi` on `R_{-1}`.
pub fn build_nk_itr(
    beta: f64,
    sigma: f64,
    lambda: f64,
    psi: f64,
    psi_x: f64,
    phi: f64,
    mu: f64,
) -> Result<CanonicalModel> {
    nk_common(beta, sigma, lambda)?;
    if !(0.0..1.0).contains(&phi) {
        return Err(Error::Domain(format!("phi = {phi} must lie in [0, 1)")));
    }
    let b = m(3, 3, &[-beta, 0.0, 0.0, -sigma, -1.0, 0.0, 0.0, 0.0, 0.0]);
    let d = DMatrix::zeros(3, 4);
    let binding = RegimeBlocks {
        a: m(3, 3, &[1.0, -lambda, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        b: b.clone(),
        // Row 3 pins R = -mu.
        c: m(
            3,
            4,
            &[
                -1.0,
                0.0,
                0.0,
                0.0,
                0.0,
                -1.0,
                0.0,
                -sigma * mu,
                0.0,
                0.0,
                0.0,
                mu,
            ],
        ),
        d: d.clone(),
    };
    let slack = RegimeBlocks {
        a: m(
            3,
            3,
            &[1.0, -lambda, 0.0, 0.0, 1.0, sigma, -psi, -psi_x, 1.0],
        ),
        b,
        c: m(
            3,
            4,
            &[
                -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0,
            ],
        ),
        d,
    };
    let g = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
    let h1 = -phi * &g * g.transpose();
    let lag = LagBlocks {
        h: vec![DMatrix::zeros(3, 3), h1],
        g,
    };
    let constraint = ConstraintSpec::new(
        &[psi, psi_x, 0.0],
        &[0.0; 3],
        &[0.0, 0.0, 1.0, mu],
        &[0.0; 4],
    )
    .with_lag(&[0.0, 0.0, phi]);
    CanonicalModel::new(3, 4, vec![binding, slack], vec![constraint], Some(lag), 0)
}

/// Fisher equation with an inertial Taylor rule, written with the lagged
/// rate as a predetermined coordinate: `Y = (R_{-1}, pi)`, `X = (M, 1)`.
pub fn build_acs_str(psi: f64, phi: f64, mu: f64) -> Result<CanonicalModel> {
    positive("psi", psi)?;
    if phi < 0.0 {
        return Err(Error::Domain(format!("phi = {phi} must be non-negative")));
    }
    let b = m(2, 2, &[-1.0, 0.0, 1.0, -1.0]);
    let c = DMatrix::zeros(2, 2);
    let binding = RegimeBlocks {
        a: DMatrix::zeros(2, 2),
        b: b.clone(),
        c: c.clone(),
        d: m(2, 2, &[0.0, -mu, 1.0, 0.0]),
    };
    let slack = RegimeBlocks {
        a: m(2, 2, &[phi, psi, 0.0, 0.0]),
        b,
        c,
        d: m(2, 2, &[0.0, 0.0, 1.0, 0.0]),
    };
    let constraint = ConstraintSpec::new(&[phi, psi], &[0.0, 0.0], &[0.0, mu], &[0.0, 0.0]);
    CanonicalModel::new(2, 2, vec![binding, slack], vec![constraint], None, 1)
}

/// Fisher equation with a floor on both the policy rate and expected
/// inflation: `max(pi', 0) = max(-mu, psi pi) + M'`.
///
/// Constraint 0 is the policy-rate floor, constraint 1 the expectations
/// floor. Regime bit 0 marks the rate slack, bit 1 marks expectations slack.
pub fn build_zlb_expectations(psi: f64, mu: f64) -> Result<CanonicalModel> {
    positive("psi", psi)?;
    let regimes = (0..4)
        .map(|r| {
            let rate_slack = (r & 1) as f64;
            let exp_slack = ((r >> 1) & 1) as f64;
            RegimeBlocks {
                a: m(1, 1, &[-psi * rate_slack]),
                b: m(1, 1, &[exp_slack]),
                c: m(1, 2, &[0.0, (1.0 - rate_slack) * mu]),
                d: m(1, 2, &[-1.0, 0.0]),
            }
        })
        .collect();
    let rate = ConstraintSpec::new(&[psi], &[0.0], &[0.0, mu], &[0.0, 0.0]);
    let expectations = ConstraintSpec::new(&[0.0], &[1.0], &[0.0, 0.0], &[0.0, 0.0]);
    CanonicalModel::new(1, 2, regimes, vec![rate, expectations], None, 0)
}

/// Exogenous chain for the NK builders driven by a scalar discount-factor
/// chain `M`: the demand shock is `eps = -sigma E[M']`, placed in slot 1 of
/// an `n_x`-vector whose last coordinate is the constant.
pub fn nk_demand_chain(m_chain: &MarkovChain, sigma: f64, n_x: usize) -> Result<MarkovChain> {
    positive("sigma", sigma)?;
    if m_chain.n_x() != 1 {
        return Err(Error::Unsupported(format!(
            "expected a scalar chain, got n_x = {}",
            m_chain.n_x()
        )));
    }
    if n_x < 3 {
        return Err(Error::Domain(format!(
            "n_x = {n_x} leaves no room for (u, eps, 1)"
        )));
    }
    let eps = m_chain.expected_support() * -sigma;
    m_chain.with_support(eps)?.lift(n_x, 1, Some(n_x - 1))
}
