//! Analytical cutoffs, support restrictions and solutions for the two-state
//! examples. Used as oracles for the numerical routines and as calculators.
//!
//! Shock bounds are stated on `-r_L`, the size of the negative natural-rate
//! shock in the transitory state.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::RegimeConfig;

const STABLE_RADIUS: f64 = 1.0 - 1e-10;
const REAL_TOL: f64 = 1e-10;

/// NK parameters shared by the NK calculators. Fields a calculator does not
/// use are ignored by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NkParams {
    pub beta: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub psi_x: f64,
    pub phi: f64,
    pub gamma: f64,
    pub mu: f64,
    pub p: f64,
    pub q: f64,
    pub r_l: f64,
    pub xi: f64,
}

impl Default for NkParams {
    /// Confidence-driven calibration of Mertens and Ravn (2014), `psi = 1.5`.
    fn default() -> Self {
        Self {
            beta: 0.99,
            sigma: 1.0,
            lambda: 0.4479,
            psi: 1.5,
            psi_x: 0.0,
            phi: 0.0,
            gamma: 0.0,
            mu: 0.01,
            p: 0.7,
            q: 1.0,
            r_l: 0.0,
            xi: 0.0,
        }
    }
}

impl NkParams {
    /// Sets `mu = log(r pi_star)`.
    pub fn with_r_pi_star(mut self, r: f64, pi_star: f64) -> Result<Self> {
        if !(r > 0.0 && pi_star > 0.0) {
            return Err(Error::Domain(format!(
                "r = {r} and pi_star = {pi_star} must be positive"
            )));
        }
        self.mu = (r * pi_star).ln();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Domain(format!(
                "beta = {} must lie in (0, 1)",
                self.beta
            )));
        }
        if !(self.sigma > 0.0 && self.lambda > 0.0) {
            return Err(Error::Domain(format!(
                "sigma = {} and lambda = {} must be positive",
                self.sigma, self.lambda
            )));
        }
        for (name, v) in [("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        let finite = [
            self.psi, self.psi_x, self.phi, self.gamma, self.mu, self.r_l, self.xi,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Forward-looking NK calibration with an absorbing demand shock whose
/// transitory state persists with probability `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub name: &'static str,
    pub beta: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
}

impl Calibration {
    /// NK parameters at policy coefficient `psi`, with `p = rho`.
    pub fn nk_params(&self, psi: f64) -> NkParams {
        NkParams {
            beta: self.beta,
            sigma: self.sigma,
            lambda: self.lambda,
            mu: self.mu,
            p: self.rho,
            psi,
            ..NkParams::default()
        }
    }
}

const fn calib(
    name: &'static str,
    beta: f64,
    sigma: f64,
    lambda: f64,
    mu: f64,
    rho: f64,
) -> Calibration {
    Calibration {
        name,
        beta,
        sigma,
        lambda,
        mu,
        rho,
    }
}

/// Mertens-Ravn (fundamental and confidence driven), Bilbiie (two slopes)
/// and Eggertsson-Singh (Great Depression, Great Recession).
pub const CALIBRATIONS: [Calibration; 6] = [
    calib("mr2014fd", 0.99, 1.0, 0.4479, 0.01, 0.4),
    calib("mr2014cd", 0.99, 1.0, 0.4479, 0.01, 0.7),
    calib("bilbiie-low", 0.99, 1.0, 0.02, 0.01, 0.8),
    calib("bilbiie-high", 0.99, 1.0, 0.2, 0.01, 0.8),
    calib("es2019gd", 0.9969, 0.6868, 0.0091, 0.0031, 0.9035),
    calib("es2019gr", 0.997, 0.6202, 0.0079, 0.003, 0.86),
];

pub fn calibration(name: &str) -> Result<Calibration> {
    CALIBRATIONS
        .iter()
        .copied()
        .find(|c| c.name == name)
        .ok_or_else(|| {
            let known: Vec<&str> = CALIBRATIONS.iter().map(|c| c.name).collect();
            Error::Domain(format!(
                "unknown calibration `{name}` (known: {})",
                known.join(", ")
            ))
        })
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("p = {p} must lie in (0, 1]")))
    }
}

/// `(1-p)(1-p beta) / (p sigma lambda)`: relative slope of the AS and
/// constrained AD curves in the transitory state.
pub fn theta(p: f64, beta: f64, sigma: f64, lambda: f64) -> Result<f64> {
    check_p(p)?;
    Ok((1.0 - p) * (1.0 - p * beta) / (p * sigma * lambda))
}

/// Two-state coherency cutoff on `psi` for persistence probabilities `p`, `q`.
pub fn psi_cutoff(p: f64, q: f64, beta: f64, sigma: f64, lambda: f64) -> f64 {
    let sl = sigma * lambda;
    p + q - 1.0 - (2.0 - p - q) * (1.0 - p * beta - q * beta + beta) / sl
}

/// Persistence at which `theta = 1`.
pub fn ns_p_l_star(beta: f64, sigma: f64, lambda: f64) -> f64 {
    let s = 1.0 + beta + sigma * lambda;
    // Rationalised root; stays accurate as beta -> 0.
    2.0 / (s + (s * s - 4.0 * beta).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportCase {
    /// `theta > 1`.
    ThetaAboveOne,
    /// `theta <= 1`.
    ThetaAtMostOne,
}

impl SupportCase {
    fn of(theta: f64) -> Self {
        if theta > 1.0 {
            Self::ThetaAboveOne
        } else {
            Self::ThetaAtMostOne
        }
    }
}

/// Existence region for an MSV solution under an absorbing-state shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportRestriction {
    pub case: SupportCase,
    pub theta: f64,
    /// `r pi_star >= 1`, i.e. `mu >= 0`.
    pub first_condition: bool,
    /// Largest admissible `-r_L`, if bounded above.
    pub upper: Option<f64>,
    /// Smallest admissible `-r_L`, if bounded below.
    pub lower: Option<f64>,
}

impl SupportRestriction {
    pub fn admits(&self, minus_r_l: f64) -> bool {
        self.first_condition
            && self.upper.is_none_or(|u| minus_r_l <= u)
            && self.lower.is_none_or(|l| minus_r_l >= l)
    }

    /// Signed distance to the nearest active shock bound (positive inside).
    pub fn margin(&self, minus_r_l: f64) -> Option<f64> {
        match (self.upper, self.lower) {
            (Some(u), _) => Some(u - minus_r_l),
            (None, Some(l)) => Some(minus_r_l - l),
            (None, None) => None,
        }
    }
}

/// Shock restriction for the forward-looking NK model with a standard
/// Taylor rule.
pub fn nk_tr_support(par: &NkParams) -> Result<SupportRestriction> {
    par.validate()?;
    let th = theta(par.p, par.beta, par.sigma, par.lambda)?;
    let (psi, p, mu) = (par.psi, par.p, par.mu);
    let case = SupportCase::of(th);
    Ok(SupportRestriction {
        case,
        theta: th,
        first_condition: mu >= 0.0,
        upper: (case == SupportCase::ThetaAtMostOne)
            .then(|| mu * ((psi - p) / (psi * p) + th / psi)),
        lower: None,
    })
}

/// Shock restriction under optimal discretionary policy.
pub fn nk_op_support(par: &NkParams) -> Result<SupportRestriction> {
    par.validate()?;
    let th = theta(par.p, par.beta, par.sigma, par.lambda)?;
    let case = SupportCase::of(th);
    Ok(SupportRestriction {
        case,
        theta: th,
        first_condition: par.mu >= 0.0,
        upper: (case == SupportCase::ThetaAtMostOne).then(|| par.mu / par.p),
        lower: None,
    })
}

/// Shock bounds for the nonlinear and linearised ACS model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcsBounds {
    /// `r^{-1} <= pi_star`.
    pub first_condition: bool,
    pub mu: f64,
    pub pi_bar: f64,
    /// `None` when the first condition fails.
    pub nonlinear_bound: Option<f64>,
    pub linear_bound: Option<f64>,
}

/// Upper bounds on `-r_L`. `pi_bar <= pi_star` is the inflation rate reached
/// after the transitory state ends; the nonlinear bound increases in
/// `pi_bar`, and the default `pi_bar = pi_star` gives its largest value.
pub fn acs_support_bounds(
    psi: f64,
    p: f64,
    r: f64,
    pi_star: f64,
    pi_bar: Option<f64>,
) -> Result<AcsBounds> {
    check_p(p)?;
    if !(psi > 0.0 && r > 0.0 && pi_star > 0.0) {
        return Err(Error::Domain(format!(
            "psi = {psi}, r = {r}, pi_star = {pi_star} must be positive"
        )));
    }
    let pi_bar = pi_bar.unwrap_or(pi_star);
    let mu = (r * pi_star).ln();
    let first_condition = mu >= 0.0;
    let nonlinear = (r * pi_bar - 1.0 + p) / p;
    Ok(AcsBounds {
        first_condition,
        mu,
        pi_bar,
        nonlinear_bound: (first_condition && nonlinear > 0.0)
            .then(|| nonlinear.ln() - (pi_bar / pi_star).ln() - mu / psi),
        linear_bound: first_condition.then(|| mu * (psi - p) / (psi * p)),
    })
}

/// Upper bound on the policy shock `nu_t` for the Taylor rule with a
/// forward AR(1) discount-factor shock.
pub fn forward_tr_support(
    psi: f64,
    rho: f64,
    sigma: f64,
    m_lag: f64,
    eps: f64,
    r: f64,
    pi_star: f64,
) -> f64 {
    -psi * rho * sigma * eps - psi * rho * rho * m_lag - (1.0 - psi) * (r * pi_star).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UmpCase {
    High,
    Mid,
    Low,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UmpClassification {
    pub case: UmpCase,
    /// Cutoff `psi_{p,1}` of the model without unconventional policy.
    pub psi_hat: f64,
}

impl UmpClassification {
    pub fn coherent(&self) -> bool {
        self.case != UmpCase::None
    }
}

/// Which branch of the two-state coherency condition with unconventional
/// policy of intensity `xi >= 0` holds. `xi = 0` is read as the limit.
pub fn ump_coherency_case(
    psi: f64,
    xi: f64,
    p: f64,
    beta: f64,
    sigma: f64,
    lambda: f64,
) -> Result<UmpClassification> {
    check_p(p)?;
    if !(xi >= 0.0) {
        return Err(Error::Domain(format!("xi = {xi} must be non-negative")));
    }
    let psi_hat = psi_cutoff(p, 1.0, beta, sigma, lambda);
    let inv_xi = 1.0 / xi;
    let scaled = if xi == 0.0 {
        psi_hat.signum() * f64::INFINITY
    } else {
        psi_hat / xi
    };
    let case = if psi > inv_xi.max(1.0) {
        UmpCase::High
    } else if psi_hat.max(scaled) < psi && psi < inv_xi.min(1.0) {
        UmpCase::Mid
    } else if psi < psi_hat.min(scaled) {
        UmpCase::Low
    } else {
        UmpCase::None
    };
    Ok(UmpClassification { case, psi_hat })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcsStrCondition {
    pub coherent: bool,
    /// `mu (psi + phi - p) / (psi p)`: upper bound on `-r_L` when incoherent.
    pub support_bound: f64,
}

/// ACS model with interest-rate smoothing `phi`.
pub fn acs_str_condition(psi: f64, phi: f64, p: f64, mu: f64) -> Result<AcsStrCondition> {
    check_p(p)?;
    if !(psi > 0.0) {
        return Err(Error::Domain(format!("psi = {psi} must be positive")));
    }
    Ok(AcsStrCondition {
        coherent: psi + phi < p,
        support_bound: mu * (psi + phi - p) / (psi * p),
    })
}

/// Coefficients of the cubic in `gamma_R` for the stable manifold
/// of the inertial Taylor rule model in the unconstrained regime, highest
/// degree first.
///
/// With `pi = g_pi R_{-1}`, `x = g_x R_{-1}`, `R = g_R R_{-1}`, the rule gives
/// `g_R = phi + psi g_pi`, the Phillips curve `g_pi (1 - beta g_R) = lambda g_x`
/// and the Euler equation `g_x (1 - g_R) = -sigma g_R (1 - g_pi)`. Eliminating
/// `g_pi` and `g_x` leaves
/// `beta g^3 - (1 + beta + beta phi + sigma lambda) g^2
///  + (1 + phi + beta phi + sigma lambda (psi + phi)) g - phi = 0`.
pub fn itr_cubic(beta: f64, sigma: f64, lambda: f64, psi: f64, phi: f64) -> [f64; 4] {
    let sl = sigma * lambda;
    [
        beta,
        -(1.0 + beta + beta * phi + sl),
        1.0 + phi + beta * phi + sl * (psi + phi),
        -phi,
    ]
}

/// Complex roots `(re, im)` of `c[0] x^3 + c[1] x^2 + c[2] x + c[3]`.
pub fn cubic_roots(c: [f64; 4]) -> Result<Vec<(f64, f64)>> {
    if c[0] == 0.0 || !c.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain(format!("not a cubic: {c:?}")));
    }
    let companion = DMatrix::from_row_slice(
        3,
        3,
        &[
            0.0,
            0.0,
            -c[3] / c[0],
            1.0,
            0.0,
            -c[2] / c[0],
            0.0,
            1.0,
            -c[1] / c[0],
        ],
    );
    Ok(companion
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect())
}

fn polish(c: [f64; 4], mut x: f64) -> f64 {
    for _ in 0..4 {
        let f = ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
        let df = (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2];
        if df == 0.0 {
            break;
        }
        x -= f / df;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NkItrBound {
    pub gamma_r: f64,
    pub gamma_pi: f64,
    pub gamma_x: f64,
    /// `-r_bar_L`.
    pub bound: f64,
    pub restriction: SupportRestriction,
}

/// Stable-manifold slopes and the shock bound for a ZIR-transitory,
/// PIR-absorbing solution of the inertial Taylor rule model. For
/// `theta <= 1` the bound is an upper bound on `-r_L`, otherwise a lower one.
pub fn nk_itr_bound(par: &NkParams) -> Result<NkItrBound> {
    par.validate()?;
    if par.psi_x != 0.0 {
        return Err(Error::Unsupported(
            "the inertial bound assumes psi_x = 0".into(),
        ));
    }
    if !(par.psi > 0.0) {
        return Err(Error::Domain(format!("psi = {} must be positive", par.psi)));
    }
    let NkParams {
        beta,
        sigma,
        lambda,
        psi,
        phi,
        mu,
        p,
        ..
    } = *par;
    let c = itr_cubic(beta, sigma, lambda, psi, phi);
    let inside: Vec<(f64, f64)> = cubic_roots(c)?
        .into_iter()
        .filter(|(re, im)| re.hypot(*im) < STABLE_RADIUS)
        .collect();
    let gamma_r = match inside.as_slice() {
        [(re, im)] if im.abs() < REAL_TOL => polish(c, *re),
        _ => {
            return Err(Error::IndeterminateManifold(format!(
                "{} roots inside the unit circle: {inside:?}",
                inside.len()
            )))
        }
    };
    let gamma_pi = (gamma_r - phi) / psi;
    let gamma_x = gamma_pi * (1.0 - beta * gamma_r) / lambda;
    let th = theta(p, beta, sigma, lambda)?;
    let bound = mu
        * ((psi - p) / (psi * p) + th / psi + phi / psi * (1.0 - th)
            - (1.0 - p) * (lambda * gamma_x + gamma_pi * (beta * (1.0 - p) + lambda * sigma))
                / (lambda * sigma * p));
    let case = SupportCase::of(th);
    let restriction = SupportRestriction {
        case,
        theta: th,
        first_condition: mu >= 0.0,
        upper: (case == SupportCase::ThetaAtMostOne).then_some(bound),
        lower: (case == SupportCase::ThetaAboveOne).then_some(bound),
    };
    Ok(NkItrBound {
        gamma_r,
        gamma_pi,
        gamma_x,
        bound,
        restriction,
    })
}

/// One candidate of the linearised ACS model under an absorbing shock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowCandidate {
    /// `transitory,absorbing` regimes, e.g. `ZIR,PIR`.
    pub label: &'static str,
    pub regime: RegimeConfig,
    /// Inflation in the transitory and absorbing states.
    pub pi: [f64; 2],
    /// The candidate is a solution for `-r_L` in `(0, window_upper)`.
    pub window_upper: f64,
    pub valid: bool,
}

/// The four candidate solutions, ordered by regime bitstring.
pub fn window_solutions(psi: f64, p: f64, mu: f64, r_l: f64) -> Result<Vec<WindowCandidate>> {
    check_p(p)?;
    if !(psi > 1.0 && mu > 0.0) {
        return Err(Error::Domain(format!(
            "expects psi = {psi} > 1 and mu = {mu} > 0"
        )));
    }
    let narrow = mu * (psi - 1.0) / psi;
    let wide = mu * (psi - p) / (psi * p);
    let cand = |label, slack: &[usize], pi, window_upper: f64| WindowCandidate {
        label,
        regime: RegimeConfig::from_slack_states(2, slack).expect("two states"),
        pi,
        window_upper,
        valid: -r_l > 0.0 && -r_l < window_upper,
    };
    Ok(vec![
        cand("ZIR,ZIR", &[], [-r_l - mu, -mu], narrow),
        cand(
            "PIR,ZIR",
            &[0],
            [(p * r_l - (1.0 - p) * mu) / (psi - p), -mu],
            narrow,
        ),
        cand("ZIR,PIR", &[1], [-r_l - mu / p, 0.0], wide),
        cand("PIR,PIR", &[0, 1], [r_l * p / (psi - p), 0.0], wide),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SunspotCandidate {
    pub label: &'static str,
    pub regime: RegimeConfig,
    pub pi: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SunspotClosedForms {
    pub a_p: f64,
    pub a_q: f64,
    /// `a_p + a_q + sigma lambda`.
    pub identity_lhs: f64,
    /// `sigma lambda psi_{p,q}`.
    pub identity_rhs: f64,
    /// `J1..J4`: PIR-PIR, ZIR-PIR, PIR-ZIR, ZIR-ZIR.
    pub candidates: Vec<SunspotCandidate>,
}

/// Candidate inflation vectors for the NK model driven by a two-state
/// sunspot with persistence probabilities `p` and `q`.
pub fn sunspot_closed_forms(
    psi: f64,
    p: f64,
    q: f64,
    mu: f64,
    beta: f64,
    sigma: f64,
    lambda: f64,
) -> Result<SunspotClosedForms> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} must lie in [0, 1]")));
        }
    }
    let sl = sigma * lambda;
    let common = beta * (1.0 - p - q) + sl + 1.0;
    let (a_p, a_q) = ((p - 1.0) * common, (q - 1.0) * common);
    let cut = psi_cutoff(p, q, beta, sigma, lambda);
    let d2 = psi * a_p + sl * (psi - cut);
    let d3 = psi * a_q + sl * (psi - cut);
    let cand = |label, slack: &[usize], pi| SunspotCandidate {
        label,
        regime: RegimeConfig::from_slack_states(2, slack).expect("two states"),
        pi,
    };
    Ok(SunspotClosedForms {
        a_p,
        a_q,
        identity_lhs: a_p + a_q + sl,
        identity_rhs: sl * cut,
        candidates: vec![
            cand("PIR,PIR", &[0, 1], [0.0, 0.0]),
            cand(
                "ZIR,PIR",
                &[1],
                [mu * (a_q + sl - sl * psi) / d2, mu * a_q / d2],
            ),
            cand(
                "PIR,ZIR",
                &[0],
                [mu * a_p / d3, mu * (a_p + sl - sl * psi) / d3],
            ),
            cand("ZIR,ZIR", &[], [-mu, -mu]),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(1.0, 0.99, 1.0, 0.4479).unwrap(), 0.0);
        let t = theta(0.85, 0.99, 1.0, 0.4479).unwrap();
        assert!(close(
            t,
            0.15 * (1.0 - 0.85 * 0.99) / (0.85 * 0.4479),
            1e-15
        ));
        assert!(theta(0.0, 0.99, 1.0, 1.0).is_err());
    }

    #[test]
    fn p_l_star_sets_theta_to_one() {
        for (b, s, l) in [
            (0.99, 1.0, 0.4479),
            (0.5, 2.0, 0.1),
            (0.999, 0.6868, 0.0091),
        ] {
            let p = ns_p_l_star(b, s, l);
            assert!(p > 0.0 && p < 1.0);
            assert!(close(theta(p, b, s, l).unwrap(), 1.0, 1e-12));
        }
        assert!(close(ns_p_l_star(1e-8, 1.0, 0.4479), 1.0 / 1.4479, 1e-7));
    }

    #[test]
    fn calibration_cutoffs() {
        assert!(close(
            psi_cutoff(0.85, 0.85, 0.99, 1.0, 0.4479),
            0.494,
            5e-4
        ));
        assert!(close(psi_cutoff(0.9, 0.9, 0.99, 1.0, 0.2), 0.592, 5e-4));
        let (p, b, sl) = (0.8, 0.99, 0.3);
        assert!(close(
            psi_cutoff(p, 1.0, b, 1.0, sl),
            p - (1.0 - p) * (1.0 - p * b) / sl,
            1e-15
        ));
    }

    #[test]
    fn acs_bounds() {
        let b = acs_support_bounds(1.5, 0.8, 1.0, 1.0, None).unwrap();
        assert_eq!((b.nonlinear_bound, b.linear_bound), (Some(0.0), Some(0.0)));
        let mu: f64 = 0.01;
        let b = acs_support_bounds(1.5, 0.8, mu.exp(), 1.0, None).unwrap();
        assert!(close(b.linear_bound.unwrap(), 0.01 * 0.7 / 1.2, 1e-15));
        let b = acs_support_bounds(1.5, 0.8, 0.99, 1.0, None).unwrap();
        assert!(!b.first_condition && b.nonlinear_bound.is_none());
        // Both bounds agree to first order around r pi_star = 1.
        let eps = 1e-6;
        let b = acs_support_bounds(1.5, 0.8, 1.0 + eps, 1.0, None).unwrap();
        assert!((b.nonlinear_bound.unwrap() - b.linear_bound.unwrap()).abs() < 10.0 * eps * eps);
    }

    #[test]
    fn nk_tr_cases() {
        let th_half = NkParams {
            p: 0.8,
            psi: 1.5,
            mu: 0.01,
            ..Default::default()
        };
        let th = theta(0.8, 0.99, 1.0, 0.4479).unwrap();
        let r = nk_tr_support(&th_half).unwrap();
        assert_eq!(r.case, SupportCase::ThetaAtMostOne);
        assert!(close(
            r.upper.unwrap(),
            0.01 * (0.7 / 1.2 + th / 1.5),
            1e-15
        ));
        let steep = NkParams {
            p: 0.4,
            ..Default::default()
        };
        let r = nk_tr_support(&steep).unwrap();
        assert_eq!(r.case, SupportCase::ThetaAboveOne);
        assert!(r.upper.is_none() && r.admits(1.0));
        let r = nk_tr_support(&NkParams {
            sigma: 1e12,
            p: 0.8,
            ..Default::default()
        })
        .unwrap();
        assert!(close(r.upper.unwrap(), 0.01 * 0.7 / 1.2, 1e-12));
    }

    #[test]
    fn nk_op_cases() {
        let r = nk_op_support(&NkParams {
            p: 0.8,
            lambda: 0.4479,
            ..Default::default()
        })
        .unwrap();
        assert!(close(r.upper.unwrap(), 0.0125, 1e-15));
        let r = nk_op_support(&NkParams {
            p: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.upper, Some(0.01));
        let r = nk_op_support(&NkParams {
            p: 0.3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((r.case, r.upper), (SupportCase::ThetaAboveOne, None));
    }

    #[test]
    fn forward_bound() {
        let v = forward_tr_support(1.0, 0.9, 0.01, 0.02, 1.0, 1.02, 1.0);
        assert!(close(v, -0.9 * 0.01 - 0.81 * 0.02, 1e-15));
        assert!(close(
            forward_tr_support(1.5, 0.0, 0.01, 0.02, 1.0, 1.02, 1.0),
            0.5 * 1.02f64.ln(),
            1e-15
        ));
        let v = forward_tr_support(1.5, 0.9, 0.01, 0.02, 1.0, 1.02, 1.0);
        assert!(close(
            v,
            -1.5 * 0.9 * 0.01 - 1.5 * 0.81 * 0.02 + 0.5 * 1.02f64.ln(),
            1e-15
        ));
    }

    #[test]
    fn ump_cases() {
        let c = ump_coherency_case(1.5, 0.7, 0.8, 0.99, 1.0, 0.4479).unwrap();
        assert_eq!(c.case, UmpCase::High);
        assert_eq!(
            ump_coherency_case(1.5, 0.6, 0.8, 0.99, 1.0, 0.4479)
                .unwrap()
                .case,
            UmpCase::None
        );
        let hat = psi_cutoff(0.8, 1.0, 0.99, 1.0, 0.4479);
        assert!(hat > 0.0);
        let c = ump_coherency_case(0.5 * hat, 0.5, 0.8, 0.99, 1.0, 0.4479).unwrap();
        assert_eq!(c.case, UmpCase::Low);
        for psi in [0.5 * hat, 1.2 * hat, 1.5] {
            let limit = ump_coherency_case(psi, 0.0, 0.8, 0.99, 1.0, 0.4479)
                .unwrap()
                .coherent();
            assert_eq!(limit, psi < hat, "psi = {psi}");
            assert_eq!(
                ump_coherency_case(psi, 1e-9, 0.8, 0.99, 1.0, 0.4479)
                    .unwrap()
                    .coherent(),
                limit
            );
        }
    }

    #[test]
    fn acs_str() {
        let c = acs_str_condition(1.5, 0.3, 0.8, 0.01).unwrap();
        assert!(!c.coherent);
        assert!(close(c.support_bound, 0.01 / 1.2, 1e-15));
        let c0 = acs_str_condition(0.5, 0.0, 0.8, 0.01).unwrap();
        assert!(c0.coherent);
        let c0 = acs_str_condition(1.5, 0.0, 0.8, 0.01).unwrap();
        assert!(close(c0.support_bound, 0.01 * 0.7 / 1.2, 1e-15));
        assert!(!acs_str_condition(1e-6, 0.9, 0.8, 0.01).unwrap().coherent);
    }

    #[test]
    fn itr_manifold_satisfies_unconstrained_system() {
        let par = NkParams {
            psi: 1.5,
            sigma: 1.0,
            beta: 0.99,
            phi: 0.8,
            lambda: 0.02,
            ..Default::default()
        };
        let b = nk_itr_bound(&par).unwrap();
        let (g, gp, gx) = (b.gamma_r, b.gamma_pi, b.gamma_x);
        assert!(g.abs() < 1.0);
        assert!((gp - par.beta * gp * g - par.lambda * gx).abs() < 1e-12);
        assert!((gx * (1.0 - g) + par.sigma * g * (1.0 - gp)).abs() < 1e-12);
        assert!((g - par.phi - par.psi * gp).abs() < 1e-12);
    }

    #[test]
    fn itr_collapses_without_inertia() {
        let par = NkParams {
            p: 0.7,
            ..Default::default()
        };
        let b = nk_itr_bound(&NkParams { phi: 0.0, ..par }).unwrap();
        assert_eq!((b.gamma_r, b.gamma_pi, b.gamma_x), (0.0, 0.0, 0.0));
        let tr = nk_tr_support(&par).unwrap().upper.unwrap();
        assert!(close(b.bound, tr, 1e-15));
        let tiny = nk_itr_bound(&NkParams { phi: 1e-12, ..par }).unwrap();
        assert!(close(tiny.bound, tr, 1e-8));
    }

    #[test]
    fn itr_refuses_nonunique_manifold() {
        // Passive rule: two stable roots.
        let par = NkParams {
            psi: 0.1,
            phi: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            nk_itr_bound(&par),
            Err(Error::IndeterminateManifold(_))
        ));
        let par = NkParams {
            psi_x: 0.5,
            ..Default::default()
        };
        assert!(nk_itr_bound(&par).is_err());
    }

    #[test]
    fn cubic_roots_of_known_polynomial() {
        let mut r: Vec<f64> = cubic_roots([2.0, -12.0, 22.0, -12.0])
            .unwrap()
            .iter()
            .map(|z| z.0)
            .collect();
        r.sort_by(f64::total_cmp);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!(close(*a, b, 1e-10));
        }
    }

    #[test]
    fn window_closed_forms() {
        let (psi, p, mu) = (1.5, 0.8, 2.0 * 1.005f64.ln());
        let c = window_solutions(psi, p, mu, -1e-3).unwrap();
        assert_eq!(
            c.iter().map(|x| x.label).collect::<Vec<_>>(),
            ["ZIR,ZIR", "PIR,ZIR", "ZIR,PIR", "PIR,PIR"]
        );
        assert!(close(c[2].pi[0], 1e-3 - mu / p, 1e-16));
        assert!(close(
            c[1].pi[0],
            (-p * 1e-3 - (1.0 - p) * mu) / (psi - p),
            1e-16
        ));
        assert!(c.iter().all(|x| x.valid));
        let near = window_solutions(psi, p, mu, -1e-14).unwrap();
        assert!(near[3].pi[0].abs() < 1e-13 && near[3].pi[1] == 0.0);
    }

    #[test]
    fn sunspot_forms() {
        let s = sunspot_closed_forms(1.5, 1.0, 1.0, 0.01, 0.99, 1.0, 0.4479).unwrap();
        assert_eq!((s.a_p, s.a_q), (0.0, 0.0));
        assert_eq!(s.candidates[0].pi, [0.0, 0.0]);
        assert_eq!(s.candidates[3].pi, [-0.01, -0.01]);
        for (p, q) in [(0.3, 0.9), (0.95, 0.6), (0.5, 0.5)] {
            let s = sunspot_closed_forms(1.5, p, q, 0.01, 0.99, 2.0, 0.3).unwrap();
            assert!(close(s.identity_lhs, s.identity_rhs, 1e-12));
        }
    }
}
