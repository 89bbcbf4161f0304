use nalgebra::{DMatrix, DVector};

use super::RegimeConfig;
use crate::canonical::{CanonicalModel, ReducedNk};
use crate::error::{Error, Result};
use crate::markov::MarkovChain;

/// A model stacked over the `k` Markov states: for each regime configuration
/// `J` the equilibrium conditions read `A_J vec(Y) = rhs_J`, with `vec(Y)`
/// stacking the state columns of the `n × k` solution matrix.
pub trait RegimeSystem: Sync {
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    fn m(&self) -> usize;
    fn matrix(&self, cfg: &RegimeConfig) -> DMatrix<f64>;
    fn rhs(&self, cfg: &RegimeConfig) -> DVector<f64>;
    /// Signed constraint slack, `m × k`; positive means slack.
    fn margins(&self, y: &DMatrix<f64>) -> DMatrix<f64>;
    /// Exogenous support, one column per state.
    fn support(&self) -> DMatrix<f64>;

    /// Linear part of the margin map as an `(m k) × (n k)` matrix, row
    /// `j k + i` belonging to constraint `j` in state `i`.
    fn margin_rows(&self) -> DMatrix<f64> {
        let (n, k, m) = (self.n(), self.k(), self.m());
        let base = self.margins(&DMatrix::zeros(n, k));
        let mut out = DMatrix::zeros(m * k, n * k);
        for col in 0..n * k {
            let mut probe = DMatrix::zeros(n, k);
            probe[(col % n, col / n)] = 1.0;
            let diff = self.margins(&probe) - &base;
            for j in 0..m {
                for i in 0..k {
                    out[(j * k + i, col)] = diff[(j, i)];
                }
            }
        }
        out
    }
}

/// Residual of the piecewise-linear map at `y`, with the regime in each
/// state read off the sign of the margins.
pub fn piecewise_residual<S: RegimeSystem + ?Sized>(sys: &S, y: &DMatrix<f64>) -> DVector<f64> {
    let cfg = implied_config(sys, y);
    let v = DVector::from_column_slice(y.as_slice());
    sys.matrix(&cfg) * v - sys.rhs(&cfg)
}

pub fn implied_config<S: RegimeSystem + ?Sized>(sys: &S, y: &DMatrix<f64>) -> RegimeConfig {
    let margins = sys.margins(y);
    let k = sys.k();
    let masks = (0..sys.m())
        .map(|j| {
            (0..k)
                .filter(|&i| margins[(j, i)] > 0.0)
                .fold(0u64, |acc, i| acc | (1 << i))
        })
        .collect();
    RegimeConfig::new(k, masks).expect("masks built within range")
}

/// A lag-free canonical model paired with a Markov chain.
#[derive(Debug, Clone)]
pub struct CanonicalSystem {
    model: CanonicalModel,
    chain: MarkovChain,
    x_next: DMatrix<f64>,
}

impl CanonicalSystem {
    pub fn new(model: &CanonicalModel, chain: &MarkovChain) -> Result<Self> {
        if chain.n_x() != model.n_x() {
            return Err(Error::Dimension {
                field: "chain.support".into(),
                expected: format!("{} rows", model.n_x()),
                found: format!("{} rows", chain.n_x()),
            });
        }
        if chain.k() > 63 {
            return Err(Error::Domain(format!(
                "k = {} exceeds 63 states",
                chain.k()
            )));
        }
        let lagged = model
            .lag()
            .is_some_and(|l| l.h.iter().any(|h| h.iter().any(|v| *v != 0.0)))
            || model
                .constraints()
                .iter()
                .any(|c| c.h.as_ref().is_some_and(|h| h.iter().any(|v| *v != 0.0)));
        if lagged {
            return Err(Error::Unsupported(
                "model has a lagged endogenous state; use the backward solver".into(),
            ));
        }
        if model.predetermined() > 0 {
            return Err(Error::Unsupported(
                "model has predetermined variables; quasi-difference it first".into(),
            ));
        }
        Ok(Self {
            model: model.clone(),
            chain: chain.clone(),
            x_next: chain.expected_support(),
        })
    }

    pub fn model(&self) -> &CanonicalModel {
        &self.model
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }
}

impl RegimeSystem for CanonicalSystem {
    fn n(&self) -> usize {
        self.model.n()
    }

    fn k(&self) -> usize {
        self.chain.k()
    }

    fn m(&self) -> usize {
        self.model.m()
    }

    fn matrix(&self, cfg: &RegimeConfig) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let kernel = self.chain.kernel();
        let mut out = DMatrix::zeros(n * k, n * k);
        for i in 0..k {
            let blk = self.model.regime(cfg.regime_of(i));
            for j in 0..k {
                let kij = kernel[(i, j)];
                let mut view = out.view_mut((i * n, j * n), (n, n));
                if kij != 0.0 {
                    view += &blk.b * kij;
                }
                if i == j {
                    view += &blk.a;
                }
            }
        }
        out
    }

    fn rhs(&self, cfg: &RegimeConfig) -> DVector<f64> {
        let (n, k) = (self.n(), self.k());
        let x = self.chain.support();
        let mut out = DVector::zeros(n * k);
        for i in 0..k {
            let blk = self.model.regime(cfg.regime_of(i));
            let v = -(&blk.c * x.column(i) + &blk.d * self.x_next.column(i));
            out.rows_mut(i * n, n).copy_from(&v);
        }
        out
    }

    fn margins(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let y_next = y * self.chain.kernel().transpose();
        let x = self.chain.support();
        let cons = self.model.constraints();
        DMatrix::from_fn(cons.len(), self.k(), |j, i| {
            let c = &cons[j];
            c.a.dot(&y.column(i))
                + c.b.dot(&y_next.column(i))
                + c.c.dot(&x.column(i))
                + c.d.dot(&self.x_next.column(i))
        })
    }

    fn support(&self) -> DMatrix<f64> {
        self.chain.support().clone()
    }
}

impl RegimeSystem for ReducedNk {
    fn n(&self) -> usize {
        1
    }

    fn k(&self) -> usize {
        ReducedNk::k(self)
    }

    fn m(&self) -> usize {
        1
    }

    fn matrix(&self, cfg: &RegimeConfig) -> DMatrix<f64> {
        let mut a = self.q().clone();
        let add = self.slack_addon();
        for i in cfg.slack_states(0) {
            a[(i, i)] += add;
        }
        a
    }

    fn rhs(&self, cfg: &RegimeConfig) -> DVector<f64> {
        let bind = self.binding_rhs();
        DVector::from_fn(ReducedNk::k(self), |i, _| {
            self.lambda * self.eps()[i] + if cfg.is_slack(0, i) { 0.0 } else { bind }
        })
    }

    fn margins(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        y.map(|pi| self.psi * pi + self.mu)
    }

    fn support(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, ReducedNk::k(self), self.eps().as_slice())
    }
}

pub fn assemble_a(
    model: &CanonicalModel,
    chain: &MarkovChain,
    cfg: &RegimeConfig,
) -> Result<DMatrix<f64>> {
    let sys = CanonicalSystem::new(model, chain)?;
    check_config(&sys, cfg)?;
    Ok(sys.matrix(cfg))
}

pub fn assemble_rhs(
    model: &CanonicalModel,
    chain: &MarkovChain,
    cfg: &RegimeConfig,
) -> Result<DVector<f64>> {
    let sys = CanonicalSystem::new(model, chain)?;
    check_config(&sys, cfg)?;
    Ok(sys.rhs(cfg))
}

pub(crate) fn check_config<S: RegimeSystem + ?Sized>(sys: &S, cfg: &RegimeConfig) -> Result<()> {
    if cfg.k() != sys.k() || cfg.m() != sys.m() {
        return Err(Error::Dimension {
            field: "regime configuration".into(),
            expected: format!("k = {}, m = {}", sys.k(), sys.m()),
            found: format!("k = {}, m = {}", cfg.k(), cfg.m()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{build_acs, build_nk_itr, build_nk_tr, reduce_nk};

    fn acs_chain(p: f64, q: f64) -> MarkovChain {
        MarkovChain::two_state(p, q, &[0.004, 1.0], &[0.0, 1.0]).unwrap()
    }

    #[test]
    fn acs_all_slack_is_kernel_minus_psi() {
        let (psi, p, q) = (1.5, 0.8, 0.9);
        let model = build_acs(psi, 0.01).unwrap();
        let a = assemble_a(&model, &acs_chain(p, q), &RegimeConfig::all_slack(2, 1)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[p - psi, 1.0 - p, 1.0 - q, q - psi]);
        assert!((a - expected).amax() < 1e-15);
    }

    #[test]
    fn acs_all_binding_is_kernel() {
        let model = build_acs(1.5, 0.01).unwrap();
        let chain = acs_chain(0.8, 0.9);
        let a = assemble_a(&model, &chain, &RegimeConfig::all_binding(2, 1)).unwrap();
        assert!((a - chain.kernel()).amax() < 1e-15);
    }

    #[test]
    fn acs_rhs_blocks() {
        let model = build_acs(1.5, 0.01).unwrap();
        let chain = MarkovChain::absorbing(0.8, -0.004)
            .unwrap()
            .lift(2, 0, Some(1))
            .unwrap();
        // State 1 binding, state 2 slack.
        let cfg = RegimeConfig::from_slack_states(2, &[1]).unwrap();
        let rhs = assemble_rhs(&model, &chain, &cfg).unwrap();
        assert!((rhs[0] - (0.8 * 0.004 - 0.01)).abs() < 1e-16);
        assert_eq!(rhs[1], 0.0);
    }

    #[test]
    fn nk_tr_zero_support_slack_rhs_vanishes() {
        let model = build_nk_tr(0.99, 1.0, 0.4479, 1.5, 0.2, 0.01).unwrap();
        let chain =
            MarkovChain::new(DMatrix::zeros(4, 3), DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
        let rhs = assemble_rhs(&model, &chain, &RegimeConfig::all_slack(3, 1)).unwrap();
        assert!(rhs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reduced_matrix_is_q_plus_selection() {
        let chain = MarkovChain::rouwenhorst(0.7, 0.001, 4).unwrap();
        let r = reduce_nk(0.99, 1.0, 0.4479, 1.5, 0.01, &chain).unwrap();
        let cfg = RegimeConfig::from_slack_states(4, &[0, 2]).unwrap();
        let mut expected = r.q().clone();
        expected[(0, 0)] += 0.4479 * 1.5;
        expected[(2, 2)] += 0.4479 * 1.5;
        assert!((r.matrix(&cfg) - expected).amax() < 1e-15);
    }

    #[test]
    fn lagged_models_are_refused() {
        let model = build_nk_itr(0.99, 1.0, 0.02, 1.5, 0.0, 0.8, 0.01).unwrap();
        let chain = MarkovChain::absorbing(0.8, -0.01)
            .unwrap()
            .lift(4, 1, Some(3))
            .unwrap();
        assert!(matches!(
            CanonicalSystem::new(&model, &chain),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn config_shape_checked() {
        let model = build_acs(1.5, 0.01).unwrap();
        let chain = acs_chain(0.8, 1.0);
        assert!(assemble_a(&model, &chain, &RegimeConfig::all_slack(3, 1)).is_err());
    }
}
