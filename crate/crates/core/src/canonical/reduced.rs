use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov::MarkovChain;

/// NK Taylor-rule model with `psi_x = 0`, `u = nu = 0`, reduced to a single
/// equation in inflation across the `k` states of the demand shock:
///
/// ```text
/// Q pi + lambda sigma R = lambda eps,   R_i = max(-mu, psi pi_i)
/// Q = I - K - beta (I - K) K - lambda sigma K
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNk {
    pub beta: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub mu: f64,
    q: DMatrix<f64>,
    kernel: DMatrix<f64>,
    eps: DVector<f64>,
}

/// Reduce the NK Taylor-rule model to its inflation equation. The chain's
/// single support row holds the demand shock `eps` in each state.
pub fn reduce_nk(
    beta: f64,
    sigma: f64,
    lambda: f64,
    psi: f64,
    mu: f64,
    chain: &MarkovChain,
) -> Result<ReducedNk> {
    if chain.n_x() != 1 {
        return Err(Error::Domain(format!(
            "reduced NK system needs a scalar shock chain, got n_x = {}",
            chain.n_x()
        )));
    }
    if !(beta > 0.0 && beta < 1.0) || sigma <= 0.0 || lambda <= 0.0 {
        return Err(Error::Domain(format!(
            "need 0 < beta < 1, sigma > 0, lambda > 0 (got {beta}, {sigma}, {lambda})"
        )));
    }
    let k = chain.k();
    let kernel = chain.kernel().clone();
    let id = DMatrix::<f64>::identity(k, k);
    let i_minus_k = &id - &kernel;
    let q = &i_minus_k - beta * &i_minus_k * &kernel - lambda * sigma * &kernel;
    let eps = chain.support().row(0).transpose();
    Ok(ReducedNk {
        beta,
        sigma,
        lambda,
        psi,
        mu,
        q,
        kernel,
        eps,
    })
}

impl ReducedNk {
    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn eps(&self) -> &DVector<f64> {
        &self.eps
    }

    /// Diagonal increment for a state where the policy rate is above the floor.
    pub fn slack_addon(&self) -> f64 {
        self.lambda * self.sigma * self.psi
    }

    /// Right-hand side contribution of a state where the floor binds.
    pub fn binding_rhs(&self) -> f64 {
        self.lambda * self.sigma * self.mu
    }

    pub fn with_psi(&self, psi: f64) -> Self {
        Self {
            psi,
            ..self.clone()
        }
    }

    /// Output gap implied by the Phillips curve, `x = (I - beta K) pi / lambda`.
    pub fn output_gap(&self, pi: &DVector<f64>) -> DVector<f64> {
        let k = self.k();
        (DMatrix::<f64>::identity(k, k) - self.beta * &self.kernel) * pi / self.lambda
    }
}
