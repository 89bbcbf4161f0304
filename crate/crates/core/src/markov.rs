//! Finite-state Markov chains for the exogenous block.
//!
//! A chain pairs a support matrix `X` (`n_x × k`, column `i` is the value of
//! the exogenous vector in state `i`) with a row-stochastic kernel `K`
//! (`K[i][j] = Pr(next = j | current = i)`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_rows};

const ROW_SUM_TOL: f64 = 1e-12;
const CLAMP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    support: DMatrix<f64>,
    kernel: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub probabilities: DVector<f64>,
    /// False when the chain has more than one closed communicating class.
    pub unique: bool,
}

#[derive(Serialize, Deserialize)]
struct ChainDoc {
    k: usize,
    n_x: usize,
    support: Vec<Vec<f64>>,
    kernel: Vec<Vec<f64>>,
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(Error::Domain(format!("{name} = {v} is not a probability")));
    }
    Ok(())
}

impl MarkovChain {
    /// Validates and clamps the kernel. Entries within 1e-14 of `[0, 1]` are
    /// clamped; anything further out is rejected.
    pub fn new(support: DMatrix<f64>, mut kernel: DMatrix<f64>) -> Result<Self> {
        let k = kernel.nrows();
        if k == 0 || kernel.ncols() != k {
            return Err(Error::Domain(format!(
                "kernel must be square and non-empty, got {}x{}",
                kernel.nrows(),
                kernel.ncols()
            )));
        }
        if support.nrows() == 0 || support.ncols() != k {
            return Err(crate::error::dim_err(
                "support",
                format!("n_x >= 1 rows and {k} columns"),
                format!("{}x{}", support.nrows(), support.ncols()),
            ));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("support has non-finite entries".into()));
        }
        for v in kernel.iter_mut() {
            if !v.is_finite() || *v < -CLAMP_TOL || *v > 1.0 + CLAMP_TOL {
                return Err(Error::Domain(format!("kernel entry {v} outside [0, 1]")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        for i in 0..k {
            let s: f64 = kernel.row(i).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("kernel row {i} sums to {s}")));
            }
        }
        Ok(Self { support, kernel })
    }

    pub fn two_state(p: f64, q: f64, x1: &[f64], x2: &[f64]) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("q", q)?;
        if x1.len() != x2.len() || x1.is_empty() {
            return Err(crate::error::dim_err(
                "x2",
                format!("length {}", x1.len()),
                format!("length {}", x2.len()),
            ));
        }
        let n_x = x1.len();
        let support = DMatrix::from_fn(n_x, 2, |r, c| if c == 0 { x1[r] } else { x2[r] });
        let kernel = DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - q, q]);
        Self::new(support, kernel)
    }

    /// Transitory state carrying `-r_l > 0` that persists with probability
    /// `p`, followed by an absorbing state at zero.
    pub fn absorbing(p: f64, r_l: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!(
                "persistence p = {p} must lie in (0, 1]"
            )));
        }
        if !(r_l < 0.0) {
            return Err(Error::Domain(format!("r_L = {r_l} must be negative")));
        }
        Self::two_state(p, 1.0, &[-r_l], &[0.0])
    }

    /// Rouwenhorst discretisation of `x' = rho x + sigma_cond e`.
    ///
    /// The grid spans `±sqrt(k-1) sigma_cond / sqrt(1-rho^2)`, which makes the
    /// stationary variance equal the AR(1) unconditional variance.
    pub fn rouwenhorst(rho: f64, sigma_cond: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("Rouwenhorst needs k >= 2, got {k}")));
        }
        if !(rho.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "|rho| = {} must be below 1",
                rho.abs()
            )));
        }
        if !(sigma_cond > 0.0) {
            return Err(Error::Domain(format!(
                "sigma = {sigma_cond} must be positive"
            )));
        }
        let p = (1.0 + rho) / 2.0;
        let q = p;
        let mut kern = DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - q, q]);
        for m in 3..=k {
            let prev = kern;
            let mut next = DMatrix::zeros(m, m);
            for i in 0..m - 1 {
                for j in 0..m - 1 {
                    let v = prev[(i, j)];
                    next[(i, j)] += p * v;
                    next[(i, j + 1)] += (1.0 - p) * v;
                    next[(i + 1, j)] += (1.0 - q) * v;
                    next[(i + 1, j + 1)] += q * v;
                }
            }
            for i in 1..m - 1 {
                for j in 0..m {
                    next[(i, j)] /= 2.0;
                }
            }
            kern = next;
        }
        let half = ((k - 1) as f64).sqrt() * sigma_cond / (1.0 - rho * rho).sqrt();
        let step = 2.0 * half / (k - 1) as f64;
        let support = DMatrix::from_fn(1, k, |_, j| -half + step * j as f64);
        Self::new(support, kern)
    }

    pub fn k(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.support.nrows()
    }

    pub fn support(&self) -> &DMatrix<f64> {
        &self.support
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Same kernel, new support (e.g. after mapping a scalar shock into a
    /// model's exogenous vector).
    pub fn with_support(&self, support: DMatrix<f64>) -> Result<Self> {
        Self::new(support, self.kernel.clone())
    }

    /// Embeds a scalar chain into an `n_x`-dimensional exogenous vector: the
    /// chain's values go to coordinate `slot`, coordinate `constant` (if any)
    /// is set to one, every other coordinate is zero.
    pub fn lift(&self, n_x: usize, slot: usize, constant: Option<usize>) -> Result<Self> {
        if self.n_x() != 1 {
            return Err(Error::Unsupported(format!(
                "lift expects a scalar chain, got n_x = {}",
                self.n_x()
            )));
        }
        if slot >= n_x || constant.is_some_and(|c| c >= n_x || c == slot) {
            return Err(Error::Domain(format!(
                "invalid lift slots ({slot}, {constant:?}) for n_x = {n_x}"
            )));
        }
        let mut support = DMatrix::zeros(n_x, self.k());
        support.row_mut(slot).copy_from(&self.support.row(0));
        if let Some(c) = constant {
            support.row_mut(c).fill(1.0);
        }
        self.with_support(support)
    }

    /// `X K'`, whose column `i` is the conditional expectation of next
    /// period's exogenous vector in state `i`.
    pub fn expected_support(&self) -> DMatrix<f64> {
        &self.support * self.kernel.transpose()
    }

    pub fn stationary_distribution(&self) -> Stationary {
        let k = self.k();
        let reach = self.reachability();
        let closed: Vec<Vec<usize>> = {
            let mut seen = vec![false; k];
            let mut classes = Vec::new();
            for i in 0..k {
                if seen[i] {
                    continue;
                }
                let class: Vec<usize> = (0..k).filter(|&j| reach[i][j] && reach[j][i]).collect();
                for &j in &class {
                    seen[j] = true;
                }
                let is_closed = class
                    .iter()
                    .all(|&a| (0..k).all(|b| self.kernel[(a, b)] == 0.0 || class.contains(&b)));
                if is_closed {
                    classes.push(class);
                }
            }
            classes
        };
        let class = &closed[0];
        let m = class.len();
        // Solve pi (K_C - I) = 0 with the last equation replaced by sum(pi) = 1.
        let mut sys = DMatrix::from_fn(m, m, |r, c| {
            let (a, b) = (class[c], class[r]);
            self.kernel[(a, b)] - if r == c { 1.0 } else { 0.0 }
        });
        sys.row_mut(m - 1).fill(1.0);
        let mut rhs = DVector::zeros(m);
        rhs[m - 1] = 1.0;
        let sol = sys
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::from_element(m, 1.0 / m as f64));
        let mut probabilities = DVector::zeros(k);
        for (idx, &state) in class.iter().enumerate() {
            probabilities[state] = sol[idx].max(0.0);
        }
        let total = probabilities.sum();
        probabilities /= total;
        Stationary {
            probabilities,
            unique: closed.len() == 1,
        }
    }

    fn reachability(&self) -> Vec<Vec<bool>> {
        let k = self.k();
        let mut r: Vec<Vec<bool>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| i == j || self.kernel[(i, j)] > 0.0)
                    .collect()
            })
            .collect();
        for via in 0..k {
            for i in 0..k {
                if r[i][via] {
                    let through = r[via].clone();
                    for (dst, &hop) in r[i].iter_mut().zip(&through) {
                        *dst |= hop;
                    }
                }
            }
        }
        r
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ChainDoc {
            k: self.k(),
            n_x: self.n_x(),
            support: matrix_rows(&self.support),
            kernel: matrix_rows(&self.kernel),
        })
        .expect("chain serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ChainDoc = serde_json::from_str(text)?;
        let support = matrix_from_rows("support", &doc.support, doc.n_x, doc.k)?;
        let kernel = matrix_from_rows("kernel", &doc.kernel, doc.k, doc.k)?;
        Self::new(support, kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_state_identity_when_both_absorbing() {
        let c = MarkovChain::two_state(1.0, 1.0, &[0.01], &[0.0]).unwrap();
        assert_eq!(c.kernel(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn two_state_absorbing_second_row() {
        let c = MarkovChain::two_state(0.8, 1.0, &[1.0], &[0.0]).unwrap();
        assert_eq!(
            c.kernel().row(1).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn two_state_iid() {
        let c = MarkovChain::two_state(0.5, 0.5, &[1.0], &[-1.0]).unwrap();
        assert!(c.kernel().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_state_rejects_bad_probability() {
        assert!(matches!(
            MarkovChain::two_state(1.2, 0.5, &[1.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            MarkovChain::two_state(0.5, -0.1, &[1.0], &[0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn absorbing_chain_layout() {
        let c = MarkovChain::absorbing(0.8, -0.01).unwrap();
        assert_eq!(
            c.support().iter().copied().collect::<Vec<_>>(),
            vec![0.01, 0.0]
        );
        assert!((c.kernel() - DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.0, 1.0])).amax() < 1e-15);
        let never_exits = MarkovChain::absorbing(1.0, -0.01).unwrap();
        assert_eq!(never_exits.kernel(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn absorbing_chain_requires_negative_rate() {
        assert!(matches!(
            MarkovChain::absorbing(0.8, 0.01),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            MarkovChain::absorbing(0.8, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn absorbing_chain_stationary_mass_on_absorbing_state() {
        let s = MarkovChain::absorbing(0.5, -0.02)
            .unwrap()
            .stationary_distribution();
        assert!(close(s.probabilities[0], 0.0, 1e-15));
        assert!(close(s.probabilities[1], 1.0, 1e-15));
        assert!(s.unique);
    }

    #[test]
    fn rouwenhorst_two_states_iid() {
        let c = MarkovChain::rouwenhorst(0.0, 1.0, 2).unwrap();
        assert!(c.kernel().iter().all(|&v| close(v, 0.5, 1e-15)));
        assert!(close(c.support()[(0, 0)], -1.0, 1e-15));
        assert!(close(c.support()[(0, 1)], 1.0, 1e-15));
    }

    #[test]
    fn rouwenhorst_two_state_kernel() {
        let c = MarkovChain::rouwenhorst(0.7, 0.01, 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.85, 0.15, 0.15, 0.85]);
        assert!((c.kernel() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn rouwenhorst_three_state_grid_and_variance() {
        let c = MarkovChain::rouwenhorst(0.9, 0.0007, 3).unwrap();
        let m = 2f64.sqrt() * 0.0007 / 0.19f64.sqrt();
        let s = c.support();
        assert!(close(s[(0, 0)], -m, 1e-16));
        assert!(close(s[(0, 1)], 0.0, 1e-16));
        assert!(close(s[(0, 2)], m, 1e-16));
        let pi = c.stationary_distribution().probabilities;
        for (got, want) in pi.iter().zip([0.25, 0.5, 0.25]) {
            assert!(close(*got, want, 1e-12));
        }
        let var: f64 = (0..3).map(|j| pi[j] * s[(0, j)].powi(2)).sum();
        let target = 0.0007f64.powi(2) / 0.19;
        assert!(((var - target) / target).abs() < 1e-8);
    }

    #[test]
    fn rouwenhorst_domain_errors() {
        assert!(matches!(
            MarkovChain::rouwenhorst(0.5, 1.0, 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            MarkovChain::rouwenhorst(1.0, 1.0, 3),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            MarkovChain::rouwenhorst(-1.2, 1.0, 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn stationary_of_symmetric_kernel() {
        let c = MarkovChain::two_state(0.5, 0.5, &[1.0], &[-1.0]).unwrap();
        let s = c.stationary_distribution();
        assert!(close(s.probabilities[0], 0.5, 1e-15) && close(s.probabilities[1], 0.5, 1e-15));
    }

    #[test]
    fn stationary_flags_multiple_closed_classes() {
        let c = MarkovChain::two_state(1.0, 1.0, &[1.0], &[0.0]).unwrap();
        let s = c.stationary_distribution();
        assert!(!s.unique);
        assert!(close(s.probabilities.sum(), 1.0, 1e-15));
    }

    #[test]
    fn kernel_clamping_and_rejection() {
        let support = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let near = DMatrix::from_row_slice(2, 2, &[1.0 + 5e-15, -5e-15, 0.5, 0.5]);
        let c = MarkovChain::new(support.clone(), near).unwrap();
        assert_eq!(c.kernel()[(0, 0)], 1.0);
        assert_eq!(c.kernel()[(0, 1)], 0.0);
        let far = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, 0.5, 0.5]);
        assert!(MarkovChain::new(support.clone(), far).is_err());
        let bad_sum = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(MarkovChain::new(support, bad_sum).is_err());
    }

    #[test]
    fn lift_into_exogenous_vector() {
        let c = MarkovChain::absorbing(0.8, -0.01)
            .unwrap()
            .lift(4, 1, Some(3))
            .unwrap();
        let s = c.support();
        assert_eq!(s.nrows(), 4);
        assert_eq!(s[(1, 0)], 0.01);
        assert_eq!(s[(3, 0)], 1.0);
        assert_eq!(s[(3, 1)], 1.0);
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn json_layout_is_row_major() {
        let c = MarkovChain::absorbing(0.8, -0.01).unwrap();
        let v = c.to_json();
        assert_eq!(v["k"], 2);
        assert_eq!(v["n_x"], 1);
        assert_eq!(v["kernel"][0][1].as_f64().unwrap(), 0.19999999999999996);
        let back = MarkovChain::from_json(&v.to_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn json_rejects_wrong_shape() {
        let text = r#"{"k":2,"n_x":1,"support":[[0.0,1.0,2.0]],"kernel":[[1,0],[0,1]]}"#;
        let err = MarkovChain::from_json(text).unwrap_err();
        assert!(err.to_string().contains("support"));
    }
}
