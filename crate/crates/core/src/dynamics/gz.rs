//! Stationary decision rules `Y_t = G e_i y_{t-1} + Z e_i` for a fixed
//! regime configuration, where `y = g'Y` is the scalar endogenous state.
//!
//! `G` solves the quadratic equations
//! `A_i G e_i + h_i + B_i G K'e_i g'G e_i = 0`, one block per state, and `Z`
//! then solves a linear system. Newton with backtracking is run on the `G`
//! block from a deterministic start list; `Z` follows exactly.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::canonical::CanonicalModel;
use crate::error::{Error, Result};
use crate::glm::RegimeConfig;
use crate::linalg::real_eigenvalues;
use crate::markov::MarkovChain;

/// Spectral shift for the state-invariant pencil; any value that is not an
/// eigenvalue works.
const PENCIL_SHIFT: f64 = 0.618_033_988_749_894_8;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GzOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    pub max_starts: usize,
    pub dedupe_tol: f64,
}

impl Default for GzOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            max_iter: 50,
            max_starts: 16,
            dedupe_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GzSolution {
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub g: DMatrix<f64>,
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub z: DMatrix<f64>,
    /// Max-abs residual of both equation blocks.
    pub residual: f64,
    /// Index into the start list of the first start that reached this root.
    pub start: usize,
    pub iterations: usize,
    /// `max_i |g'G e_i| < 1`.
    pub stable: bool,
}

impl GzSolution {
    /// Persistence `g'G e_i` of the state in each Markov state.
    pub fn persistence(&self, g: &DVector<f64>) -> DVector<f64> {
        self.g.tr_mul(g)
    }
}

/// Per-regime blocks with the lag loading `h_r` and selector `g`.
pub(crate) struct LagView<'a> {
    pub model: &'a CanonicalModel,
    pub chain: &'a MarkovChain,
    pub g: DVector<f64>,
    pub h: Vec<DVector<f64>>,
    pub x_next: DMatrix<f64>,
}

impl<'a> LagView<'a> {
    pub fn new(model: &'a CanonicalModel, chain: &'a MarkovChain) -> Result<Self> {
        if model.predetermined() > 0 {
            return Err(Error::Unsupported(
                "predetermined coordinates: quasi-difference the model first".into(),
            ));
        }
        if chain.n_x() != model.n_x() {
            return Err(Error::Dimension {
                field: "chain support".into(),
                expected: format!("{} rows", model.n_x()),
                found: format!("{} rows", chain.n_x()),
            });
        }
        let (g, h) = match model.lag() {
            Some(lag) => (
                lag.g.clone(),
                (0..model.regime_count()).map(|r| lag.loading(r)).collect(),
            ),
            None => {
                let mut g = DVector::zeros(model.n());
                g[0] = 1.0;
                (g, vec![DVector::zeros(model.n()); model.regime_count()])
            }
        };
        Ok(Self {
            model,
            chain,
            g,
            h,
            x_next: chain.expected_support(),
        })
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn k(&self) -> usize {
        self.chain.k()
    }

    /// `B G K'e_i`.
    fn expected_g(&self, g_mat: &DMatrix<f64>, i: usize) -> DVector<f64> {
        g_mat * self.chain.kernel().row(i).transpose()
    }

    /// Exogenous part `C X e_i + D X K'e_i` for regime `r`.
    pub fn exo(&self, r: usize, i: usize) -> DVector<f64> {
        let blk = self.model.regime(r);
        &blk.c * self.chain.support().column(i) + &blk.d * self.x_next.column(i)
    }

    pub fn g_residual(&self, cfg: &RegimeConfig, g_mat: &DMatrix<f64>) -> DVector<f64> {
        let (n, k) = (self.n(), self.k());
        let mut out = DVector::zeros(n * k);
        for i in 0..k {
            let r = cfg.regime_of(i);
            let blk = self.model.regime(r);
            let gi = g_mat.column(i);
            let v = &blk.a * gi + &self.h[r] + &blk.b * self.expected_g(g_mat, i) * self.g.dot(&gi);
            out.rows_mut(i * n, n).copy_from(&v);
        }
        out
    }

    fn g_jacobian(&self, cfg: &RegimeConfig, g_mat: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let kernel = self.chain.kernel();
        let mut jac = DMatrix::zeros(n * k, n * k);
        for i in 0..k {
            let blk = self.model.regime(cfg.regime_of(i));
            let yi = self.g.dot(&g_mat.column(i));
            for j in 0..k {
                let mut view = jac.view_mut((i * n, j * n), (n, n));
                if kernel[(i, j)] != 0.0 {
                    view += &blk.b * (kernel[(i, j)] * yi);
                }
                if i == j {
                    view += &blk.a + &blk.b * self.expected_g(g_mat, i) * self.g.transpose();
                }
            }
        }
        jac
    }

    /// Linear system for `Z` given `G`.
    pub fn solve_z(&self, cfg: &RegimeConfig, g_mat: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let (n, k) = (self.n(), self.k());
        let kernel = self.chain.kernel();
        let mut mat = DMatrix::zeros(n * k, n * k);
        let mut rhs = DVector::zeros(n * k);
        for i in 0..k {
            let r = cfg.regime_of(i);
            let blk = self.model.regime(r);
            for j in 0..k {
                let mut view = mat.view_mut((i * n, j * n), (n, n));
                if kernel[(i, j)] != 0.0 {
                    view += &blk.b * kernel[(i, j)];
                }
                if i == j {
                    view += &blk.a + &blk.b * self.expected_g(g_mat, i) * self.g.transpose();
                }
            }
            rhs.rows_mut(i * n, n).copy_from(&-self.exo(r, i));
        }
        let v = mat.lu().solve(&rhs)?;
        v.iter()
            .all(|x| x.is_finite())
            .then(|| DMatrix::from_column_slice(n, k, v.as_slice()))
    }

    pub fn z_residual(&self, cfg: &RegimeConfig, g_mat: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
        let z_next = z * self.chain.kernel().transpose();
        (0..self.k())
            .map(|i| {
                let r = cfg.regime_of(i);
                let blk = self.model.regime(r);
                let zi = z.column(i);
                let v = &blk.a * zi
                    + &blk.b * self.expected_g(g_mat, i) * self.g.dot(&zi)
                    + &blk.b * z_next.column(i)
                    + self.exo(r, i);
                v.amax()
            })
            .fold(0.0, f64::max)
    }

    /// Roots `v` of `A_r v + B_r v (g'v) + h_r = 0`, ordered by `|g'v|`.
    fn invariant_roots(&self, r: usize) -> Vec<DVector<f64>> {
        let n = self.n();
        let blk = self.model.regime(r);
        let h = &self.h[r];
        // [A h; g' 0] u = rho [-B 0; 0 1] u with u = (v, 1).
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&blk.a);
        m.view_mut((0, n), (n, 1)).copy_from(h);
        m.view_mut((n, 0), (1, n)).copy_from(&self.g.transpose());
        let mut nn = DMatrix::zeros(n + 1, n + 1);
        nn.view_mut((0, 0), (n, n)).copy_from(&-&blk.b);
        nn[(n, n)] = 1.0;
        let Some(shifted) = (&m - &nn * PENCIL_SHIFT).try_inverse() else {
            return Vec::new();
        };
        let mut rhos: Vec<f64> = real_eigenvalues(&(shifted * &nn), 1e-10)
            .into_iter()
            .filter(|kappa| kappa.abs() > 1e-12)
            .map(|kappa| PENCIL_SHIFT + 1.0 / kappa)
            .collect();
        rhos.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        rhos.iter()
            .filter_map(|rho| (&blk.a + &blk.b * *rho).lu().solve(&-h))
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .collect()
    }

    /// Zero start, then for each rank `q` the `q`-th most persistent-stable
    /// invariant root of each state's regime placed in that state's column.
    fn starts(&self, cfg: &RegimeConfig, max_starts: usize) -> Vec<DMatrix<f64>> {
        let (n, k) = (self.n(), self.k());
        let roots: Vec<Vec<DVector<f64>>> = (0..self.model.regime_count())
            .map(|r| self.invariant_roots(r))
            .collect();
        let depth = roots.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = vec![DMatrix::zeros(n, k)];
        for q in 0..depth {
            let mut s = DMatrix::zeros(n, k);
            for i in 0..k {
                let list = &roots[cfg.regime_of(i)];
                if let Some(v) = list.get(q.min(list.len().saturating_sub(1))) {
                    s.set_column(i, v);
                }
            }
            if out.iter().all(|o| (o - &s).amax() > 0.0) {
                out.push(s);
            }
        }
        out.truncate(max_starts.max(1));
        out
    }
}

fn newton(
    view: &LagView,
    cfg: &RegimeConfig,
    start: DMatrix<f64>,
    opts: &GzOptions,
) -> Option<(DMatrix<f64>, usize)> {
    let (n, k) = (view.n(), view.k());
    let mut g = start;
    let mut f = view.g_residual(cfg, &g);
    for it in 0..=opts.max_iter {
        let norm = f.amax();
        if !norm.is_finite() {
            return None;
        }
        if norm < opts.newton_tol {
            return Some((g, it));
        }
        if it == opts.max_iter {
            break;
        }
        let step = view.g_jacobian(cfg, &g).lu().solve(&-&f)?;
        let step = DMatrix::from_column_slice(n, k, step.as_slice());
        let base = f.norm();
        let mut t = 1.0;
        loop {
            let trial = &g + &step * t;
            let ft = view.g_residual(cfg, &trial);
            if ft.norm() <= (1.0 - ARMIJO * t) * base || t < 1e-10 {
                g = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
    }
    None
}

/// Max-abs residual of the `G` and `Z` equations.
pub fn gz_residual(
    model: &CanonicalModel,
    chain: &MarkovChain,
    cfg: &RegimeConfig,
    g: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    let view = LagView::new(model, chain)?;
    Ok(view
        .g_residual(cfg, g)
        .amax()
        .max(view.z_residual(cfg, g, z)))
}

/// All distinct converged `(G, Z)` for the terminal configuration `cfg`, in
/// start order. An empty result means no start converged, which is not a
/// proof that no solution exists.
pub fn solve_gz(
    model: &CanonicalModel,
    chain: &MarkovChain,
    cfg: &RegimeConfig,
    opts: &GzOptions,
) -> Result<Vec<GzSolution>> {
    let view = LagView::new(model, chain)?;
    if cfg.k() != view.k() || cfg.m() != model.m() {
        return Err(Error::Dimension {
            field: "regime configuration".into(),
            expected: format!("k = {}, m = {}", view.k(), model.m()),
            found: format!("k = {}, m = {}", cfg.k(), cfg.m()),
        });
    }
    solve_with(&view, cfg, opts)
}

pub(crate) fn solve_with(
    view: &LagView,
    cfg: &RegimeConfig,
    opts: &GzOptions,
) -> Result<Vec<GzSolution>> {
    let mut out: Vec<GzSolution> = Vec::new();
    for (start, s) in view.starts(cfg, opts.max_starts).into_iter().enumerate() {
        let Some((g, iterations)) = newton(view, cfg, s, opts) else {
            continue;
        };
        if out.iter().any(|o| (&o.g - &g).amax() < opts.dedupe_tol) {
            continue;
        }
        let Some(z) = view.solve_z(cfg, &g) else {
            continue;
        };
        let residual = view
            .g_residual(cfg, &g)
            .amax()
            .max(view.z_residual(cfg, &g, &z));
        if residual >= opts.newton_tol.max(1e-9) {
            continue;
        }
        let stable = g.tr_mul(&view.g).iter().all(|v| v.abs() < 1.0);
        out.push(GzSolution {
            g,
            z,
            residual,
            start,
            iterations,
            stable,
        });
    }
    Ok(out)
}
