//! Finite-horizon backward recursion for models with a scalar lagged state.
//!
//! Dates run `0..T`. From date `T-1` on the terminal configuration `J0` holds
//! with its stationary rule `(G, Z)`; dates `T-2, ..., 0` carry the
//! configurations `J1, ..., J_{T-1}`, chosen depth first. Each stage solves
//! `(A_r + B_r G' K'e_i g') Y = -h_r y_{-1} - B_r Z' K'e_i - C_r X e_i - D_r X K'e_i`
//! given the rule `(G', Z')` of the following date.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::gz::{solve_with, GzOptions, LagView};
use crate::canonical::CanonicalModel;
use crate::error::{Error, Result};
use crate::glm::RegimeConfig;
use crate::linalg::{det_threshold, is_degenerate};
use crate::markov::MarkovChain;
use crate::msv::margin_violations;

/// Allowed transitions between consecutive dates: `(J_t, J_{t+1})`.
pub type TransitionFilter = Arc<dyn Fn(&RegimeConfig, &RegimeConfig) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct BackwardOptions {
    /// Maximum number of regime paths `2^{km(T-1)}` per terminal branch.
    pub budget: u64,
    pub det_tol: f64,
    pub margin_tol: f64,
    pub gz: GzOptions,
    /// Realised states at dates `0..T`; all zero by default.
    pub shock_path: Option<Vec<usize>>,
    /// Keep only terminal roots with `|g'G e_i| < 1` in every state.
    pub stable_only: bool,
    pub transitions: Option<TransitionFilter>,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            budget: 1 << 22,
            det_tol: 1e-10,
            margin_tol: 1e-9,
            gz: GzOptions::default(),
            shock_path: None,
            stable_only: true,
            transitions: None,
        }
    }
}

impl fmt::Debug for BackwardOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackwardOptions")
            .field("budget", &self.budget)
            .field("det_tol", &self.det_tol)
            .field("margin_tol", &self.margin_tol)
            .field("gz", &self.gz)
            .field("shock_path", &self.shock_path)
            .field("stable_only", &self.stable_only)
            .field("transitions", &self.transitions.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub g: DMatrix<f64>,
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub z: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardPath {
    pub terminal: RegimeConfig,
    pub root: usize,
    /// Configuration in force at each date `0..T`.
    pub regimes: Vec<RegimeConfig>,
    /// Decision rule at each date.
    pub stages: Vec<Stage>,
    /// `y_{-1}, y_0, ..., y_{T-1}` along the shock path.
    pub y: Vec<f64>,
    pub states: Vec<usize>,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalBranch {
    pub j0: RegimeConfig,
    pub root: usize,
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub g: DMatrix<f64>,
    #[serde(serialize_with = "crate::msv::ser_matrix")]
    pub z: DMatrix<f64>,
    pub residual: f64,
    pub stable: bool,
    /// Entry `d` is true when every stage matrix at backward depth `d + 1`
    /// keeps a constant determinant sign across the regime choices.
    pub stage_coherent: Vec<bool>,
    /// Number of complete regime paths reached.
    pub leaves: u64,
    pub pruned_singular: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathOutcome {
    None,
    Unique,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackwardSolveResult {
    pub horizon: usize,
    pub y0: f64,
    pub branches: Vec<TerminalBranch>,
    /// Every path passing all inequalities, in (J0, root, depth-first) order.
    pub paths: Vec<BackwardPath>,
    pub outcome: PathOutcome,
    /// J0 configurations for which no terminal root converged.
    pub unsolved_terminals: Vec<RegimeConfig>,
}

impl BackwardSolveResult {
    pub fn stage_coherent(&self) -> bool {
        self.branches
            .iter()
            .all(|b| b.stage_coherent.iter().all(|c| *c))
    }
}

struct Search<'a> {
    view: &'a LagView<'a>,
    opts: &'a BackwardOptions,
    horizon: usize,
    y0: f64,
    states: Vec<usize>,
    configs: Vec<RegimeConfig>,
    /// Scalar loading of each constraint on `y_{-1}`.
    lag_loading: Vec<f64>,
}

struct BranchOutput {
    stage_coherent: Vec<bool>,
    leaves: u64,
    pruned_singular: u64,
    paths: Vec<BackwardPath>,
}

impl Search<'_> {
    /// Stage rule for configuration `cfg` given the next date's rule, or
    /// `None` if some chosen stage matrix is singular.
    fn stage(&self, cfg: &RegimeConfig, next: &Stage) -> Option<Stage> {
        let (n, k) = (self.view.n(), self.view.k());
        let kernel = self.view.chain.kernel();
        let z_next = &next.z * kernel.transpose();
        let mut g = DMatrix::zeros(n, k);
        let mut z = DMatrix::zeros(n, k);
        for i in 0..k {
            let r = cfg.regime_of(i);
            let m = self.stage_matrix(r, next, i);
            if is_degenerate(m.determinant(), det_threshold(&m, self.opts.det_tol)) {
                return None;
            }
            let lu = m.lu();
            let blk = self.view.model.regime(r);
            g.set_column(i, &lu.solve(&-&self.view.h[r])?);
            let rhs = -(&blk.b * z_next.column(i) + self.view.exo(r, i));
            z.set_column(i, &lu.solve(&rhs)?);
        }
        Some(Stage { g, z })
    }

    fn stage_matrix(&self, r: usize, next: &Stage, i: usize) -> DMatrix<f64> {
        let blk = self.view.model.regime(r);
        let expected = &next.g * self.view.chain.kernel().row(i).transpose();
        &blk.a + &blk.b * expected * self.view.g.transpose()
    }

    /// True when, for every state, the stage determinant keeps one strict
    /// sign across all regimes.
    fn sign_consistent(&self, next: &Stage) -> bool {
        (0..self.view.k()).all(|i| {
            let signs: Vec<f64> = (0..self.view.model.regime_count())
                .map(|r| {
                    let m = self.stage_matrix(r, next, i);
                    let det = m.determinant();
                    if is_degenerate(det, det_threshold(&m, self.opts.det_tol)) {
                        0.0
                    } else {
                        det.signum()
                    }
                })
                .collect();
            signs[0] != 0.0 && signs.iter().all(|s| *s == signs[0])
        })
    }

    fn allowed(&self, earlier: &RegimeConfig, later: &RegimeConfig) -> bool {
        self.opts
            .transitions
            .as_ref()
            .is_none_or(|f| f(earlier, later))
    }

    fn run_branch(&self, j0: &RegimeConfig, terminal: Stage, root: usize) -> BranchOutput {
        let depth = self.horizon - 1;
        let mut out = BranchOutput {
            stage_coherent: vec![true; depth],
            leaves: 0,
            pruned_singular: 0,
            paths: Vec::new(),
        };
        // stack[d] is the rule at backward depth d, i.e. date T-1-d.
        let mut stack = vec![terminal];
        let mut chosen = vec![j0.clone()];
        self.descend(&mut stack, &mut chosen, root, &mut out);
        out
    }

    fn descend(
        &self,
        stack: &mut Vec<Stage>,
        chosen: &mut Vec<RegimeConfig>,
        root: usize,
        out: &mut BranchOutput,
    ) {
        let d = stack.len();
        if d == self.horizon {
            out.leaves += 1;
            if let Some(path) = self.forward(stack, chosen, root) {
                out.paths.push(path);
            }
            return;
        }
        let next = stack.last().expect("terminal rule present").clone();
        if !self.sign_consistent(&next) {
            out.stage_coherent[d - 1] = false;
        }
        for cfg in &self.configs {
            if !self.allowed(cfg, chosen.last().expect("terminal config present")) {
                continue;
            }
            match self.stage(cfg, &next) {
                Some(stage) => {
                    stack.push(stage);
                    chosen.push(cfg.clone());
                    self.descend(stack, chosen, root, out);
                    stack.pop();
                    chosen.pop();
                }
                None => out.pruned_singular += 1,
            }
        }
    }

    /// Simulates the path from `y0` and checks every state's inequalities at
    /// each date. `stack`/`chosen` are in backward order.
    fn forward(
        &self,
        stack: &[Stage],
        chosen: &[RegimeConfig],
        root: usize,
    ) -> Option<BackwardPath> {
        let (k, m) = (self.view.k(), self.view.model.m());
        let support = self.view.chain.support();
        let x_next = &self.view.x_next;
        let kernel = self.view.chain.kernel();
        let mut y_lag = self.y0;
        let mut ys = vec![self.y0];
        let mut boundary = false;
        for t in 0..self.horizon {
            let idx = self.horizon - 1 - t;
            let (stage, cfg) = (&stack[idx], &chosen[idx]);
            // At the last date the terminal rule follows itself.
            let next = &stack[idx.saturating_sub(1)];
            let mut margins = DMatrix::zeros(m, k);
            let mut ys_now = DMatrix::zeros(self.view.n(), k);
            for i in 0..k {
                let y_now = stage.g.column(i) * y_lag + stage.z.column(i);
                let y_scalar = self.view.g.dot(&y_now);
                let expected = (&next.g * y_scalar + &next.z) * kernel.row(i).transpose();
                for (j, con) in self.view.model.constraints().iter().enumerate() {
                    margins[(j, i)] = con.a.dot(&y_now)
                        + con.b.dot(&expected)
                        + con.c.dot(&support.column(i))
                        + con.d.dot(&x_next.column(i))
                        + self.lag_loading[j] * y_lag;
                }
                ys_now.set_column(i, &y_now);
            }
            let (violations, on_boundary) = margin_violations(cfg, &margins, self.opts.margin_tol);
            if !violations.is_empty() {
                return None;
            }
            boundary |= on_boundary;
            y_lag = self.view.g.dot(&ys_now.column(self.states[t]));
            ys.push(y_lag);
        }
        let mut regimes: Vec<RegimeConfig> = chosen.to_vec();
        regimes.reverse();
        let mut stages: Vec<Stage> = stack.to_vec();
        stages.reverse();
        Some(BackwardPath {
            terminal: chosen[0].clone(),
            root,
            regimes,
            stages,
            y: ys,
            states: self.states.clone(),
            boundary,
        })
    }
}

/// Runs the three phases: terminal rules per `J0`, backward recursion with
/// stage sign checks, forward selection from `y0`. The model must have lag
/// blocks or be lag free (then `G = 0`); predetermined coordinates are
/// refused.
pub fn backward_solve(
    model: &CanonicalModel,
    chain: &MarkovChain,
    horizon: usize,
    y0: f64,
    opts: &BackwardOptions,
) -> Result<BackwardSolveResult> {
    if horizon == 0 {
        return Err(Error::Domain(
            "the horizon must be at least one date".into(),
        ));
    }
    let view = LagView::new(model, chain)?;
    let (k, m) = (view.k(), model.m());
    let bits = (k * m) as u128 * (horizon as u128 - 1);
    if bits >= 127 || (1u128 << bits) > opts.budget as u128 {
        return Err(Error::BudgetExceeded {
            required: 1u128 << bits.min(127),
            budget: opts.budget,
        });
    }
    let config_bits = (k * m) as u32;
    if config_bits >= 63 {
        return Err(Error::CapExceeded {
            required: 1u128 << config_bits.min(127),
            cap: u64::MAX,
        });
    }
    let states = match &opts.shock_path {
        Some(p) => {
            if p.len() < horizon || p.iter().any(|s| *s >= k) {
                return Err(Error::Domain(format!(
                    "shock path needs {horizon} states in 0..{k}, got {p:?}"
                )));
            }
            p[..horizon].to_vec()
        }
        None => vec![0; horizon],
    };
    let mut configs: Vec<RegimeConfig> = (0..1u64 << config_bits)
        .map(|i| RegimeConfig::from_index(i, k, m))
        .collect();
    configs.sort();
    let lag_loading = model
        .constraints()
        .iter()
        .map(|c| match (&c.h, model.lag()) {
            (Some(h), Some(lag)) => h.dot(&lag.g) / lag.g.norm_squared(),
            _ => 0.0,
        })
        .collect();
    let search = Search {
        view: &view,
        opts,
        horizon,
        y0,
        states,
        configs,
        lag_loading,
    };

    let terminals: Vec<Result<(RegimeConfig, Vec<_>)>> = search
        .configs
        .par_iter()
        .map(|j0| Ok((j0.clone(), solve_with(&view, j0, &opts.gz)?)))
        .collect();
    let mut jobs = Vec::new();
    let mut unsolved_terminals = Vec::new();
    for entry in terminals {
        let (j0, roots) = entry?;
        if roots.is_empty() {
            unsolved_terminals.push(j0.clone());
        }
        for (root, sol) in roots.into_iter().enumerate() {
            if opts.stable_only && !sol.stable {
                continue;
            }
            jobs.push((j0.clone(), root, sol));
        }
    }

    let results: Vec<(TerminalBranch, Vec<BackwardPath>)> = jobs
        .into_par_iter()
        .map(|(j0, root, sol)| {
            let terminal = Stage {
                g: sol.g.clone(),
                z: sol.z.clone(),
            };
            let out = search.run_branch(&j0, terminal, root);
            let branch = TerminalBranch {
                j0,
                root,
                g: sol.g,
                z: sol.z,
                residual: sol.residual,
                stable: sol.stable,
                stage_coherent: out.stage_coherent,
                leaves: out.leaves,
                pruned_singular: out.pruned_singular,
            };
            (branch, out.paths)
        })
        .collect();

    let mut branches = Vec::with_capacity(results.len());
    let mut paths = Vec::new();
    for (b, p) in results {
        branches.push(b);
        paths.extend(p);
    }
    let outcome = match paths.len() {
        0 => PathOutcome::None,
        1 => PathOutcome::Unique,
        _ => PathOutcome::Multiple,
    };
    Ok(BackwardSolveResult {
        horizon,
        y0,
        branches,
        paths,
        outcome,
        unsolved_terminals,
    })
}

/// One row per date and path: `path,t,state,y,regime`, with `y` the state
/// variable chosen at date `t`.
pub fn paths_csv(result: &BackwardSolveResult) -> String {
    let mut out = String::from("path,t,state,y,regime\n");
    for (p, path) in result.paths.iter().enumerate() {
        for t in 0..path.regimes.len() {
            writeln!(
                out,
                "{p},{t},{},{},{}",
                path.states[t],
                path.y[t + 1],
                path.regimes[t].bitstring()
            )
            .expect("write to string");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::{build_acs, build_nk_itr, build_nk_tr, nk_demand_chain};
    use crate::closedform::{nk_itr_bound, NkParams};
    use crate::glm::CanonicalSystem;
    use crate::msv::{enumerate_msv, MsvOptions};

    fn itr_setup(par: &NkParams, r_l: f64) -> (CanonicalModel, MarkovChain) {
        let model = build_nk_itr(
            par.beta, par.sigma, par.lambda, par.psi, 0.0, par.phi, par.mu,
        )
        .unwrap();
        let chain =
            nk_demand_chain(&MarkovChain::absorbing(par.p, r_l).unwrap(), par.sigma, 4).unwrap();
        (model, chain)
    }

    fn has_zir_pir(res: &BackwardSolveResult) -> bool {
        let target = RegimeConfig::from_slack_states(2, &[1]).unwrap();
        res.paths
            .iter()
            .any(|p| p.regimes.iter().all(|j| *j == target))
    }

    fn stationary_terminals(res: &BackwardSolveResult) -> Vec<String> {
        let mut got: Vec<String> = res
            .paths
            .iter()
            .filter(|p| p.regimes.iter().all(|j| *j == p.terminal))
            .map(|p| p.terminal.bitstring())
            .collect();
        got.sort();
        got
    }

    fn msv_regimes(model: &CanonicalModel, chain: &MarkovChain) -> Vec<String> {
        let msv = enumerate_msv(
            &CanonicalSystem::new(model, chain).unwrap(),
            &MsvOptions::default(),
        )
        .unwrap();
        let mut out: Vec<String> = msv
            .solutions
            .iter()
            .map(|s| s.regime().bitstring())
            .collect();
        out.sort();
        out
    }

    #[test]
    fn lag_free_stationary_paths_match_msv() {
        // ACS has A = 0 when binding, so only the terminal date is solvable.
        let acs = build_acs(1.5, 0.01).unwrap();
        for r_l in [-0.002, -0.02] {
            let chain = MarkovChain::absorbing(0.8, r_l)
                .unwrap()
                .lift(2, 0, Some(1))
                .unwrap();
            let res = backward_solve(&acs, &chain, 1, 0.0, &BackwardOptions::default()).unwrap();
            assert_eq!(
                stationary_terminals(&res),
                msv_regimes(&acs, &chain),
                "r_l = {r_l}"
            );
        }
        let par = NkParams {
            p: 0.7,
            psi: 1.5,
            ..Default::default()
        };
        let nk = build_nk_tr(par.beta, par.sigma, par.lambda, par.psi, 0.0, par.mu).unwrap();
        for r_l in [-0.004, -0.013, -0.03] {
            let chain = nk_demand_chain(&MarkovChain::absorbing(par.p, r_l).unwrap(), par.sigma, 4)
                .unwrap();
            let expected = msv_regimes(&nk, &chain);
            for horizon in 1..=3 {
                let res =
                    backward_solve(&nk, &chain, horizon, 0.0, &BackwardOptions::default()).unwrap();
                assert_eq!(
                    stationary_terminals(&res),
                    expected,
                    "r_l = {r_l}, T = {horizon}"
                );
            }
        }
    }

    #[test]
    fn itr_zir_pir_path_tracks_the_bound() {
        let par = NkParams {
            phi: 0.5,
            psi: 1.5,
            p: 0.7,
            ..Default::default()
        };
        let bound = nk_itr_bound(&par).unwrap().bound;
        for (scale, exists) in [(0.8, true), (1.2, false)] {
            let (model, chain) = itr_setup(&par, -scale * bound);
            let res =
                backward_solve(&model, &chain, 1, -par.mu, &BackwardOptions::default()).unwrap();
            assert_eq!(has_zir_pir(&res), exists, "scale {scale}");
        }
    }

    #[test]
    fn budget_is_enforced() {
        let par = NkParams::default();
        let (model, chain) = itr_setup(&par, -0.001);
        let opts = BackwardOptions {
            budget: 16,
            ..Default::default()
        };
        assert!(backward_solve(&model, &chain, 3, 0.0, &opts).is_ok());
        assert!(matches!(
            backward_solve(&model, &chain, 4, 0.0, &opts),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn transition_filter_limits_paths() {
        let par = NkParams {
            phi: 0.5,
            ..Default::default()
        };
        let (model, chain) = itr_setup(&par, -0.002);
        let free = backward_solve(&model, &chain, 3, -par.mu, &BackwardOptions::default()).unwrap();
        let opts = BackwardOptions {
            transitions: Some(Arc::new(|a, b| a == b)),
            ..Default::default()
        };
        let fixed = backward_solve(&model, &chain, 3, -par.mu, &opts).unwrap();
        assert!(fixed.branches.iter().all(|b| b.leaves == 1));
        assert!(
            free.branches.iter().map(|b| b.leaves).sum::<u64>()
                > fixed.branches.iter().map(|b| b.leaves).sum::<u64>()
        );
        assert!(fixed
            .paths
            .iter()
            .all(|p| p.regimes.iter().all(|j| *j == p.terminal)));
    }

    #[test]
    fn csv_has_one_row_per_date() {
        let par = NkParams {
            phi: 0.5,
            ..Default::default()
        };
        let bound = nk_itr_bound(&par).unwrap().bound;
        let (model, chain) = itr_setup(&par, -0.5 * bound);
        let res = backward_solve(&model, &chain, 2, -par.mu, &BackwardOptions::default()).unwrap();
        let csv = paths_csv(&res);
        assert!(csv.starts_with("path,t,state,y,regime\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * res.paths.len());
    }
}
