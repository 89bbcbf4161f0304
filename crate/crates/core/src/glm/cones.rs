use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use super::{config_count, RegimeConfig, RegimeSystem};
use crate::error::Result;

const INTERIOR_MARGIN: f64 = 1e-9;

/// True when the region `{y : sign_J(L y + m0) > 0}` has non-empty interior,
/// where row `j k + i` of `rows` and entry `j k + i` of `offset` give the
/// affine margin of constraint `j` in state `i`.
///
/// Solves `max t` subject to `±(L_r y + m0_r) >= t`, `t <= 1`.
pub fn cone_is_feasible(rows: &DMatrix<f64>, offset: &DVector<f64>, cfg: &RegimeConfig) -> bool {
    let k = cfg.k();
    let mut pb = Problem::new(OptimizationDirection::Maximize);
    let t = pb.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let y: Vec<_> = (0..rows.ncols())
        .map(|_| pb.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for r in 0..rows.nrows() {
        let sign = if cfg.is_slack(r / k, r % k) {
            1.0
        } else {
            -1.0
        };
        let mut expr = LinearExpr::empty();
        for (c, var) in y.iter().enumerate() {
            let v = rows[(r, c)];
            if v != 0.0 {
                expr.add(*var, sign * v);
            }
        }
        expr.add(t, -1.0);
        pb.add_constraint(expr, ComparisonOp::Ge, -sign * offset[r]);
    }
    match pb.solve() {
        Ok(sol) => sol.objective() > INTERIOR_MARGIN,
        Err(_) => false,
    }
}

/// Configurations whose region of the piecewise-linear map has non-empty
/// interior, in index order.
pub fn feasible_cones<S: RegimeSystem + ?Sized>(sys: &S, cap: u64) -> Result<Vec<RegimeConfig>> {
    let (k, m) = (sys.k(), sys.m());
    let total = config_count(k, m, cap)?;
    let rows = sys.margin_rows();
    let base = sys.margins(&DMatrix::zeros(sys.n(), k));
    let offset = DVector::from_fn(m * k, |r, _| base[(r / k, r % k)]);
    Ok((0..total)
        .map(|idx| RegimeConfig::from_index(idx, k, m))
        .filter(|cfg| cone_is_feasible(&rows, &offset, cfg))
        .collect())
}

/// The ten cones of the two-state model with floors on both the policy rate
/// and expected inflation (state 1 transitory, state 2 absorbing), in the
/// order `J1..J10`. Each entry is `rate|expectations`.
pub fn zlb_expectations_cones() -> Vec<RegimeConfig> {
    [
        "11|11", "01|11", "01|01", "11|01", "01|00", "11|00", "00|00", "10|00", "10|10", "11|10",
    ]
    .iter()
    .map(|s| RegimeConfig::parse(s).expect("static configuration"))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::build_zlb_expectations;
    use crate::glm::{assemble_a, CanonicalSystem};
    use crate::markov::MarkovChain;

    #[test]
    fn lp_recovers_the_ten_cones() {
        for p in [0.3, 0.8, 0.95] {
            let chain = MarkovChain::absorbing(p, -0.004)
                .unwrap()
                .lift(2, 0, Some(1))
                .unwrap();
            let model = build_zlb_expectations(1.5, 0.01).unwrap();
            let sys = CanonicalSystem::new(&model, &chain).unwrap();
            let mut found = feasible_cones(&sys, 1 << 10).unwrap();
            let mut expected = zlb_expectations_cones();
            found.sort();
            expected.sort();
            assert_eq!(found, expected, "p = {p}");
        }
    }

    #[test]
    fn cone_matrices_match_coefficient_recipes() {
        let (psi, p) = (1.7, 0.6);
        let chain = MarkovChain::absorbing(p, -0.004)
            .unwrap()
            .lift(2, 0, Some(1))
            .unwrap();
        let model = build_zlb_expectations(psi, 0.01).unwrap();
        let k = chain.kernel().clone();
        let id = DMatrix::<f64>::identity(2, 2);
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let recipes = [
            &k - psi * &id,
            &k - psi * &e2,
            &e2 * &k - psi * &e2,
            &e2 * &k - psi * &id,
            -psi * &e2,
            -psi * &id,
            DMatrix::zeros(2, 2),
            -psi * &e1,
            &e1 * &k - psi * &e1,
            &e1 * &k - psi * &id,
        ];
        for (cfg, recipe) in zlb_expectations_cones().iter().zip(recipes) {
            let a = assemble_a(&model, &chain, cfg).unwrap();
            assert!((a - recipe).amax() < 1e-15, "{cfg}");
        }
    }
}
