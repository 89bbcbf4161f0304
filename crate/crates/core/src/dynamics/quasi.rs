use nalgebra::{DMatrix, DVector};

use crate::canonical::{CanonicalModel, ConstraintSpec, RegimeBlocks};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, null_space, real_eigenvalues};

const CHECK_TOL: f64 = 1e-10;
/// Weight on the second regime when probing for common eigenvectors.
const MIX: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Lag-free model in `Ỹ = T Y`, where the kernel of `T` is the common
/// invariant subspace `Q₁` carrying the predetermined block.
#[derive(Debug, Clone)]
pub struct QuasiDifferenced {
    pub model: CanonicalModel,
    pub t: DMatrix<f64>,
    pub q1: DMatrix<f64>,
}

/// Removes the predetermined coordinates of `model`.
///
/// Eligibility: the matrices `B_s⁻¹A_s` commute, or `q` is supplied and
/// simultaneously upper-triangularizes all of them. In both cases the first
/// `predetermined` basis vectors must be annihilated by every constraint's
/// `a` and `b`.
pub fn quasi_difference(
    model: &CanonicalModel,
    q: Option<&DMatrix<f64>>,
) -> Result<QuasiDifferenced> {
    let n = model.n();
    let p = model.predetermined();
    if p == 0 {
        return Err(Error::NotEligible(
            "model has no predetermined coordinates".into(),
        ));
    }
    if model.lag().is_some() {
        return Err(Error::NotEligible(
            "lagged-state blocks cannot be combined with predetermined coordinates".into(),
        ));
    }
    let mut b_inv = Vec::with_capacity(model.regime_count());
    for (r, blk) in model.regimes().iter().enumerate() {
        let inv = blk
            .b
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()));
        b_inv.push(inv.ok_or_else(|| Error::Singular(format!("B{r} is not invertible")))?);
    }
    let ms: Vec<DMatrix<f64>> = model
        .regimes()
        .iter()
        .zip(&b_inv)
        .map(|(blk, bi)| bi * &blk.a)
        .collect();

    let q1 = match q {
        Some(q) => from_user_basis(model, &ms, q)?,
        None => {
            for (s, m1) in ms.iter().enumerate() {
                for (u, m2) in ms.iter().enumerate().skip(s + 1) {
                    let gap = max_abs(&(m1 * m2 - m2 * m1));
                    if gap > CHECK_TOL * (1.0 + max_abs(m1) * max_abs(m2)) {
                        return Err(Error::NotEligible(format!(
                            "B⁻¹A for regimes {s} and {u} do not commute (gap {gap:.3e}); supply a triangularizing basis"
                        )));
                    }
                }
            }
            common_eigenvectors(model, &ms)?
        }
    };

    let top = q1.rows(0, p).clone_owned();
    let top_inv = top
        .try_inverse()
        .ok_or_else(|| Error::NotEligible("the leading block of Q₁ is singular".into()))?;
    let gamma = q1.rows(p, n - p) * top_inv;
    let mut t = DMatrix::zeros(n - p, n);
    t.view_mut((0, 0), (n - p, p)).copy_from(&-gamma);
    t.view_mut((0, p), (n - p, n - p)).fill_with_identity();
    let e = DMatrix::identity(n, n).columns(p, n - p).clone_owned();

    let regimes = model
        .regimes()
        .iter()
        .zip(&ms)
        .zip(&b_inv)
        .map(|((blk, m), bi)| RegimeBlocks {
            a: &t * m * &e,
            b: DMatrix::identity(n - p, n - p),
            c: &t * bi * &blk.c,
            d: &t * bi * &blk.d,
        })
        .collect();
    let constraints = model
        .constraints()
        .iter()
        .map(|con| ConstraintSpec {
            a: e.tr_mul(&con.a),
            b: e.tr_mul(&con.b),
            c: con.c.clone(),
            d: con.d.clone(),
            h: None,
        })
        .collect();
    let reduced = CanonicalModel::new(n - p, model.n_x(), regimes, constraints, None, 0)?;
    Ok(QuasiDifferenced {
        model: reduced,
        t,
        q1,
    })
}

fn annihilated(model: &CanonicalModel, v: &DVector<f64>) -> bool {
    let scale = v.amax().max(1.0);
    model.constraints().iter().all(|c| {
        c.a.dot(v).abs() <= CHECK_TOL * scale * c.a.amax().max(1.0)
            && c.b.dot(v).abs() <= CHECK_TOL * scale * c.b.amax().max(1.0)
    })
}

fn from_user_basis(
    model: &CanonicalModel,
    ms: &[DMatrix<f64>],
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.n();
    if q.shape() != (n, n) {
        return Err(Error::Dimension {
            field: "Q".into(),
            expected: format!("{n}×{n}"),
            found: format!("{}×{}", q.nrows(), q.ncols()),
        });
    }
    let q_inv = q
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Q is not invertible".into()))?;
    for (s, m) in ms.iter().enumerate() {
        let lambda = &q_inv * m * q;
        let below = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|ij| lambda[ij].abs())
            .fold(0.0, f64::max);
        if below > CHECK_TOL * (1.0 + max_abs(m)) {
            return Err(Error::NotEligible(format!(
                "Q does not triangularize B⁻¹A in regime {s} (largest sub-diagonal entry {below:.3e})"
            )));
        }
    }
    let q1 = q.columns(0, model.predetermined()).clone_owned();
    for (i, v) in q1.column_iter().enumerate() {
        if !annihilated(model, &v.clone_owned()) {
            return Err(Error::NotEligible(format!(
                "constraint loads on column {i} of Q₁"
            )));
        }
    }
    Ok(q1)
}

/// Common eigenvectors of commuting `ms` that every constraint annihilates.
fn common_eigenvectors(model: &CanonicalModel, ms: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n = model.n();
    let p = model.predetermined();
    let mix = ms
        .iter()
        .enumerate()
        .fold(DMatrix::zeros(n, n), |acc, (s, m)| {
            acc + m * MIX.powi(s as i32)
        });
    let mut eigs = real_eigenvalues(&mix, 1e-9);
    eigs.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));

    let mut basis: Vec<DVector<f64>> = Vec::new();
    for lam in eigs {
        let shifted = &mix - DMatrix::identity(n, n) * lam;
        for v in null_space(&shifted, 1e-9) {
            let v = v.normalize();
            let invariant = ms.iter().all(|m| {
                let w = m * &v;
                (&w - &v * v.dot(&w)).amax() <= 1e-9 * (1.0 + max_abs(m))
            });
            if !invariant || !annihilated(model, &v) {
                continue;
            }
            let mut trial = basis.clone();
            trial.push(v);
            if DMatrix::from_columns(&trial).rank(1e-9) == trial.len() {
                basis = trial;
            }
            if basis.len() == p {
                return Ok(DMatrix::from_columns(&basis));
            }
        }
    }
    Err(Error::NotEligible(format!(
        "found {} of {p} common eigenvectors annihilated by the constraints",
        basis.len()
    )))
}
