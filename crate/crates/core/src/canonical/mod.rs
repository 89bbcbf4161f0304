//! Canonical piecewise-linear form
//!
//! ```text
//! A_s Y_t + B_s Y_{t+1|t} + C_s X_t + D_s X_{t+1|t} + H_s Y_{t-1} = 0
//! s_t = 1{ a'Y_t + b'Y_{t+1|t} + c'X_t + d'X_{t+1|t} + h'Y_{t-1} > 0 }
//! ```
//!
//! With `m` constraints there are `2^m` regimes. Regime index bit `j` is set
//! when constraint `j` is slack, so for a single constraint regime 0 is the
//! binding branch and regime 1 the slack branch.

mod builders;
mod reduced;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{matrix_from_rows, matrix_rows, vector_from_slice};

pub use builders::{
    build_acs, build_acs_str, build_nk_itr, build_nk_op, build_nk_tr, build_nk_ump,
    build_zlb_expectations, mu_from, nk_demand_chain,
};
pub use reduced::{reduce_nk, ReducedNk};

const RANK_ONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeBlocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    /// Loading on `Y_{t-1}`; only meaningful for models with lag blocks.
    pub h: Option<DVector<f64>>,
}

impl ConstraintSpec {
    pub fn new(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Self {
        Self {
            a: DVector::from_column_slice(a),
            b: DVector::from_column_slice(b),
            c: DVector::from_column_slice(c),
            d: DVector::from_column_slice(d),
            h: None,
        }
    }

    pub fn with_lag(mut self, h: &[f64]) -> Self {
        self.h = Some(DVector::from_column_slice(h));
        self
    }

    /// Signed slack `a'y + b'y_next + c'x + d'x_next (+ h'y_lag)`.
    pub fn margin(
        &self,
        y: &DVector<f64>,
        y_next: &DVector<f64>,
        x: &DVector<f64>,
        x_next: &DVector<f64>,
        y_lag: Option<&DVector<f64>>,
    ) -> f64 {
        let mut v = self.a.dot(y) + self.b.dot(y_next) + self.c.dot(x) + self.d.dot(x_next);
        if let (Some(h), Some(lag)) = (&self.h, y_lag) {
            v += h.dot(lag);
        }
        v
    }
}

/// Lagged endogenous state in scalar form: `H_s Y_{t-1} = h_s y_{t-1}` with
/// `y_{t-1} = g'Y_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBlocks {
    pub h: Vec<DMatrix<f64>>,
    pub g: DVector<f64>,
}

impl LagBlocks {
    /// The `n`-vector `h_s` with `H_s = h_s g' / (g'g)`.
    pub fn loading(&self, regime: usize) -> DVector<f64> {
        &self.h[regime] * &self.g / self.g.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    n: usize,
    n_x: usize,
    regimes: Vec<RegimeBlocks>,
    constraints: Vec<ConstraintSpec>,
    lag: Option<LagBlocks>,
    predetermined: usize,
}

impl CanonicalModel {
    pub fn new(
        n: usize,
        n_x: usize,
        regimes: Vec<RegimeBlocks>,
        constraints: Vec<ConstraintSpec>,
        lag: Option<LagBlocks>,
        predetermined: usize,
    ) -> Result<Self> {
        if n == 0 || n_x == 0 {
            return Err(Error::Validation(format!(
                "n = {n} and n_x = {n_x} must be positive"
            )));
        }
        if constraints.is_empty() {
            return Err(Error::Validation(
                "at least one constraint is required".into(),
            ));
        }
        let m = constraints.len();
        if m > 16 {
            return Err(Error::Validation(format!(
                "{m} constraints is more than supported"
            )));
        }
        if regimes.len() != 1 << m {
            return Err(dim_err("regimes", 1usize << m, regimes.len()));
        }
        for (r, blk) in regimes.iter().enumerate() {
            check_shape(&format!("A{r}"), &blk.a, n, n)?;
            check_shape(&format!("B{r}"), &blk.b, n, n)?;
            check_shape(&format!("C{r}"), &blk.c, n, n_x)?;
            check_shape(&format!("D{r}"), &blk.d, n, n_x)?;
        }
        for (j, con) in constraints.iter().enumerate() {
            check_len(&format!("constraints[{j}].a"), &con.a, n)?;
            check_len(&format!("constraints[{j}].b"), &con.b, n)?;
            check_len(&format!("constraints[{j}].c"), &con.c, n_x)?;
            check_len(&format!("constraints[{j}].d"), &con.d, n_x)?;
            if let Some(h) = &con.h {
                check_len(&format!("constraints[{j}].h"), h, n)?;
                match &lag {
                    None if h.iter().any(|v| *v != 0.0) => {
                        return Err(Error::Validation(format!(
                            "constraints[{j}].h is non-zero but the model has no lag blocks"
                        )))
                    }
                    Some(l) => {
                        let proj = l.g.dot(h) / l.g.norm_squared();
                        if (h - &l.g * proj).amax() > RANK_ONE_TOL * h.amax().max(1.0) {
                            return Err(Error::Validation(format!(
                                "constraints[{j}].h must be a multiple of the state selector g"
                            )));
                        }
                    }
                    None => {}
                }
            }
        }
        if let Some(l) = &lag {
            check_len("g", &l.g, n)?;
            if l.g.norm_squared() == 0.0 {
                return Err(Error::Validation("state selector g is zero".into()));
            }
            if l.h.len() != regimes.len() {
                return Err(dim_err(
                    "H",
                    format!("{} regime blocks", regimes.len()),
                    l.h.len(),
                ));
            }
            for (r, hm) in l.h.iter().enumerate() {
                let name = format!("H{r}");
                check_shape(&name, hm, n, n)?;
                let h = hm * &l.g / l.g.norm_squared();
                let rebuilt = &h * l.g.transpose();
                if (hm - rebuilt).amax() > RANK_ONE_TOL * hm.amax().max(1.0) {
                    return Err(Error::Validation(format!(
                        "`{name}` is not of the form h g' for the selector g"
                    )));
                }
            }
        }
        if predetermined >= n {
            return Err(Error::Validation(format!(
                "predetermined = {predetermined} must be below n = {n}"
            )));
        }
        Ok(Self {
            n,
            n_x,
            regimes,
            constraints,
            lag,
            predetermined,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    pub fn regime(&self, r: usize) -> &RegimeBlocks {
        &self.regimes[r]
    }

    pub fn regimes(&self) -> &[RegimeBlocks] {
        &self.regimes
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    pub fn lag(&self) -> Option<&LagBlocks> {
        self.lag.as_ref()
    }

    /// Number of leading entries of `Y_t` that are predetermined.
    pub fn predetermined(&self) -> usize {
        self.predetermined
    }

    /// Copy with a zero lag block selecting coordinate `index`, so that
    /// lag-free models can be fed to the backward solver.
    pub fn with_zero_lag(&self, index: usize) -> Result<Self> {
        let mut g = DVector::zeros(self.n);
        if index >= self.n {
            return Err(Error::Domain(format!(
                "selector index {index} out of range"
            )));
        }
        g[index] = 1.0;
        let lag = LagBlocks {
            h: vec![DMatrix::zeros(self.n, self.n); self.regimes.len()],
            g,
        };
        Self::new(
            self.n,
            self.n_x,
            self.regimes.clone(),
            self.constraints.clone(),
            Some(lag),
            self.predetermined,
        )
    }

    /// Copy with one extra exogenous coordinate carrying zero coefficients,
    /// for sunspot analysis.
    pub fn with_sunspot_coordinate(&self) -> Self {
        let widen = |m: &DMatrix<f64>| m.clone().insert_column(self.n_x, 0.0);
        let widen_v = |v: &DVector<f64>| v.clone().insert_row(self.n_x, 0.0);
        let regimes = self
            .regimes
            .iter()
            .map(|r| RegimeBlocks {
                a: r.a.clone(),
                b: r.b.clone(),
                c: widen(&r.c),
                d: widen(&r.d),
            })
            .collect();
        let constraints = self
            .constraints
            .iter()
            .map(|c| ConstraintSpec {
                c: widen_v(&c.c),
                d: widen_v(&c.d),
                ..c.clone()
            })
            .collect();
        Self {
            n: self.n,
            n_x: self.n_x + 1,
            regimes,
            constraints,
            lag: self.lag.clone(),
            predetermined: self.predetermined,
        }
    }

    /// True when exogenous coordinate `i` has a zero coefficient everywhere.
    pub fn exogenous_unused(&self, i: usize) -> bool {
        self.regimes.iter().all(|r| {
            r.c.column(i)
                .iter()
                .chain(r.d.column(i).iter())
                .all(|v| *v == 0.0)
        }) && self
            .constraints
            .iter()
            .all(|c| c.c[i] == 0.0 && c.d[i] == 0.0)
    }

    pub fn to_json(&self) -> Value {
        let mut doc = BTreeMap::new();
        doc.insert("n".to_string(), json!(self.n));
        doc.insert("n_x".to_string(), json!(self.n_x));
        for (r, blk) in self.regimes.iter().enumerate() {
            doc.insert(format!("A{r}"), json!(matrix_rows(&blk.a)));
            doc.insert(format!("B{r}"), json!(matrix_rows(&blk.b)));
            doc.insert(format!("C{r}"), json!(matrix_rows(&blk.c)));
            doc.insert(format!("D{r}"), json!(matrix_rows(&blk.d)));
        }
        let constraints: Vec<Value> = self
            .constraints
            .iter()
            .map(|c| {
                let mut m = serde_json::Map::new();
                m.insert("a".into(), json!(c.a.as_slice()));
                m.insert("b".into(), json!(c.b.as_slice()));
                m.insert("c".into(), json!(c.c.as_slice()));
                m.insert("d".into(), json!(c.d.as_slice()));
                if let Some(h) = &c.h {
                    m.insert("h".into(), json!(h.as_slice()));
                }
                Value::Object(m)
            })
            .collect();
        doc.insert("constraints".to_string(), Value::Array(constraints));
        if let Some(lag) = &self.lag {
            for (r, h) in lag.h.iter().enumerate() {
                doc.insert(format!("H{r}"), json!(matrix_rows(h)));
            }
            doc.insert("g".to_string(), json!(lag.g.as_slice()));
        }
        if self.predetermined > 0 {
            doc.insert("predetermined".to_string(), json!(self.predetermined));
        }
        Value::Object(doc.into_iter().collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        Self::from_value(&v)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Validation("model document must be an object".into()))?;
        let n = get_usize(obj, "n")?;
        let n_x = get_usize(obj, "n_x")?;
        let cons = obj
            .get("constraints")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Validation("missing `constraints` list".into()))?;
        if cons.is_empty() {
            return Err(Error::Validation("`constraints` list is empty".into()));
        }
        let mut constraints = Vec::with_capacity(cons.len());
        for (j, c) in cons.iter().enumerate() {
            let field = |name: &str, len: usize| -> Result<DVector<f64>> {
                let key = format!("constraints[{j}].{name}");
                let raw = c
                    .get(name)
                    .ok_or_else(|| Error::Validation(format!("missing `{key}`")))?;
                vector_from_slice(&key, &parse_vec(&key, raw)?, len)
            };
            let h = match c.get("h") {
                Some(raw) => {
                    let key = format!("constraints[{j}].h");
                    Some(vector_from_slice(&key, &parse_vec(&key, raw)?, n)?)
                }
                None => None,
            };
            constraints.push(ConstraintSpec {
                a: field("a", n)?,
                b: field("b", n)?,
                c: field("c", n_x)?,
                d: field("d", n_x)?,
                h,
            });
        }
        let count = 1usize << constraints.len().min(16);
        let mut regimes = Vec::with_capacity(count);
        for r in 0..count {
            regimes.push(RegimeBlocks {
                a: get_matrix(obj, &format!("A{r}"), n, n)?,
                b: get_matrix(obj, &format!("B{r}"), n, n)?,
                c: get_matrix(obj, &format!("C{r}"), n, n_x)?,
                d: get_matrix(obj, &format!("D{r}"), n, n_x)?,
            });
        }
        let has_h = (0..count).any(|r| obj.contains_key(&format!("H{r}")));
        let lag = if has_h || obj.contains_key("g") {
            let g_raw = obj
                .get("g")
                .ok_or_else(|| Error::Validation("lag blocks present but `g` is missing".into()))?;
            let g = vector_from_slice("g", &parse_vec("g", g_raw)?, n)?;
            let h = (0..count)
                .map(|r| {
                    let key = format!("H{r}");
                    if obj.contains_key(&key) {
                        get_matrix(obj, &key, n, n)
                    } else {
                        Ok(DMatrix::zeros(n, n))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Some(LagBlocks { h, g })
        } else {
            None
        };
        let predetermined = match obj.get("predetermined") {
            Some(_) => get_usize(obj, "predetermined")?,
            None => 0,
        };
        Self::new(n, n_x, regimes, constraints, lag, predetermined)
    }
}

fn check_shape(field: &str, m: &DMatrix<f64>, r: usize, c: usize) -> Result<()> {
    if m.nrows() != r || m.ncols() != c {
        return Err(dim_err(
            field,
            format!("{r}x{c}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "`{field}` has non-finite entries"
        )));
    }
    Ok(())
}

fn check_len(field: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(dim_err(
            field,
            format!("length {len}"),
            format!("length {}", v.len()),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "`{field}` has non-finite entries"
        )));
    }
    Ok(())
}

fn get_usize(obj: &serde_json::Map<String, Value>, key: &str) -> Result<usize> {
    obj.get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::Validation(format!("missing or non-integer `{key}`")))
}

fn parse_vec(key: &str, raw: &Value) -> Result<Vec<f64>> {
    raw.as_array()
        .ok_or_else(|| Error::Validation(format!("`{key}` must be an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::Validation(format!("`{key}` has a non-numeric entry")))
        })
        .collect()
}

fn get_matrix(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    r: usize,
    c: usize,
) -> Result<DMatrix<f64>> {
    let raw = obj
        .get(key)
        .ok_or_else(|| Error::Validation(format!("missing `{key}`")))?;
    let rows = raw
        .as_array()
        .ok_or_else(|| Error::Validation(format!("`{key}` must be an array of rows")))?
        .iter()
        .map(|row| parse_vec(key, row))
        .collect::<Result<Vec<_>>>()?;
    matrix_from_rows(key, &rows, r, c)
}
