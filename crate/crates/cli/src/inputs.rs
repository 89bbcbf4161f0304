use std::path::PathBuf;

use clap::{Args, ValueEnum};
use coherency::canonical::{
    build_acs, build_acs_str, build_nk_itr, build_nk_op, build_nk_tr, build_nk_ump,
    build_zlb_expectations, nk_demand_chain, reduce_nk,
};
use coherency::closedform::{calibration, NkParams};
use coherency::{CanonicalModel, MarkovChain, ReducedNk};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Acs,
    AcsStr,
    ZlbExpectations,
    NkTr,
    NkOp,
    NkUmp,
    NkItr,
}

impl ModelKind {
    fn is_nk(self) -> bool {
        matches!(self, Self::NkTr | Self::NkOp | Self::NkUmp | Self::NkItr)
    }
}

/// Structural parameters shared by the model builders and the calculators.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Calibration preset supplying beta, sigma, lambda, mu and the persistence p
    #[arg(long)]
    pub calib: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Steady-state nominal rate log(r pi_star)
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// Taylor-rule inflation coefficient
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long = "psi-x", allow_hyphen_values = true)]
    pub psi_x: Option<f64>,
    /// Interest-rate inertia
    #[arg(long)]
    pub phi: Option<f64>,
    /// Output-gap weight under optimal policy
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Pass-through of the shadow rate at the floor
    #[arg(long)]
    pub xi: Option<f64>,
}

impl ParamArgs {
    /// Defaults are the confidence-driven Mertens-Ravn calibration.
    pub fn nk(&self) -> Result<NkParams, CliError> {
        let mut par = NkParams::default();
        if let Some(name) = &self.calib {
            let c = calibration(name).map_err(|e| CliError::Usage(e.to_string()))?;
            par = c.nk_params(par.psi);
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut par.beta, self.beta);
        set(&mut par.sigma, self.sigma);
        set(&mut par.lambda, self.lambda);
        set(&mut par.mu, self.mu);
        set(&mut par.psi, self.psi);
        set(&mut par.psi_x, self.psi_x);
        set(&mut par.phi, self.phi);
        set(&mut par.gamma, self.gamma);
        set(&mut par.xi, self.xi);
        Ok(par)
    }

    pub fn require(&self, name: &str, v: Option<f64>) -> Result<f64, CliError> {
        v.ok_or_else(|| CliError::Usage(format!("--{name} is required here")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Built-in model
    #[arg(
        long,
        value_enum,
        required_unless_present = "model_file",
        conflicts_with = "model_file"
    )]
    pub model: Option<ModelKind>,
    /// Canonical model in JSON
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Shock chain: absorbing:p=..,rL=.. | rouwenhorst:rho=..,sigma=..,k=.. |
    /// two-state:p=..,q=..,x1=..,x2=.. | file:PATH
    #[arg(long)]
    pub chain: String,
}

pub struct Built {
    pub model: CanonicalModel,
    pub chain: MarkovChain,
    /// Reduced inflation system when the model and chain allow it.
    pub reduced: Option<ReducedNk>,
    pub inputs: Value,
}

#[derive(Debug, Clone, PartialEq)]
enum ChainSpec {
    Absorbing { p: f64, r_l: f64 },
    Rouwenhorst { rho: f64, sigma: f64, k: usize },
    TwoState { p: f64, q: f64, x1: f64, x2: f64 },
    File(PathBuf),
}

fn parse_chain(spec: &str) -> Result<ChainSpec, CliError> {
    let bad = |msg: String| CliError::Usage(format!("chain `{spec}`: {msg}"));
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| bad("expected KIND:ARGS".into()))?;
    if kind == "file" {
        return Ok(ChainSpec::File(PathBuf::from(rest)));
    }
    let mut fields = std::collections::BTreeMap::new();
    for item in rest.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| bad(format!("`{item}` is not KEY=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{value}` is not a number")))?;
        fields.insert(key.trim().to_string(), value);
    }
    let mut take = |key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| bad(format!("missing `{key}`")))
    };
    let parsed = match kind {
        "absorbing" => ChainSpec::Absorbing {
            p: take("p")?,
            r_l: take("rL")?,
        },
        "rouwenhorst" => {
            let k = take("k")?;
            if k.fract() != 0.0 || k < 2.0 {
                return Err(bad(format!("k = {k} must be an integer >= 2")));
            }
            ChainSpec::Rouwenhorst {
                rho: take("rho")?,
                sigma: take("sigma")?,
                k: k as usize,
            }
        }
        "two-state" => ChainSpec::TwoState {
            p: take("p")?,
            q: take("q")?,
            x1: take("x1")?,
            x2: take("x2")?,
        },
        other => return Err(bad(format!("unknown chain kind `{other}`"))),
    };
    if let Some(extra) = fields.keys().next() {
        return Err(bad(format!("unexpected key `{extra}`")));
    }
    Ok(parsed)
}

fn scalar_chain(spec: &ChainSpec) -> Result<MarkovChain, CliError> {
    Ok(match *spec {
        ChainSpec::Absorbing { p, r_l } => MarkovChain::absorbing(p, r_l)?,
        ChainSpec::Rouwenhorst { rho, sigma, k } => MarkovChain::rouwenhorst(rho, sigma, k)?,
        ChainSpec::TwoState { p, q, x1, x2 } => MarkovChain::two_state(p, q, &[x1], &[x2])?,
        ChainSpec::File(_) => unreachable!("file chains are used as given"),
    })
}

impl ModelArgs {
    pub fn build(&self) -> Result<Built, CliError> {
        let spec = parse_chain(&self.chain)?;
        let p = &self.params;
        let par = p.nk()?;
        let (model, kind) = match (&self.model_file, self.model) {
            (Some(path), _) => (CanonicalModel::load(path)?, None),
            (None, Some(kind)) => (self.build_builtin(kind, &par)?, Some(kind)),
            (None, None) => {
                return Err(CliError::Usage(
                    "one of --model or --model-file is required".into(),
                ))
            }
        };
        let n_x = model.n_x();
        let chain = match (&spec, kind) {
            (ChainSpec::File(path), _) => MarkovChain::from_json(&std::fs::read_to_string(path)?)?,
            // The absorbing chain describes the discount-factor shock; NK
            // models see it through the implied demand shock.
            (ChainSpec::Absorbing { .. }, Some(k)) if k.is_nk() => {
                nk_demand_chain(&scalar_chain(&spec)?, par.sigma, n_x)?
            }
            (_, Some(k)) if k.is_nk() => scalar_chain(&spec)?.lift(n_x, 1, Some(n_x - 1))?,
            _ if n_x == 1 => scalar_chain(&spec)?,
            _ => scalar_chain(&spec)?.lift(n_x, 0, Some(n_x - 1))?,
        };
        let reduced = match (kind, &spec) {
            (Some(ModelKind::NkTr), ChainSpec::Rouwenhorst { .. } | ChainSpec::TwoState { .. })
                if par.psi_x == 0.0 =>
            {
                Some(reduce_nk(
                    par.beta,
                    par.sigma,
                    par.lambda,
                    par.psi,
                    par.mu,
                    &scalar_chain(&spec)?,
                )?)
            }
            _ => None,
        };
        let inputs = json!({
            "model": self.model.map(|k| format!("{k:?}")).or_else(|| self.model_file.as_ref().map(|f| f.display().to_string())),
            "calib": p.calib,
            "params": serde_json::to_value(par).expect("parameters serialise"),
            "chain": self.chain,
        });
        Ok(Built {
            model,
            chain,
            reduced,
            inputs,
        })
    }

    fn build_builtin(&self, kind: ModelKind, par: &NkParams) -> Result<CanonicalModel, CliError> {
        let p = &self.params;
        let NkParams {
            beta,
            sigma,
            lambda,
            mu,
            psi_x,
            ..
        } = *par;
        let model = match kind {
            ModelKind::Acs => build_acs(p.require("psi", p.psi)?, mu)?,
            ModelKind::AcsStr => {
                build_acs_str(p.require("psi", p.psi)?, p.require("phi", p.phi)?, mu)?
            }
            ModelKind::ZlbExpectations => build_zlb_expectations(p.require("psi", p.psi)?, mu)?,
            ModelKind::NkTr => {
                build_nk_tr(beta, sigma, lambda, p.require("psi", p.psi)?, psi_x, mu)?
            }
            ModelKind::NkOp => build_nk_op(beta, sigma, lambda, p.require("gamma", p.gamma)?, mu)?,
            ModelKind::NkUmp => build_nk_ump(
                beta,
                sigma,
                lambda,
                p.require("psi", p.psi)?,
                psi_x,
                p.require("xi", p.xi)?,
                mu,
            )?,
            ModelKind::NkItr => build_nk_itr(
                beta,
                sigma,
                lambda,
                p.require("psi", p.psi)?,
                psi_x,
                p.require("phi", p.phi)?,
                mu,
            )?,
        };
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_specs_parse() {
        assert_eq!(
            parse_chain("absorbing:p=0.8,rL=-0.004").unwrap(),
            ChainSpec::Absorbing {
                p: 0.8,
                r_l: -0.004
            }
        );
        assert_eq!(
            parse_chain("rouwenhorst:rho=0.9,sigma=0.0007,k=3").unwrap(),
            ChainSpec::Rouwenhorst {
                rho: 0.9,
                sigma: 0.0007,
                k: 3
            }
        );
        assert_eq!(
            parse_chain("file:c.json").unwrap(),
            ChainSpec::File("c.json".into())
        );
        for bad in [
            "absorbing",
            "absorbing:p=0.8",
            "rouwenhorst:rho=0.9,sigma=1,k=2.5",
            "foo:x=1",
            "absorbing:p=1,rL=-1,z=2",
        ] {
            assert!(matches!(parse_chain(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
