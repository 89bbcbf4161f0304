//! Determinant-sign coherency test.
//!
//! Stacking the equilibrium conditions over the Markov states gives one
//! linear system `A_J vec(Y) = rhs_J` per regime configuration `J`. The
//! piecewise-linear map is a bijection iff every `det A_J` has the same strict
//! sign; the model then has exactly one MSV solution for every shock support.

mod cones;
mod config;
mod cutoff;
mod fast;
mod system;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{det_threshold, is_degenerate};

pub use cones::{cone_is_feasible, feasible_cones, zlb_expectations_cones};
pub use config::RegimeConfig;
pub use cutoff::{find_psi_bar, CutoffResult, CutoffStatus};
pub use fast::check_coherency_fast;
pub(crate) use fast::{gray_flips, inner_bits, GrayState};
pub(crate) use system::check_config;
pub use system::{
    assemble_a, assemble_rhs, implied_config, piecewise_residual, CanonicalSystem, RegimeSystem,
};

pub const DEFAULT_DET_TOL: f64 = 1e-10;
pub const DEFAULT_CAP: u64 = 1 << 24;
const CHUNK: u64 = 1 << 12;
const DEGENERATE_LIST_LIMIT: usize = 256;

/// Which regime configurations enter the test.
#[derive(Debug, Clone, PartialEq)]
pub enum ConeSelection {
    /// Every configuration for one constraint, feasible cones otherwise.
    Auto,
    All,
    /// Drop configurations whose cone has empty interior.
    Feasible,
    List(Vec<RegimeConfig>),
}

#[derive(Debug, Clone)]
pub struct CoherencyOptions {
    pub det_tol: f64,
    pub cap: u64,
    pub cones: ConeSelection,
    /// Record every determinant when at most this many are evaluated.
    pub record_limit: u64,
}

impl Default for CoherencyOptions {
    fn default() -> Self {
        Self {
            det_tol: DEFAULT_DET_TOL,
            cap: DEFAULT_CAP,
            cones: ConeSelection::Auto,
            record_limit: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CoherentAndComplete,
    IncoherentOrIncomplete,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    #[serde(skip)]
    pub(crate) order: u64,
    pub config: RegimeConfig,
    pub det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherencyReport {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub evaluated: u64,
    pub skipped: u64,
    pub positive: u64,
    pub negative: u64,
    pub degenerate: u64,
    pub verdict: Verdict,
    pub positive_witness: Option<Witness>,
    pub negative_witness: Option<Witness>,
    pub min_abs_witness: Option<Witness>,
    pub max_abs_witness: Option<Witness>,
    /// Lowest-ordered degenerate configurations (at most 256).
    pub degenerate_configs: Vec<Witness>,
    /// All determinants, when few enough were evaluated.
    pub determinants: Vec<Witness>,
}

impl CoherencyReport {
    pub fn is_coherent(&self) -> bool {
        self.verdict == Verdict::CoherentAndComplete
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct Tally {
    evaluated: u64,
    positive: u64,
    negative: u64,
    degenerate: u64,
    positive_witness: Option<Witness>,
    negative_witness: Option<Witness>,
    min_abs: Option<Witness>,
    max_abs: Option<Witness>,
    degenerate_configs: Vec<Witness>,
    entries: Vec<Witness>,
}

fn keep_first(slot: &mut Option<Witness>, w: Witness) {
    if slot.as_ref().is_none_or(|s| w.order < s.order) {
        *slot = Some(w);
    }
}

impl Tally {
    pub(crate) fn record(&mut self, w: Witness, threshold: f64, keep_entry: bool) {
        self.evaluated += 1;
        let abs = w.det.abs();
        if is_degenerate(w.det, threshold) {
            self.degenerate += 1;
            if self.degenerate_configs.len() < DEGENERATE_LIST_LIMIT {
                self.degenerate_configs.push(w.clone());
            }
        } else if w.det > 0.0 {
            self.positive += 1;
            keep_first(&mut self.positive_witness, w.clone());
        } else {
            self.negative += 1;
            keep_first(&mut self.negative_witness, w.clone());
        }
        let smaller = |s: &Witness| abs < s.det.abs() || (abs == s.det.abs() && w.order < s.order);
        if self.min_abs.as_ref().is_none_or(smaller) {
            self.min_abs = Some(w.clone());
        }
        let larger = |s: &Witness| abs > s.det.abs() || (abs == s.det.abs() && w.order < s.order);
        if self.max_abs.as_ref().is_none_or(larger) {
            self.max_abs = Some(w.clone());
        }
        if keep_entry {
            self.entries.push(w);
        }
    }

    pub(crate) fn merge(mut self, other: Tally) -> Tally {
        self.evaluated += other.evaluated;
        self.positive += other.positive;
        self.negative += other.negative;
        self.degenerate += other.degenerate;
        if let Some(w) = other.positive_witness {
            keep_first(&mut self.positive_witness, w);
        }
        if let Some(w) = other.negative_witness {
            keep_first(&mut self.negative_witness, w);
        }
        if let Some(w) = other.min_abs {
            let a = w.det.abs();
            if self
                .min_abs
                .as_ref()
                .is_none_or(|s| a < s.det.abs() || (a == s.det.abs() && w.order < s.order))
            {
                self.min_abs = Some(w);
            }
        }
        if let Some(w) = other.max_abs {
            let a = w.det.abs();
            if self
                .max_abs
                .as_ref()
                .is_none_or(|s| a > s.det.abs() || (a == s.det.abs() && w.order < s.order))
            {
                self.max_abs = Some(w);
            }
        }
        self.degenerate_configs.extend(other.degenerate_configs);
        self.entries.extend(other.entries);
        self
    }

    pub(crate) fn into_report(
        mut self,
        k: usize,
        n: usize,
        m: usize,
        skipped: u64,
    ) -> CoherencyReport {
        self.degenerate_configs.sort_by_key(|w| w.order);
        self.degenerate_configs.truncate(DEGENERATE_LIST_LIMIT);
        self.entries.sort_by_key(|w| w.order);
        let verdict = if self.degenerate > 0 {
            Verdict::Degenerate
        } else if self.positive > 0 && self.negative > 0 {
            Verdict::IncoherentOrIncomplete
        } else {
            Verdict::CoherentAndComplete
        };
        CoherencyReport {
            k,
            n,
            m,
            evaluated: self.evaluated,
            skipped,
            positive: self.positive,
            negative: self.negative,
            degenerate: self.degenerate,
            verdict,
            positive_witness: self.positive_witness,
            negative_witness: self.negative_witness,
            min_abs_witness: self.min_abs,
            max_abs_witness: self.max_abs,
            degenerate_configs: self.degenerate_configs,
            determinants: self.entries,
        }
    }
}

/// Number of configurations `2^(m k)`, refusing anything above `cap`.
pub(crate) fn config_count(k: usize, m: usize, cap: u64) -> Result<u64> {
    let bits = (k * m) as u32;
    let required: u128 = 1u128 << bits.min(127);
    if bits >= 64 || required > cap as u128 {
        return Err(Error::CapExceeded { required, cap });
    }
    Ok(required as u64)
}

/// Configurations selected by `cones`, or `None` when every index in
/// `0..2^(mk)` is used.
pub(crate) fn selected_configs<S: RegimeSystem + ?Sized>(
    sys: &S,
    cones: &ConeSelection,
    cap: u64,
) -> Result<Option<Vec<RegimeConfig>>> {
    let use_lp = match cones {
        ConeSelection::All => false,
        ConeSelection::Auto => sys.m() > 1,
        ConeSelection::Feasible => true,
        ConeSelection::List(list) => {
            for cfg in list {
                check_config(sys, cfg)?;
            }
            return Ok(Some(list.clone()));
        }
    };
    if use_lp {
        Ok(Some(feasible_cones(sys, cap)?))
    } else {
        Ok(None)
    }
}

pub fn check_coherency<S: RegimeSystem + ?Sized>(
    sys: &S,
    opts: &CoherencyOptions,
) -> Result<CoherencyReport> {
    let (k, n, m) = (sys.k(), sys.n(), sys.m());
    let total = config_count(k, m, opts.cap)?;
    let eval = |order: u64, cfg: RegimeConfig, keep: bool, tally: &mut Tally| {
        let a = sys.matrix(&cfg);
        let threshold = det_threshold(&a, opts.det_tol);
        let det = a.lu().determinant();
        tally.record(
            Witness {
                order,
                config: cfg,
                det,
            },
            threshold,
            keep,
        );
    };
    match selected_configs(sys, &opts.cones, opts.cap)? {
        Some(list) => {
            let keep = list.len() as u64 <= opts.record_limit;
            let tally = list
                .par_iter()
                .enumerate()
                .fold(Tally::default, |mut t, (pos, cfg)| {
                    eval(pos as u64, cfg.clone(), keep, &mut t);
                    t
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(Tally::default(), Tally::merge);
            let skipped = total - list.len() as u64;
            Ok(tally.into_report(k, n, m, skipped))
        }
        None => {
            let keep = total <= opts.record_limit;
            let chunks = total.div_ceil(CHUNK);
            let tally = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut t = Tally::default();
                    for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                        eval(idx, RegimeConfig::from_index(idx, k, m), keep, &mut t);
                    }
                    t
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(Tally::default(), Tally::merge);
            Ok(tally.into_report(k, n, m, 0))
        }
    }
}
