//! Gray-code enumeration for the reduced NK system, where consecutive
//! configurations differ by one diagonal entry of `A_J = Q + c E_J`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{config_count, CoherencyOptions, CoherencyReport, RegimeConfig, Tally, Witness};
use crate::canonical::ReducedNk;
use crate::error::Result;

const RESEED_EVERY: u32 = 1024;
const PIVOT_FLOOR: f64 = 1e-8;
const INNER_BITS: usize = 12;

/// Running `det A_J` and `A_J^{-1}` under single-diagonal updates.
pub(crate) struct GrayState {
    q: DMatrix<f64>,
    addon: f64,
    mask: u64,
    pub(crate) det: f64,
    pub(crate) inv: Option<DMatrix<f64>>,
    row_sq: Vec<f64>,
    since_seed: u32,
}

impl GrayState {
    pub(crate) fn new(q: &DMatrix<f64>, addon: f64, mask: u64) -> Self {
        let mut s = Self {
            q: q.clone(),
            addon,
            mask,
            det: 0.0,
            inv: None,
            row_sq: vec![0.0; q.nrows()],
            since_seed: 0,
        };
        s.reseed();
        s
    }

    pub(crate) fn matrix(&self) -> DMatrix<f64> {
        let mut a = self.q.clone();
        for i in 0..a.nrows() {
            if (self.mask >> i) & 1 == 1 {
                a[(i, i)] += self.addon;
            }
        }
        a
    }

    fn diag(&self, i: usize) -> f64 {
        self.q[(i, i)]
            + if (self.mask >> i) & 1 == 1 {
                self.addon
            } else {
                0.0
            }
    }

    fn reseed(&mut self) {
        let a = self.matrix();
        for i in 0..a.nrows() {
            self.row_sq[i] = a.row(i).norm_squared();
        }
        let lu = a.lu();
        self.det = lu.determinant();
        self.inv = if self.det != 0.0 {
            lu.try_inverse()
        } else {
            None
        };
        self.since_seed = 0;
    }

    /// Toggle state `i` between binding and slack.
    pub(crate) fn flip(&mut self, i: usize) {
        let before = self.diag(i);
        self.mask ^= 1 << i;
        let after = self.diag(i);
        self.row_sq[i] += after * after - before * before;
        let delta = if (self.mask >> i) & 1 == 1 {
            self.addon
        } else {
            -self.addon
        };
        self.since_seed += 1;
        let factor = self.inv.as_ref().map(|inv| 1.0 + delta * inv[(i, i)]);
        match (factor, self.inv.as_mut()) {
            (Some(f), Some(inv)) if f.abs() > PIVOT_FLOOR && self.since_seed < RESEED_EVERY => {
                self.det *= f;
                let col = inv.column(i).clone_owned();
                let row = inv.row(i).clone_owned();
                inv.ger(-delta / f, &col, &row.transpose(), 1.0);
            }
            _ => self.reseed(),
        }
    }

    /// `det_tol` times the Hadamard bound of the current matrix.
    pub(crate) fn det_threshold(&self, det_tol: f64) -> f64 {
        det_tol
            * self
                .row_sq
                .iter()
                .map(|v| v.max(0.0).sqrt())
                .product::<f64>()
    }

    pub(crate) fn mask(&self) -> u64 {
        self.mask
    }
}

/// Bit toggled at each step of a reflected Gray code over `inner_bits` bits,
/// starting from the all-zero pattern.
pub(crate) fn gray_flips(inner_bits: usize) -> impl Iterator<Item = usize> {
    (1u64..(1u64 << inner_bits)).map(|t| t.trailing_zeros() as usize)
}

pub(crate) fn inner_bits(k: usize) -> usize {
    k.min(INNER_BITS)
}

/// Same verdict as [`super::check_coherency`] on the reduced system, with
/// determinants maintained by rank-one updates in Gray-code order.
pub fn check_coherency_fast(sys: &ReducedNk, opts: &CoherencyOptions) -> Result<CoherencyReport> {
    let k = sys.k();
    let total = config_count(k, 1, opts.cap)?;
    let inner = inner_bits(k);
    let chunks = total >> inner;
    let keep = total <= opts.record_limit;
    let addon = sys.slack_addon();
    let tally = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let base = c << inner;
            let mut state = GrayState::new(sys.q(), addon, base);
            let mut t = Tally::default();
            let record = |st: &GrayState, t: &mut Tally| {
                let threshold = st.det_threshold(opts.det_tol);
                let cfg = RegimeConfig::from_index(st.mask(), k, 1);
                t.record(
                    Witness {
                        order: st.mask(),
                        config: cfg,
                        det: st.det,
                    },
                    threshold,
                    keep,
                );
            };
            record(&state, &mut t);
            for bit in gray_flips(inner) {
                state.flip(bit);
                record(&state, &mut t);
            }
            t
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), Tally::merge);
    Ok(tally.into_report(k, 1, 1, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::reduce_nk;
    use crate::glm::{check_coherency, RegimeSystem};
    use crate::markov::MarkovChain;

    #[test]
    fn gray_visits_every_mask_once() {
        let mut seen = [false; 1 << 5];
        let mut mask = 0u64;
        seen[0] = true;
        for bit in gray_flips(5) {
            mask ^= 1 << bit;
            assert!(!seen[mask as usize]);
            seen[mask as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn running_determinant_tracks_lu() {
        let chain = MarkovChain::rouwenhorst(0.8, 0.002, 7).unwrap();
        let sys = reduce_nk(0.99, 1.0, 0.2, 0.9, 0.01, &chain).unwrap();
        let mut st = GrayState::new(sys.q(), sys.slack_addon(), 0);
        for bit in gray_flips(7) {
            st.flip(bit);
            let a = sys.matrix(&RegimeConfig::from_index(st.mask(), 7, 1));
            let det = a.clone().lu().determinant();
            assert!(
                (st.det - det).abs() <= 1e-10 * det.abs().max(1e-300),
                "{} vs {det}",
                st.det
            );
            let bound = crate::linalg::det_threshold(&a, 1.0);
            assert!((st.det_threshold(1.0) - bound).abs() < 1e-12 * bound);
        }
    }

    #[test]
    fn fast_report_equals_generic_report() {
        let chain = MarkovChain::rouwenhorst(0.7, 0.0011, 6).unwrap();
        for psi in [0.2, 0.49, 0.6, 1.5] {
            let sys = reduce_nk(0.99, 1.0, 0.4479, psi, 0.01, &chain).unwrap();
            let opts = CoherencyOptions::default();
            let a = check_coherency_fast(&sys, &opts).unwrap();
            let b = check_coherency(&sys, &opts).unwrap();
            assert_eq!(a.verdict, b.verdict);
            assert_eq!(
                (a.positive, a.negative, a.degenerate),
                (b.positive, b.negative, b.degenerate)
            );
            assert_eq!(
                a.positive_witness.map(|w| w.config),
                b.positive_witness.map(|w| w.config)
            );
        }
    }
}
