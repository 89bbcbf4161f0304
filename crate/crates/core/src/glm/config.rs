use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Per-constraint slack sets over the `k` Markov states.
///
/// `masks[j]` has bit `i` set when constraint `j` is slack in state `i`.
/// The combined index packs constraint `j` into bits `j*k .. (j+1)*k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegimeConfig {
    k: usize,
    masks: Vec<u64>,
}

impl RegimeConfig {
    pub fn new(k: usize, masks: Vec<u64>) -> Result<Self> {
        if k == 0 || k > 63 {
            return Err(Error::Domain(format!("state count {k} outside 1..=63")));
        }
        if masks.is_empty() {
            return Err(Error::Domain(
                "a configuration needs at least one constraint".into(),
            ));
        }
        if let Some(m) = masks.iter().find(|m| **m >> k != 0) {
            return Err(Error::Domain(format!(
                "mask {m:#b} has bits beyond k = {k}"
            )));
        }
        Ok(Self { k, masks })
    }

    /// Single constraint, slack in the listed states.
    pub fn from_slack_states(k: usize, slack: &[usize]) -> Result<Self> {
        let mut mask = 0u64;
        for &i in slack {
            if i >= k {
                return Err(Error::Domain(format!("state {i} out of range for k = {k}")));
            }
            mask |= 1 << i;
        }
        Self::new(k, vec![mask])
    }

    pub fn from_index(index: u64, k: usize, m: usize) -> Self {
        let full = (1u64 << k) - 1;
        let masks = (0..m).map(|j| (index >> (j * k)) & full).collect();
        Self { k, masks }
    }

    pub fn all_slack(k: usize, m: usize) -> Self {
        Self {
            k,
            masks: vec![(1u64 << k) - 1; m],
        }
    }

    pub fn all_binding(k: usize, m: usize) -> Self {
        Self {
            k,
            masks: vec![0; m],
        }
    }

    pub fn index(&self) -> u64 {
        self.masks
            .iter()
            .enumerate()
            .fold(0, |acc, (j, m)| acc | (m << (j * self.k)))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn is_slack(&self, constraint: usize, state: usize) -> bool {
        (self.masks[constraint] >> state) & 1 == 1
    }

    /// Regime index of state `i`: bit `j` set when constraint `j` is slack.
    pub fn regime_of(&self, state: usize) -> usize {
        self.masks
            .iter()
            .enumerate()
            .fold(0, |acc, (j, m)| acc | ((((m >> state) & 1) as usize) << j))
    }

    pub fn slack_states(&self, constraint: usize) -> Vec<usize> {
        (0..self.k)
            .filter(|&i| self.is_slack(constraint, i))
            .collect()
    }

    /// `'1'` for slack, `'0'` for binding, states in order, constraints
    /// separated by `|`.
    pub fn bitstring(&self) -> String {
        self.masks
            .iter()
            .map(|m| {
                (0..self.k)
                    .map(|i| if (m >> i) & 1 == 1 { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('|').collect();
        let k = parts[0].len();
        let mut masks = Vec::with_capacity(parts.len());
        for p in &parts {
            if p.len() != k {
                return Err(Error::Domain(format!(
                    "configuration `{s}` has constraints of unequal length"
                )));
            }
            let mut mask = 0u64;
            for (i, ch) in p.chars().enumerate() {
                match ch {
                    '1' => mask |= 1 << i,
                    '0' => {}
                    _ => {
                        return Err(Error::Domain(format!(
                            "configuration `{s}` contains `{ch}`"
                        )))
                    }
                }
            }
            masks.push(mask);
        }
        Self::new(k, masks)
    }
}

impl fmt::Display for RegimeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

impl Ord for RegimeConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bitstring().cmp(&other.bitstring())
    }
}

impl PartialOrd for RegimeConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for RegimeConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.bitstring())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for idx in 0..64u64 {
            let c = RegimeConfig::from_index(idx, 3, 2);
            assert_eq!(c.index(), idx);
            assert_eq!(RegimeConfig::parse(&c.bitstring()).unwrap(), c);
        }
    }

    #[test]
    fn bitstring_layout() {
        let c = RegimeConfig::new(3, vec![0b001, 0b110]).unwrap();
        assert_eq!(c.bitstring(), "100|011");
        assert_eq!(c.regime_of(0), 1);
        assert_eq!(c.regime_of(1), 2);
        assert_eq!(c.regime_of(2), 2);
        assert_eq!(c.slack_states(1), vec![1, 2]);
    }

    #[test]
    fn rejects_out_of_range_bits() {
        assert!(RegimeConfig::new(2, vec![0b100]).is_err());
        assert!(RegimeConfig::parse("10|1").is_err());
        assert!(RegimeConfig::from_slack_states(2, &[2]).is_err());
    }
}
