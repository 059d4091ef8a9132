//! The two scenario grids: fixed `n` over a range of exponents, and growing `n`
//! at a fixed exponent.

use std::str::FromStr;

use crate::error::{SimError, SimResult};
use crate::experiment::{DimRule, ExperimentConfig, Family};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// `n = 400` (`200` for `iv`), `r = 0.1, 0.2, ..., 0.9`.
    FixedN,
    /// `n = 320 · 2^s` for `s = 0..=5`, `r = 2/3`.
    VaryN,
}

impl FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> SimResult<Self> {
        match s {
            "fixed-n" | "fixed_n" => Ok(Preset::FixedN),
            "vary-n" | "vary_n" => Ok(Preset::VaryN),
            other => Err(SimError::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Grid points as `(n, rule)` pairs.
pub fn grid(preset: Preset, family: Family) -> Vec<(usize, DimRule)> {
    match preset {
        Preset::FixedN => {
            let n = if family == Family::Iv { 200 } else { 400 };
            (1..=9)
                .map(|i| (n, DimRule::Exponent(i as f64 / 10.0)))
                .collect()
        }
        Preset::VaryN => (0..=5)
            .map(|s| (320 << s, DimRule::Exponent(2.0 / 3.0)))
            .collect(),
    }
}

/// Configurations for every grid point, cloned from `base` (whose `n` and
/// `dim_rule` are overwritten). Points that fail validation, such as `iv`
/// exponents giving `k < 2`, are returned separately with the reason.
pub fn sweep_configs(
    preset: Preset,
    base: &ExperimentConfig,
) -> (Vec<ExperimentConfig>, Vec<(ExperimentConfig, SimError)>) {
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (n, rule) in grid(preset, base.family) {
        let mut c = base.clone();
        c.n = n;
        c.dim_rule = rule;
        match c.validate() {
            Ok(()) => ok.push(c),
            Err(e) => skipped.push((c, e)),
        }
    }
    (ok, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = grid(Preset::FixedN, Family::Quad);
        assert_eq!(g.len(), 9);
        assert!(g.iter().all(|(n, _)| *n == 400));
        assert_eq!(grid(Preset::FixedN, Family::Iv)[0].0, 200);
        let ns: Vec<_> = grid(Preset::VaryN, Family::Logistic)
            .iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(ns, [320, 640, 1280, 2560, 5120, 10240]);
    }

    #[test]
    fn small_iv_points_are_skipped() {
        let base = ExperimentConfig::new(Family::Iv, 1, DimRule::Fixed(1), 10, 0);
        let (ok, skipped) = sweep_configs(Preset::FixedN, &base);
        // 200^0.2 ≈ 2.9 gives d = 2, 200^0.3 ≈ 4.9 gives d = 4
        assert_eq!(skipped.len(), 2);
        assert_eq!(ok.len(), 7);
    }
}
