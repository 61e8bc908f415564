//! Two-visible toy RBM with a single shared coupling `w`.
//!
//! With zero data means the marginal is `(1 + alpha_s(w) v1 v2) / 4`, so the
//! likelihood depends on `w` only through the pair correlation `alpha_s(w)`,
//! and the maximizer solves `alpha_s(w*) = beta`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_phi, HiddenLevels};

/// Upper end of the bisection bracket for `w*`.
pub const W_STAR_BRACKET: f64 = 64.0;
pub const W_STAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub levels: HiddenLevels,
    pub n_hidden: usize,
    /// Data correlation of the two visible units, in `[0, 1)`.
    pub beta: f64,
}

impl ToySpec {
    pub fn new(levels: HiddenLevels, n_hidden: usize, beta: f64) -> Result<Self> {
        if n_hidden == 0 {
            return Err(Error::InvalidConfig("toy model needs at least one hidden unit".into()));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Domain(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self {
            levels,
            n_hidden,
            beta,
        })
    }
}

/// Pair correlation `alpha_s(w) = tanh(|H| (ln phi_s(2w) - ln 2) / 2)`.
pub fn alpha(spec: &ToySpec, w: f64) -> Result<f64> {
    let gap = log_phi(spec.levels, 2.0 * w)? - LN_2;
    Ok((spec.n_hidden as f64 * gap / 2.0).tanh())
}

/// The unique `w >= 0` with `alpha_s(w) = beta`, by bisection on `[0, 64]`.
pub fn solve_w_star(spec: &ToySpec) -> Result<f64> {
    if !(0.0..1.0).contains(&spec.beta) {
        return Err(Error::Domain(format!("beta must lie in [0, 1), got {}", spec.beta)));
    }
    if spec.beta == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, W_STAR_BRACKET);
    while hi - lo > W_STAR_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if alpha(spec, mid)? < spec.beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Toy log-likelihood `sum_{v1,v2} (1 + beta v1 v2)/4 * ln((1 + alpha v1 v2)/4)`.
pub fn toy_log_likelihood(spec: &ToySpec, w: f64) -> Result<f64> {
    let a = alpha(spec, w)?;
    let beta = spec.beta;
    // v1 v2 = +1 occurs for two of the four states, -1 for the other two.
    let same = 2.0 * (1.0 + beta) / 4.0 * ((1.0 + a) / 4.0).ln();
    let diff = 2.0 * (1.0 - beta) / 4.0 * ((1.0 - a) / 4.0).ln();
    Ok(same + diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::{log_marginals_exact, RbmParams};
    use crate::special::level_value;
    use approx::assert_relative_eq;
    use ndarray::{Array1, Array2};

    fn spec(s: Option<u32>, h: usize, beta: f64) -> ToySpec {
        let levels = s.map_or(HiddenLevels::Infinite, |s| HiddenLevels::finite(s).unwrap());
        ToySpec::new(levels, h, beta).unwrap()
    }

    #[test]
    fn alpha_vanishes_at_origin() {
        for s in [Some(1), Some(3), None] {
            for h in [1, 2, 7] {
                assert_eq!(alpha(&spec(s, h, 0.0), 0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn binary_alpha_closed_form() {
        let sp = spec(Some(1), 2, 0.0);
        for w in [0.1, 0.6585, 1.3] {
            assert_relative_eq!(alpha(&sp, w).unwrap(), (2.0 * w).cosh().ln().tanh(), epsilon = 1e-14);
        }
        assert!((alpha(&sp, 0.6585).unwrap() - 0.6).abs() < 1e-3);
    }

    #[test]
    fn alpha_matches_brute_force_joint() {
        // s = 2, |H| = 2, w = 0.5: sum over v1, v2 and h in X(2)^2.
        let (s, w) = (2u32, 0.5);
        let mut z = 0.0;
        let mut corr = 0.0;
        for v1 in [-1.0, 1.0] {
            for v2 in [-1.0, 1.0] {
                for k1 in 0..=s {
                    for k2 in 0..=s {
                        let (h1, h2) = (level_value(s, k1), level_value(s, k2));
                        let weight = (w * (v1 + v2) * (h1 + h2)).exp();
                        z += weight;
                        corr += v1 * v2 * weight;
                    }
                }
            }
        }
        assert_relative_eq!(alpha(&spec(Some(2), 2, 0.0), w).unwrap(), corr / z, epsilon = 1e-14);
    }

    #[test]
    fn alpha_matches_general_rbm_marginal() {
        // The toy model is an RBM with zero biases and all couplings equal to w.
        for levels in [HiddenLevels::finite(4).unwrap(), HiddenLevels::Infinite] {
            let w = 0.8;
            let p = RbmParams::new(Array1::zeros(2), Array1::zeros(3), Array2::from_elem((2, 3), w), levels).unwrap();
            let lm = log_marginals_exact(&p).unwrap();
            // states: 0 = (-,-), 1 = (+,-), 2 = (-,+), 3 = (+,+)
            let corr = lm[0].exp() - lm[1].exp() - lm[2].exp() + lm[3].exp();
            let sp = ToySpec::new(levels, 3, 0.0).unwrap();
            assert_relative_eq!(alpha(&sp, w).unwrap(), corr, epsilon = 1e-13);
        }
    }

    #[test]
    fn alpha_properties() {
        let levels = [Some(1), Some(2), Some(4), Some(8), None];
        for h in [1, 2, 5] {
            for w in (1..=100).map(|i| f64::from(i) * 0.1) {
                for s in levels {
                    let sp = spec(s, h, 0.0);
                    assert!((alpha(&sp, w).unwrap() - alpha(&sp, -w).unwrap()).abs() <= 1e-12);
                    // alpha = tanh(|H| gap / 2): near w = 10 neighbouring values of alpha
                    // round to the same double, so strictness is checked on the gap.
                    let gap = |w: f64| log_phi(sp.levels, 2.0 * w).unwrap();
                    assert!(gap(w) > gap(w - 0.1), "s={:?} h={h} w={w}", s);
                    assert!(alpha(&sp, w).unwrap() >= alpha(&sp, w - 0.1).unwrap());
                    if alpha(&sp, w).unwrap() < 1.0 - 1e-12 {
                        assert!(alpha(&sp, w).unwrap() > alpha(&sp, w - 0.1).unwrap());
                    }
                }
                for pair in levels.windows(2) {
                    let lower = alpha(&spec(pair[0], h, 0.0), w).unwrap();
                    let higher = alpha(&spec(pair[1], h, 0.0), w).unwrap();
                    assert!(lower > higher || lower == 1.0, "h={h} w={w}");
                }
            }
        }
    }

    #[test]
    fn w_star_edge_cases() {
        assert_eq!(solve_w_star(&spec(Some(2), 2, 0.0)).unwrap(), 0.0);
        assert!(ToySpec::new(HiddenLevels::Infinite, 2, 1.0).is_err());
        assert!(ToySpec::new(HiddenLevels::Infinite, 2, -0.1).is_err());
        let bad = ToySpec {
            levels: HiddenLevels::Infinite,
            n_hidden: 2,
            beta: 1.0,
        };
        assert!(matches!(solve_w_star(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn w_star_round_trip() {
        for s in [Some(1), Some(2), Some(4), None] {
            for beta in [0.05, 0.2, 0.6, 0.95, 0.999_999] {
                for h in [1, 2, 10] {
                    let sp = spec(s, h, beta);
                    let w = solve_w_star(&sp).unwrap();
                    assert!((alpha(&sp, w).unwrap() - beta).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn w_star_moves_outward_with_levels() {
        for beta in [0.2, 0.4, 0.6, 0.8] {
            let ws: Vec<f64> = [Some(1), Some(2), Some(4), None]
                .iter()
                .map(|&s| solve_w_star(&spec(s, 2, beta)).unwrap())
                .collect();
            assert!(ws.windows(2).all(|p| p[0] < p[1]), "beta={beta} {ws:?}");
        }
    }

    #[test]
    fn log_likelihood_at_origin_and_optimum() {
        let sp = spec(Some(4), 2, 0.6);
        assert_relative_eq!(toy_log_likelihood(&sp, 0.0).unwrap(), (0.25f64).ln(), epsilon = 1e-15);
        let target = 0.8 * 0.4f64.ln() + 0.2 * 0.1f64.ln();
        let w = solve_w_star(&sp).unwrap();
        assert!((toy_log_likelihood(&sp, w).unwrap() - target).abs() < 1e-9);
        for i in -300..=300 {
            let x = f64::from(i) * 0.01;
            assert!(toy_log_likelihood(&sp, x).unwrap() <= toy_log_likelihood(&sp, w).unwrap() + 1e-15);
        }
    }
}
