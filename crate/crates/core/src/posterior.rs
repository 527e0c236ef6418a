//! Exact root posteriors given the deepest level of a finite tree.
//!
//! Two posterior modes are supported. [`PosteriorMode::Exact`] is Bayes'
//! rule under the broadcast measure. [`PosteriorMode::Paper`] runs the
//! uniform-fugacity recursion `Q = 1 / (1 + λ ∏ q_i)` all the way to the
//! root; its root odds are `(1 + ω)` times the exact ones.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tree::TreeShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMode {
    Exact,
    Paper,
}

impl PosteriorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PosteriorMode::Exact => "exact",
            PosteriorMode::Paper => "paper",
        }
    }
}

/// Leaf likelihoods of the root, `ln P(σ(L) = A | σ_root = s)` indexed by `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootLikelihood {
    pub log_likelihood: [f64; 2],
    /// `P(σ_root = 1 | A)`
    pub posterior_one: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + e^s)`, with `s = -∞` giving 0.
fn softplus(s: f64) -> f64 {
    if s == f64::NEG_INFINITY {
        0.0
    } else if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn check_leaves(params: &ModelParams, shape: &TreeShape, leaves: &[u8]) -> Result<()> {
    if params.k != shape.k {
        return Err(Error::Parameter(format!(
            "tree branching factor {} does not match model k={}",
            shape.k, params.k
        )));
    }
    if leaves.len() != shape.leaf_count() {
        return Err(Error::Parameter(format!(
            "expected {} leaf states, got {}",
            shape.leaf_count(),
            leaves.len()
        )));
    }
    if leaves.iter().any(|&s| s > 1) {
        return Err(Error::Parameter("leaf states must be 0 or 1".into()));
    }
    Ok(())
}

/// Upward likelihood recursion in log space followed by the stationary prior
/// at the root.
pub fn likelihood_pass(
    params: &ModelParams,
    shape: &TreeShape,
    leaves: &[u8],
) -> Result<RootLikelihood> {
    check_leaves(params, shape, leaves)?;
    let first_leaf = shape.first_leaf();
    let n = shape.vertex_count();
    let ln_m = params.transition.map(|row| row.map(f64::ln));
    let mut logl = vec![[0.0f64; 2]; n];
    for (v, &s) in leaves.iter().enumerate() {
        logl[first_leaf + v] = if s == 1 {
            [f64::NEG_INFINITY, 0.0]
        } else {
            [0.0, f64::NEG_INFINITY]
        };
    }
    for v in (0..first_leaf).rev() {
        let mut acc = [0.0f64; 2];
        for c in shape.children(v) {
            for (s, slot) in acc.iter_mut().enumerate() {
                let term = log_add(ln_m[s][0] + logl[c][0], ln_m[s][1] + logl[c][1]);
                *slot += term;
            }
        }
        logl[v] = acc;
    }
    let root = logl[0];
    let log_one = params.pi1.ln() + root[1];
    let log_total = log_add(params.pi0.ln() + root[0], log_one);
    if log_total == f64::NEG_INFINITY {
        return Err(Error::Conditioning(
            "leaf pattern has probability zero".into(),
        ));
    }
    Ok(RootLikelihood {
        log_likelihood: root,
        posterior_one: (log_one - log_total).exp(),
    })
}

/// Uniform-fugacity recursion; returns `Q = P(σ_root = 0 | A)` in paper mode.
pub fn paper_posterior_recursion(
    params: &ModelParams,
    shape: &TreeShape,
    leaves: &[u8],
) -> Result<f64> {
    check_leaves(params, shape, leaves)?;
    let first_leaf = shape.first_leaf();
    let ln_lambda = params.lambda_internal.ln();
    // ln q_v, q_v = P(σ_v = 0 | leaves below v)
    let mut ln_q = vec![0.0f64; shape.vertex_count()];
    for (v, &s) in leaves.iter().enumerate() {
        ln_q[first_leaf + v] = if s == 1 { f64::NEG_INFINITY } else { 0.0 };
    }
    for v in (0..first_leaf).rev() {
        let s = ln_lambda + shape.children(v).map(|c| ln_q[c]).sum::<f64>();
        ln_q[v] = -softplus(s);
    }
    Ok(ln_q[0].exp())
}

/// `P(σ_root = 1 | A)` under either mode.
pub fn root_posterior(
    params: &ModelParams,
    shape: &TreeShape,
    leaves: &[u8],
    mode: PosteriorMode,
) -> Result<f64> {
    match mode {
        PosteriorMode::Exact => Ok(likelihood_pass(params, shape, leaves)?.posterior_one),
        PosteriorMode::Paper => Ok(1.0 - paper_posterior_recursion(params, shape, leaves)?),
    }
}

/// Weighted magnetization `π01⁻¹ [P(σ_root = 1 | A)/π1 - 1]`.
pub fn magnetization_of(params: &ModelParams, posterior_one: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&posterior_one) {
        return Err(Error::Parameter(format!(
            "posterior probability must lie in [0, 1], got {posterior_one}"
        )));
    }
    Ok((posterior_one / params.pi1 - 1.0) / params.pi01)
}

/// Inverse of [`magnetization_of`].
pub fn posterior_of_magnetization(params: &ModelParams, x: f64) -> f64 {
    params.pi1 * (1.0 + params.pi01 * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{brute_force_posterior, enumerate_configurations};

    fn p(k: usize, w: f64) -> ModelParams {
        ModelParams::derive_from_omega(k, w).unwrap()
    }

    #[test]
    fn likelihood_hand_values() {
        let params = p(2, 1.0);
        let s = TreeShape::new(2, 1).unwrap();
        let r = likelihood_pass(&params, &s, &[0, 0]).unwrap();
        assert!((r.posterior_one - 2.0 / 3.0).abs() < 1e-15);
        for leaves in [[0, 1], [1, 0], [1, 1]] {
            assert_eq!(
                likelihood_pass(&params, &s, &leaves).unwrap().posterior_one,
                0.0
            );
        }
    }

    #[test]
    fn likelihood_matches_brute_force_k2_depth2() {
        let params = p(2, 1.0);
        let s = TreeShape::new(2, 2).unwrap();
        let lp = likelihood_pass(&params, &s, &[0; 4]).unwrap().posterior_one;
        let bf = brute_force_posterior(&params, &s, &[0; 4]).unwrap();
        assert!((lp - bf).abs() < 1e-12);
    }

    #[test]
    fn depth_zero_tree_reads_the_root() {
        let params = p(3, 0.5);
        let s = TreeShape::new(3, 0).unwrap();
        assert_eq!(
            likelihood_pass(&params, &s, &[1]).unwrap().posterior_one,
            1.0
        );
        assert_eq!(
            likelihood_pass(&params, &s, &[0]).unwrap().posterior_one,
            0.0
        );
        assert_eq!(paper_posterior_recursion(&params, &s, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn paper_recursion_hand_values() {
        let params = p(2, 1.0);
        let s = TreeShape::new(2, 1).unwrap();
        assert!((paper_posterior_recursion(&params, &s, &[0, 0]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            paper_posterior_recursion(&params, &s, &[0, 1]).unwrap(),
            1.0
        );
        // one depth-1 subtree all zero (q = 1/5), the other with a leaf at 1 (q = 1)
        let s = TreeShape::new(2, 2).unwrap();
        let q = paper_posterior_recursion(&params, &s, &[0, 0, 1, 0]).unwrap();
        assert!((q - 5.0 / 9.0).abs() < 1e-15);
        let lambda = params.lambda_internal;
        assert!((q - 0.5 * (1.0 + 1.0 / (1.0 + 2.0 * lambda))).abs() < 1e-15);
    }

    #[test]
    fn mode_bridge_odds_factor() {
        for (k, d, w) in [(2, 2, 1.0), (3, 2, 0.3), (2, 3, 0.7), (1, 4, 2.0)] {
            let params = p(k, w);
            let s = TreeShape::new(k, d).unwrap();
            for a in enumerate_configurations(&s, true).unwrap() {
                let pe = likelihood_pass(&params, &s, &a.states)
                    .unwrap()
                    .posterior_one;
                let q = paper_posterior_recursion(&params, &s, &a.states).unwrap();
                if pe == 0.0 {
                    assert_eq!(q, 1.0);
                    continue;
                }
                let odds_exact = pe / (1.0 - pe);
                let odds_paper = (1.0 - q) / q;
                assert!((odds_paper - (1.0 + w) * odds_exact).abs() < 1e-10 * odds_paper);
            }
        }
    }

    #[test]
    fn magnetization_values() {
        let params = p(2, 1.0);
        assert!((magnetization_of(&params, 2.0 / 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(magnetization_of(&params, params.pi1).unwrap(), 0.0);
        assert_eq!(magnetization_of(&params, 1.0).unwrap(), 1.0);
        let x0 = magnetization_of(&params, 0.0).unwrap();
        assert!((x0 + 0.5).abs() < 1e-15);
        assert!((x0 - params.theta).abs() < 1e-15);
        assert!(magnetization_of(&params, 1.5).is_err());
        assert!(magnetization_of(&params, f64::NAN).is_err());
    }

    #[test]
    fn magnetization_round_trip() {
        let params = p(4, 0.37);
        for i in 0..=20 {
            let pr = i as f64 / 20.0;
            let x = magnetization_of(&params, pr).unwrap();
            assert!((posterior_of_magnetization(&params, x) - pr).abs() < 1e-14);
        }
    }

    #[test]
    fn leaf_count_is_checked() {
        let params = p(2, 1.0);
        let s = TreeShape::new(2, 2).unwrap();
        assert!(likelihood_pass(&params, &s, &[0, 0]).is_err());
        assert!(paper_posterior_recursion(&params, &s, &[0, 0, 0, 2]).is_err());
    }
}
