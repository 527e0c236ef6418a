//! Parametrization of the hardcore broadcast model on the k-ary tree.
//!
//! A model instance is fixed by the branching factor `k` and the broadcast
//! weight `omega`. Everything else (fugacities, stationary law, transition
//! matrix, second eigenvalue) is derived once in [`ModelParams`] and shared by
//! the rest of the crate.

use serde::Serialize;

use crate::error::{Error, Result};

/// `ln 2 - ln ln 2`, the boundary value of the β parameter.
pub const BETA_STAR: f64 = 1.059_660_101_141_609_6;

/// Non-reconstruction holds below this fugacity for every `k`.
pub const MARTIN_LAMBDA: f64 = std::f64::consts::E - 1.0;

/// Label attached to every evaluation of the asymptotic bounds.
pub const ASYMPTOTIC_NOTE: &str = "asymptotic bound, o(1) dropped";

/// All scalar parameters of one `(k, omega)` instance.
///
/// The transition matrix is indexed `transition[parent][child]` with state
/// `1` meaning occupied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub k: usize,
    pub omega: f64,
    /// Fugacity of an internal vertex of the k-ary tree, `ω(1+ω)^k`.
    pub lambda_internal: f64,
    /// Effective fugacity at the root, `ω(1+ω)^(k-1)`.
    pub lambda_root: f64,
    pub pi1: f64,
    pub pi0: f64,
    /// `π0 / π1`
    pub pi01: f64,
    /// `π01 - 1 = 1/ω`
    pub delta: f64,
    /// Second eigenvalue of the transition matrix, `-ω/(1+ω)`.
    pub theta: f64,
    pub transition: [[f64; 2]; 2],
}

impl ModelParams {
    pub fn derive_from_omega(k: usize, omega: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter(
                "branching factor k must be at least 1".into(),
            ));
        }
        if !omega.is_finite() || omega <= 0.0 {
            return Err(Error::Parameter(format!(
                "omega must be positive and finite, got {omega}"
            )));
        }
        let ln_growth = omega.ln_1p();
        let lambda_internal = omega * (k as f64 * ln_growth).exp();
        let lambda_root = omega * ((k - 1) as f64 * ln_growth).exp();
        if !lambda_internal.is_finite() {
            return Err(Error::Parameter(format!(
                "fugacity omega(1+omega)^k overflows for k={k}, omega={omega}"
            )));
        }
        let norm = 1.0 + 2.0 * omega;
        let stay = 1.0 / (1.0 + omega);
        let jump = omega / (1.0 + omega);
        Ok(Self {
            k,
            omega,
            lambda_internal,
            lambda_root,
            pi1: omega / norm,
            pi0: (1.0 + omega) / norm,
            pi01: (1.0 + omega) / omega,
            delta: 1.0 / omega,
            theta: -jump,
            transition: [[stay, jump], [1.0, 0.0]],
        })
    }

    /// Inverts `λ = ω(1+ω)^k` for `ω`.
    ///
    /// Bisection in `ln ω` on a bracket that always contains the root, then a
    /// few Newton steps. The map is strictly increasing so the root is unique.
    pub fn derive_from_lambda(k: usize, lambda: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter(
                "branching factor k must be at least 1".into(),
            ));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::Parameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        let kf = k as f64;
        let target = lambda.ln();
        // g(t) = t + k ln(1 + e^t) - ln λ, increasing in t = ln ω
        let g = |t: f64| t + kf * t.exp().ln_1p() - target;
        let mut lo = target - kf * lambda.ln_1p();
        let mut hi = target;
        if g(lo) > 0.0 || g(hi) < 0.0 {
            return Err(Error::Numeric(format!(
                "failed to bracket omega for k={k}, lambda={lambda}"
            )));
        }
        let mut iterations = 0;
        while hi - lo > 1e-9 * (1.0 + hi.abs()) {
            iterations += 1;
            if iterations > 400 {
                return Err(Error::Numeric(format!(
                    "bisection did not converge for k={k}, lambda={lambda}"
                )));
            }
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..8 {
            let e = t.exp();
            let slope = 1.0 + kf * e / (1.0 + e);
            let step = g(t) / slope;
            t -= step;
            if step.abs() <= 1e-16 * (1.0 + t.abs()) {
                break;
            }
        }
        if g(t).abs() > 1e-12 {
            return Err(Error::Numeric(format!(
                "Newton polish left residual {} for k={k}, lambda={lambda}",
                g(t)
            )));
        }
        Self::derive_from_omega(k, t.exp())
    }

    /// Stationary probability of `state`.
    pub fn prior(&self, state: u8) -> f64 {
        if state == 1 {
            self.pi1
        } else {
            self.pi0
        }
    }

    /// `P(child = 1 | parent = 0)`
    pub fn jump(&self) -> f64 {
        self.transition[0][1]
    }

    /// `θ²k`, the Kesten-Stigum statistic on the k-ary tree.
    pub fn ks_value(&self) -> f64 {
        self.theta * self.theta * self.k as f64
    }

    pub fn contraction_factor(&self) -> f64 {
        contraction_factor(self.k, self.omega)
    }
}

/// `ω²·e^(ωk/2)·k`
pub fn contraction_factor(k: usize, omega: f64) -> f64 {
    let kf = k as f64;
    omega * omega * (0.5 * omega * kf).exp() * kf
}

/// Boundary weight `ω̄(k) = (1/k)[ln k + ln ln k - ln ln ln k - β]` with the
/// vanishing correction dropped.
pub fn omega_bar(k: usize, beta: f64) -> Result<f64> {
    if k < 16 {
        return Err(Error::Domain(format!(
            "omega_bar needs k >= 16 so that ln ln ln k >= 0 (got k={k})"
        )));
    }
    let kf = k as f64;
    let lk = kf.ln();
    let llk = lk.ln();
    let bracket = lk + llk - llk.ln() - beta;
    if bracket <= 0.0 {
        return Err(Error::Domain(format!(
            "omega_bar bracket is non-positive for k={k}, beta={beta}"
        )));
    }
    Ok(bracket / kf)
}

/// Smallest `k` in `[16, k_max]` beyond which `contraction_factor(k, ω̄(k))`
/// stays below one on the whole range, or `None` if it is still at least one
/// at `k_max`.
pub fn contraction_crossing(beta: f64, k_max: usize) -> Result<Option<usize>> {
    let mut last_above = None;
    for k in 16..=k_max {
        let w = omega_bar(k, beta)?;
        if contraction_factor(k, w) >= 1.0 {
            last_above = Some(k);
        }
    }
    Ok(match last_above {
        Some(k) if k == k_max => None,
        Some(k) => Some(k + 1),
        None => Some(16),
    })
}

/// Fugacity at which `θ²k = 1` on the k-ary tree; `None` for `k = 1`.
pub fn ks_lambda(k: usize) -> Option<f64> {
    if k < 2 {
        return None;
    }
    let omega = 1.0 / ((k as f64).sqrt() - 1.0);
    Some(omega * (k as f64 * omega.ln_1p()).exp())
}

/// Closed-form thresholds and the contraction factor for one branching factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub k: usize,
    pub beta: f64,
    /// The ω used for `ks_value` and `contraction_factor`.
    pub omega: Option<f64>,
    pub omega_bar: Option<f64>,
    pub ks_value: Option<f64>,
    pub martin_lambda: f64,
    pub bw_lambda: f64,
    pub main_lambda: Option<f64>,
    pub contraction_factor: Option<f64>,
    pub note: &'static str,
}

/// Evaluates every closed-form bound at `k`.
///
/// When `omega` is `None` the boundary value `ω̄(k)` is used, which requires
/// `k >= 16`.
pub fn bounds_report(k: usize, beta: f64, omega: Option<f64>) -> Result<BoundsReport> {
    if k < 2 {
        return Err(Error::Parameter(format!("bounds need k >= 2, got {k}")));
    }
    if !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be finite, got {beta}")));
    }
    if let Some(w) = omega {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::Parameter(format!("omega must be positive, got {w}")));
        }
    }
    let omega_bar = match omega {
        None => Some(omega_bar(k, beta)?),
        Some(_) => omega_bar(k, beta).ok(),
    };
    let used = omega.or(omega_bar);
    let kf = k as f64;
    let lk = kf.ln();
    let llk = lk.ln();
    let ks_value = used.map(|w| {
        let t = w / (1.0 + w);
        t * t * kf
    });
    Ok(BoundsReport {
        k,
        beta,
        omega: used,
        omega_bar,
        ks_value,
        martin_lambda: MARTIN_LAMBDA,
        bw_lambda: std::f64::consts::E * lk * lk,
        main_lambda: (llk > 0.0).then(|| std::f64::consts::LN_2 * lk * lk / (2.0 * llk)),
        contraction_factor: used.map(|w| contraction_factor(k, w)),
        note: ASYMPTOTIC_NOTE,
    })
}
