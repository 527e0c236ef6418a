//! Second-moment bounds and coefficient ranges on measured moments.

use treecast_core::atoms::{atom_recursion, moments_from_atoms, partial_folds, DEFAULT_ATOM_CAP};
use treecast_core::params::{contraction_factor, omega_bar, BETA_STAR};
use treecast_core::recursion::{binomial_tail, BoundVerdict, RecursionCoefficients};
use treecast_core::{contraction_iterate, level_bound, one_step_bound, ModelParams, PosteriorMode};

const SLACK: f64 = 1e-12;

fn p(k: usize, w: f64) -> ModelParams {
    ModelParams::derive_from_omega(k, w).unwrap()
}

fn grid() -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (k, n) in [(1, 8), (2, 5), (3, 3), (4, 3), (6, 2)] {
        for w in [0.05, 0.3, 1.0, 3.0] {
            out.push((k, n, w));
        }
    }
    out
}

#[test]
fn level_bound_and_monotone_decay() {
    for (k, n, w) in grid() {
        let params = p(k, w);
        let ladder = atom_recursion(&params, n, PosteriorMode::Exact).unwrap();
        let xbar: Vec<f64> = ladder.iter().map(|l| l.moments(&params).xbar).collect();
        for pair in xbar.windows(2) {
            assert!(
                pair[1] <= level_bound(pair[0], &params) + SLACK,
                "k={k} w={w}: {pair:?}"
            );
            assert!(
                pair[1] <= pair[0] + SLACK,
                "X̄ increased at k={k} w={w}: {pair:?}"
            );
        }
    }
}

#[test]
fn spot_level_bound() {
    let params = p(2, 1.0);
    let ladder = atom_recursion(&params, 2, PosteriorMode::Exact).unwrap();
    let x2 = ladder[2].moments(&params).xbar;
    assert!(x2 <= 17.0 / 128.0);
    assert!((level_bound(0.25, &params) - 17.0 / 128.0).abs() < 1e-15);
}

/// Every partial fold obeys the one-step bound, and the coefficients built
/// from each (partial fold, next subtree) pair stay in range.
#[test]
fn one_step_bound_and_coefficients() {
    let mut pairs_checked = 0;
    for (k, n, w) in grid() {
        let params = p(k, w);
        let ladder = atom_recursion(&params, n, PosteriorMode::Exact).unwrap();
        for level in &ladder[..n] {
            let subtree = level.moments(&params);
            let parts = partial_folds(&params, level, DEFAULT_ATOM_CAP).unwrap();
            for j in 0..k {
                let before = moments_from_atoms(&parts[j][1], &parts[j][0], &params, j);
                let after = moments_from_atoms(&parts[j + 1][1], &parts[j + 1][0], &params, j + 1);
                let bound = one_step_bound(before.xbar, subtree.xbar, &params);
                assert!(after.xbar <= bound + SLACK, "k={k} w={w} j={j}");
                if let Some(c) = RecursionCoefficients::from_moments(&before, &subtree, &params) {
                    assert!(c.invariants_hold(&params, 1e-9), "{c:?} at k={k} w={w}");
                    let ceiling = RecursionCoefficients::rho_ceiling(&params);
                    assert!((ceiling - (1.0 + 2.0 * w) / w).abs() < 1e-12 * ceiling);
                    pairs_checked += 1;
                }
            }
        }
    }
    assert!(pairs_checked > 100);
}

#[test]
fn contraction_numerics() {
    let w3 = omega_bar(1000, BETA_STAR).unwrap();
    assert!(contraction_factor(1000, w3) > 1.0);
    assert!((contraction_factor(1000, w3) - 1.785).abs() < 0.01);
    let w5 = omega_bar(100_000, BETA_STAR).unwrap();
    assert!(contraction_factor(100_000, w5) < 1.0);
    let trace = contraction_iterate(w5 / 2.0, &p(100_000, w5), 200);
    assert_eq!(trace.verdict, BoundVerdict::Certified);
    let below = trace
        .linear_levels_below(1e-30)
        .expect("decays within 200 levels");
    assert!(below <= 200);
    assert!(trace.levels.iter().all(|l| l.xbar_bound >= 0.0));
}

/// Reference values at 50 digits from an arbitrary-precision evaluation of
/// `ω²·exp(ωk/2)·k`.
#[test]
fn contraction_factor_against_reference() {
    const REFERENCE: [(usize, f64, f64); 20] = [
        (20, 0.00014843257797186816, 4.41299149872436039e-7),
        (5, 0.032885814744382645, 5.87073579479554426e-3),
        (10000, 0.0016044789822762173, 7.84783577940123233e1),
        (100, 1.6077781470612817e-06, 2.58515837987239142e-10),
        (100000, 2.4221711646740285e-06, 6.62226320306626701e-7),
        (11891, 0.000216199925658992, 2.00992022896411291e-3),
        (5, 0.16254490233751323, 1.98334194849982868e-1),
        (2, 0.0014930220350710052, 4.46489080086362048e-6),
        (2, 0.23410089860808672, 1.3851757685770622e-1),
        (6107, 0.05267160166024032, 1.19605342825277111e71),
        (100000, 6.214453725125653e-06, 5.26927742983282782e-6),
        (1000, 0.0012061880557654096, 2.6591966532445613e-3),
        (20, 3.688131678770475e-06, 2.72056339210009416e-10),
        (100, 0.00011173429291153651, 1.25544950365119654e-6),
        (5, 0.0012706490386967069, 8.09842973548348997e-6),
        (100, 0.0005373778026077659, 2.96639142447680426e-5),
        (1000000, 9.743230067533622e-05, 1.36320505105786241e19),
        (20, 0.006989874616780016, 1.04791343037422659e-3),
        (5, 0.001443212914335764, 1.04519606424484318e-5),
        (1000000, 3.834049423210299e-05, 3.11062711240798089e5),
    ];
    for (k, w, want) in REFERENCE {
        let got = contraction_factor(k, w);
        assert!(
            (got - want).abs() <= 1e-13 * want,
            "k={k} w={w}: {got} vs {want}"
        );
    }
}

#[test]
fn binomial_tail_instance_below_one_third() {
    let k = 1000usize;
    let params = p(k, omega_bar(k, BETA_STAR).unwrap());
    let (w, lambda) = (params.omega, params.lambda_internal);
    let stay_k = (-(k as f64) * w.ln_1p()).exp();
    let prob = w * (1.0 + lambda) / (lambda * (1.0 + w))
        * (1.0 - stay_k).powi(k as i32 - 1)
        * stay_k
        * k as f64;
    assert!((prob - 2.856_990_114_744_912e-3).abs() < 1e-15, "{prob}");
    let mean = BETA_STAR.exp() * (k as f64).ln().ln();
    let threshold = mean - 2.0 * mean.sqrt();
    assert!((threshold - 0.854).abs() < 1e-3);
    let tail = binomial_tail(k as u64, prob, threshold).unwrap();
    // only the zero count lies below the threshold
    assert!((tail - (1.0 - prob).powi(k as i32)).abs() < 1e-14);
    assert!((tail - 5.720_699_482_121_359e-2).abs() < 1e-12, "{tail}");
    assert!(tail < 1.0 / 3.0);
}
