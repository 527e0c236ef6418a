//! Exact-mode magnetization identities.

use rand::seq::{IndexedRandom, SliceRandom};
use treecast_core::atoms::{
    atom_recursion, child_magnetization_law, partial_folds, DEFAULT_ATOM_CAP,
};
use treecast_core::posterior::likelihood_pass;
use treecast_core::recursion::child_moment_relations;
use treecast_core::streams::stream_rng;
use treecast_core::tree::sample_broadcast;
use treecast_core::{
    add_edge, fold_children, fold_tree, magnetization_of, merge_magnetization, ModelParams,
    PosteriorMode, RootCondition, TreeShape,
};

const TOL: f64 = 1e-10;

fn p(k: usize, w: f64) -> ModelParams {
    ModelParams::derive_from_omega(k, w).unwrap()
}

fn sweep() -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (k, n) in [(1, 6), (2, 4), (3, 3), (4, 2)] {
        for w in [0.3, 1.0, 2.0] {
            out.push((k, n, w));
        }
    }
    out
}

#[test]
fn mean_zero_and_conditioned_first_moments() {
    for (k, n, w) in sweep() {
        let params = p(k, w);
        for laws in atom_recursion(&params, n, PosteriorMode::Exact).unwrap() {
            let m = laws.moments(&params);
            assert!(m.mean(&params).abs() < TOL, "E[X] at k={k} n={}", m.depth);
            assert!((m.xbar - (params.pi1 * m.xbar1 + params.pi0 * m.xbar0)).abs() < TOL);
            assert!(
                (m.e1x - params.pi01 * m.xbar).abs() < TOL,
                "E1[X] k={k} n={}",
                m.depth
            );
            assert!((m.e0x + m.xbar).abs() < TOL, "E0[X] k={k} n={}", m.depth);
            assert!(m.xbar >= 0.0 && m.xbar <= 1.0);
        }
    }
}

#[test]
fn depth_one_spot_values() {
    let params = p(2, 1.0);
    let m = atom_recursion(&params, 1, PosteriorMode::Exact).unwrap()[1].moments(&params);
    assert!((m.xbar - 0.25).abs() < 1e-15);
    assert!((m.e1x - 0.5).abs() < 1e-15);
}

/// Moments of a child's magnetization conditioned on its parent's state,
/// against the linear predictions from the child's own moments.
#[test]
fn child_moment_predictions() {
    for (k, n, w) in sweep() {
        let params = p(k, w);
        for laws in atom_recursion(&params, n, PosteriorMode::Exact).unwrap() {
            let pred = child_moment_relations(&laws.moments(&params), &params);
            let given1 = child_magnetization_law(&params, &laws, 1);
            let given0 = child_magnetization_law(&params, &laws, 0);
            assert!((given1.mean() - pred.e1_y).abs() < TOL);
            assert!((given0.mean() - pred.e0_y).abs() < TOL);
            assert!((given1.second_moment() - pred.e1_y2).abs() < TOL);
            assert!((given0.second_moment() - pred.e0_y2).abs() < TOL);
        }
    }
    let params = p(2, 1.0);
    let laws = &atom_recursion(&params, 1, PosteriorMode::Exact).unwrap()[1];
    let pred = child_moment_relations(&laws.moments(&params), &params);
    assert!((pred.e1_y + 0.25).abs() < 1e-15);
    assert!((pred.e1_y2 - 0.25).abs() < 1e-15);
    let zero = child_moment_relations(&treecast_core::MagnetizationMoments::zero(0), &params);
    assert_eq!([zero.e1_y, zero.e0_y, zero.e1_y2, zero.e0_y2], [0.0; 4]);
}

#[test]
fn edge_scales_by_theta() {
    for w in [0.3, 1.0, 2.0] {
        let params = p(1, w);
        for z in [-0.4, 0.0, 0.3, 1.0] {
            assert_eq!(add_edge(z, &params), params.theta * z);
        }
        // a single leaf seen through one edge
        let shape = TreeShape::new(1, 1).unwrap();
        for leaf in [0u8, 1] {
            let pe = likelihood_pass(&params, &shape, &[leaf])
                .unwrap()
                .posterior_one;
            let x = magnetization_of(&params, pe).unwrap();
            let z = if leaf == 1 { 1.0 } else { params.theta };
            assert!((x - add_edge(z, &params)).abs() < TOL);
        }
    }
}

/// Pointwise: folding leaf magnetizations up the tree reproduces Bayes.
#[test]
fn fold_equals_likelihood_on_sampled_trees() {
    let mut rng = stream_rng(0xF01D, 0);
    let mut checked = 0;
    for (k, depth) in [(1, 4), (2, 4), (3, 3), (4, 3), (4, 4)] {
        let shape = TreeShape::new(k, depth).unwrap();
        for w in [0.3, 1.0] {
            let params = p(k, w);
            for _ in 0..1000 {
                let cfg = sample_broadcast(&params, &shape, RootCondition::Free, &mut rng).unwrap();
                let leaves = cfg.leaves(&shape);
                let pe = likelihood_pass(&params, &shape, leaves)
                    .unwrap()
                    .posterior_one;
                let want = magnetization_of(&params, pe).unwrap();
                let got = fold_tree(&params, &shape, leaves).unwrap();
                assert!(
                    (got - want).abs() < TOL,
                    "k={k} depth={depth}: {got} vs {want}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 10_000);
}

#[test]
fn merge_is_commutative_and_fold_permutation_invariant() {
    let mut rng = stream_rng(0xBEEF, 1);
    for w in [0.3, 1.0, 2.0] {
        let params = p(5, w);
        let atoms = atom_recursion(&params, 2, PosteriorMode::Exact).unwrap();
        let pool: Vec<f64> = atoms[2]
            .x
            .iter()
            .chain(atoms[1].x.iter())
            .flat_map(|d| d.atoms.iter().map(|a| a.value))
            .collect();
        for _ in 0..200 {
            let mut children: Vec<f64> = pool.choose_multiple(&mut rng, 5).copied().collect();
            let a = fold_children(&children, &params).unwrap();
            children.shuffle(&mut rng);
            let b = fold_children(&children, &params).unwrap();
            assert!((a - b).abs() < TOL);
            let (y, z) = (children[0], children[1]);
            let ab = merge_magnetization(y, z, &params).unwrap();
            let ba = merge_magnetization(z, y, &params).unwrap();
            assert!((ab - ba).abs() < 1e-15);
        }
    }
}

/// Attaching one subtree at a time: the final partial fold is the full level.
#[test]
fn partial_folds_compose_to_next_level() {
    for (k, w) in [(2, 1.0), (3, 0.3), (4, 2.0)] {
        let params = p(k, w);
        let ladder = atom_recursion(&params, 2, PosteriorMode::Exact).unwrap();
        for n in 0..2 {
            let parts = partial_folds(&params, &ladder[n], DEFAULT_ATOM_CAP).unwrap();
            for s in 0..2 {
                let full = &ladder[n + 1].x[s];
                let last = &parts[k][s];
                assert!((full.second_moment() - last.second_moment()).abs() < TOL);
                assert!((full.mean() - last.mean()).abs() < TOL);
            }
        }
    }
}
