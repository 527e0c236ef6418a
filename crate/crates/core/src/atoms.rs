//! Exact finite-support laws of the root posterior and magnetization.
//!
//! Level `n` of the recursion holds, for each root state, the law of the
//! quantity computed from the depth-`n` leaves. Level `n + 1` draws `k`
//! independent children (state from the transition row, value from the
//! matching level-`n` law) and combines them through the mode's recursion.
//! Atoms whose values agree to [`MERGE_TOLERANCE`] are coalesced.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::posterior::{magnetization_of, PosteriorMode};
use crate::recursion::{add_edge, merge_magnetization};

/// Relative distance below which two atom values are treated as one.
pub const MERGE_TOLERANCE: f64 = 1e-13;

/// Default bound on the number of atom pairs formed in one convolution step.
pub const DEFAULT_ATOM_CAP: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Quantity {
    /// `Q = P(σ_root = 0 | A)`
    #[serde(rename = "Q")]
    Posterior,
    /// Weighted magnetization.
    #[serde(rename = "X")]
    Magnetization,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Posterior => "Q",
            Quantity::Magnetization => "X",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Condition {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "stationary")]
    Stationary,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Zero => "0",
            Condition::One => "1",
            Condition::Stationary => "stationary",
        }
    }

    fn of_state(s: usize) -> Self {
        if s == 1 {
            Condition::One
        } else {
            Condition::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Sorts atoms by value and coalesces near-equal values by
/// probability-weighted averaging. Zero-probability atoms are dropped.
fn coalesce(mut atoms: Vec<Atom>) -> Vec<Atom> {
    atoms.retain(|a| a.prob > 0.0);
    atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        if let Some(last) = out.last_mut() {
            let scale = last.value.abs().max(a.value.abs());
            if (a.value - last.value).abs() <= MERGE_TOLERANCE * scale {
                let total = last.prob + a.prob;
                last.value = (last.value * last.prob + a.value * a.prob) / total;
                last.prob = total;
                continue;
            }
        }
        out.push(a);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomDistribution {
    pub quantity: Quantity,
    pub condition: Condition,
    pub depth: usize,
    pub mode: PosteriorMode,
    pub atoms: Vec<Atom>,
}

impl AtomDistribution {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_prob(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.prob * f(a.value)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn second_moment(&self) -> f64 {
        self.expect(|v| v * v)
    }

    /// Probability of the atom at `value` (relative tolerance `rel`).
    pub fn prob_at(&self, value: f64, rel: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| (a.value - value).abs() <= rel * value.abs().max(a.value.abs()))
            .map(|a| a.prob)
            .sum()
    }

    /// Mixture `weights[0]·self + weights[1]·other` under a new condition.
    fn mix(&self, other: &Self, weights: [f64; 2], condition: Condition) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                value: a.value,
                prob: weights[0] * a.prob,
            })
            .chain(other.atoms.iter().map(|a| Atom {
                value: a.value,
                prob: weights[1] * a.prob,
            }))
            .collect();
        Self {
            condition,
            atoms: coalesce(atoms),
            ..self.clone()
        }
    }
}

/// Conditioned laws of `Q` and `X` at one depth, indexed by root state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomLaws {
    pub depth: usize,
    pub mode: PosteriorMode,
    pub q: [AtomDistribution; 2],
    pub x: [AtomDistribution; 2],
}

impl AtomLaws {
    pub fn x_given(&self, s: u8) -> &AtomDistribution {
        &self.x[s as usize]
    }

    pub fn q_given(&self, s: u8) -> &AtomDistribution {
        &self.q[s as usize]
    }

    pub fn x_stationary(&self, params: &ModelParams) -> AtomDistribution {
        self.x[0].mix(&self.x[1], [params.pi0, params.pi1], Condition::Stationary)
    }

    pub fn q_stationary(&self, params: &ModelParams) -> AtomDistribution {
        self.q[0].mix(&self.q[1], [params.pi0, params.pi1], Condition::Stationary)
    }

    pub fn moments(&self, params: &ModelParams) -> MagnetizationMoments {
        moments_from_atoms(&self.x[1], &self.x[0], params, self.depth)
    }

    /// Every distribution held, conditioned ones first.
    pub fn distributions(&self, params: &ModelParams) -> Vec<AtomDistribution> {
        vec![
            self.q[1].clone(),
            self.q[0].clone(),
            self.q_stationary(params),
            self.x[1].clone(),
            self.x[0].clone(),
            self.x_stationary(params),
        ]
    }
}

/// Second and first moments of the magnetization at one depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MagnetizationMoments {
    pub depth: usize,
    /// `E[X²]` under the stationary root.
    pub xbar: f64,
    /// `E¹[X²]`
    pub xbar1: f64,
    /// `E⁰[X²]`
    pub xbar0: f64,
    /// `E¹[X]`
    pub e1x: f64,
    /// `E⁰[X]`
    pub e0x: f64,
}

impl MagnetizationMoments {
    pub fn zero(depth: usize) -> Self {
        Self {
            depth,
            xbar: 0.0,
            xbar1: 0.0,
            xbar0: 0.0,
            e1x: 0.0,
            e0x: 0.0,
        }
    }

    /// `E[X] = π1·E¹[X] + π0·E⁰[X]`
    pub fn mean(&self, params: &ModelParams) -> f64 {
        params.pi1 * self.e1x + params.pi0 * self.e0x
    }
}

pub fn moments_from_atoms(
    x_law_1: &AtomDistribution,
    x_law_0: &AtomDistribution,
    params: &ModelParams,
    depth: usize,
) -> MagnetizationMoments {
    let xbar1 = x_law_1.second_moment();
    let xbar0 = x_law_0.second_moment();
    MagnetizationMoments {
        depth,
        xbar: params.pi1 * xbar1 + params.pi0 * xbar0,
        xbar1,
        xbar0,
        e1x: x_law_1.mean(),
        e0x: x_law_0.mean(),
    }
}

/// Raw per-state atom lists in the mode's native coordinate: `X` for exact
/// mode, `q = P(σ = 0 | A)` for paper mode.
type NativeLaws = [Vec<Atom>; 2];

fn leaf_laws(params: &ModelParams, mode: PosteriorMode) -> NativeLaws {
    let one = |value| vec![Atom { value, prob: 1.0 }];
    match mode {
        PosteriorMode::Exact => [one(params.theta), one(1.0)],
        PosteriorMode::Paper => [one(1.0), one(0.0)],
    }
}

/// Law of the value a single child contributes to a parent in state `s`,
/// already passed through the edge (`θZ` in exact mode, `q` in paper mode).
fn child_contribution(
    params: &ModelParams,
    mode: PosteriorMode,
    child: &NativeLaws,
    s: usize,
) -> Vec<Atom> {
    let mut atoms = Vec::new();
    for (c, law) in child.iter().enumerate() {
        let w = params.transition[s][c];
        if w == 0.0 {
            continue;
        }
        atoms.extend(law.iter().map(|a| Atom {
            value: match mode {
                PosteriorMode::Exact => add_edge(a.value, params),
                PosteriorMode::Paper => a.value,
            },
            prob: w * a.prob,
        }));
    }
    coalesce(atoms)
}

fn combine(params: &ModelParams, mode: PosteriorMode, acc: f64, v: f64) -> Result<f64> {
    match mode {
        PosteriorMode::Exact => merge_magnetization(acc, v, params),
        PosteriorMode::Paper => Ok(acc * v),
    }
}

fn identity(mode: PosteriorMode) -> f64 {
    match mode {
        PosteriorMode::Exact => 0.0,
        PosteriorMode::Paper => 1.0,
    }
}

/// Convolves `acc` with one more child draw.
fn convolve(
    params: &ModelParams,
    mode: PosteriorMode,
    acc: &[Atom],
    contribution: &[Atom],
    cap: usize,
) -> Result<Vec<Atom>> {
    let pairs = acc.len().saturating_mul(contribution.len());
    if pairs > cap {
        return Err(Error::Capacity(format!(
            "atom recursion needs {pairs} atom pairs (cap {cap}); use population dynamics instead"
        )));
    }
    let mut out = Vec::with_capacity(pairs);
    for a in acc {
        for b in contribution {
            out.push(Atom {
                value: combine(params, mode, a.value, b.value)?,
                prob: a.prob * b.prob,
            });
        }
    }
    Ok(coalesce(out))
}

/// Partial folds after `0..=k` children for each parent state.
fn fold_level(
    params: &ModelParams,
    mode: PosteriorMode,
    child: &NativeLaws,
    cap: usize,
    keep_partials: bool,
) -> Result<(NativeLaws, Vec<NativeLaws>)> {
    let mut finals: NativeLaws = [Vec::new(), Vec::new()];
    let mut partials: Vec<NativeLaws> = if keep_partials {
        vec![[Vec::new(), Vec::new()]; params.k + 1]
    } else {
        Vec::new()
    };
    for s in 0..2 {
        let contribution = child_contribution(params, mode, child, s);
        let mut acc = vec![Atom {
            value: identity(mode),
            prob: 1.0,
        }];
        if keep_partials {
            partials[0][s] = acc.clone();
        }
        for j in 1..=params.k {
            acc = convolve(params, mode, &acc, &contribution, cap)?;
            if keep_partials {
                partials[j][s] = acc.clone();
            }
        }
        finals[s] = match mode {
            PosteriorMode::Exact => acc,
            PosteriorMode::Paper => {
                let lambda = params.lambda_internal;
                coalesce(
                    acc.into_iter()
                        .map(|a| Atom {
                            value: 1.0 / (1.0 + lambda * a.value),
                            prob: a.prob,
                        })
                        .collect(),
                )
            }
        };
    }
    Ok((finals, partials))
}

fn laws_from_native(
    params: &ModelParams,
    mode: PosteriorMode,
    depth: usize,
    native: &NativeLaws,
) -> Result<AtomLaws> {
    let mut q: Vec<AtomDistribution> = Vec::with_capacity(2);
    let mut x: Vec<AtomDistribution> = Vec::with_capacity(2);
    for (s, law) in native.iter().enumerate() {
        let (q_atoms, x_atoms): (Vec<Atom>, Vec<Atom>) = match mode {
            PosteriorMode::Exact => law
                .iter()
                .map(|a| {
                    // Q = 1 - π1(1 + π01 X) = π0(1 - X)
                    let qv = (params.pi0 * (1.0 - a.value)).clamp(0.0, 1.0);
                    (
                        Atom {
                            value: qv,
                            prob: a.prob,
                        },
                        *a,
                    )
                })
                .unzip(),
            PosteriorMode::Paper => law
                .iter()
                .map(|a| {
                    let xv = magnetization_of(params, (1.0 - a.value).clamp(0.0, 1.0))?;
                    Ok((
                        *a,
                        Atom {
                            value: xv,
                            prob: a.prob,
                        },
                    ))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip(),
        };
        let make = |quantity, atoms| AtomDistribution {
            quantity,
            condition: Condition::of_state(s),
            depth,
            mode,
            atoms: coalesce(atoms),
        };
        q.push(make(Quantity::Posterior, q_atoms));
        x.push(make(Quantity::Magnetization, x_atoms));
    }
    let [q0, q1]: [AtomDistribution; 2] = q.try_into().expect("two states");
    let [x0, x1]: [AtomDistribution; 2] = x.try_into().expect("two states");
    Ok(AtomLaws {
        depth,
        mode,
        q: [q0, q1],
        x: [x0, x1],
    })
}

/// Exact conditioned laws at every depth `0..=depth`.
pub fn atom_recursion(
    params: &ModelParams,
    depth: usize,
    mode: PosteriorMode,
) -> Result<Vec<AtomLaws>> {
    atom_recursion_with_cap(params, depth, mode, DEFAULT_ATOM_CAP)
}

pub fn atom_recursion_with_cap(
    params: &ModelParams,
    depth: usize,
    mode: PosteriorMode,
    cap: usize,
) -> Result<Vec<AtomLaws>> {
    let mut native = leaf_laws(params, mode);
    let mut ladder = vec![laws_from_native(params, mode, 0, &native)?];
    for n in 1..=depth {
        native = fold_level(params, mode, &native, cap, false)?.0;
        ladder.push(laws_from_native(params, mode, n, &native)?);
    }
    Ok(ladder)
}

fn native_of(laws: &AtomLaws) -> NativeLaws {
    match laws.mode {
        PosteriorMode::Exact => [laws.x[0].atoms.clone(), laws.x[1].atoms.clone()],
        PosteriorMode::Paper => [laws.q[0].atoms.clone(), laws.q[1].atoms.clone()],
    }
}

/// Exact-mode magnetization laws of a root after its first `j` children
/// (`j = 0..=k`) are attached, each child a copy of `child`.
pub fn partial_folds(
    params: &ModelParams,
    child: &AtomLaws,
    cap: usize,
) -> Result<Vec<[AtomDistribution; 2]>> {
    if child.mode != PosteriorMode::Exact {
        return Err(Error::Parameter(
            "partial folds are defined for exact mode only".into(),
        ));
    }
    let (_, partials) = fold_level(params, PosteriorMode::Exact, &native_of(child), cap, true)?;
    Ok(partials
        .into_iter()
        .map(|pair| {
            let make = |s: usize, atoms: Vec<Atom>| AtomDistribution {
                quantity: Quantity::Magnetization,
                condition: Condition::of_state(s),
                depth: child.depth + 1,
                mode: PosteriorMode::Exact,
                atoms,
            };
            let [a0, a1] = pair;
            [make(0, a0), make(1, a1)]
        })
        .collect())
}

/// Law of a child's own magnetization `Y` given the parent state `s`, before
/// the edge is applied.
pub fn child_magnetization_law(params: &ModelParams, child: &AtomLaws, s: u8) -> AtomDistribution {
    let m = params.transition[s as usize];
    let mut law = child.x[0].mix(&child.x[1], m, Condition::of_state(s as usize));
    law.depth = child.depth + 1;
    law
}

/// Outcome of the leaf-configuration ratio check at depth 2 (paper mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalARatio {
    /// `½(1 + 1/(1+2λ))`
    pub middle_atom: f64,
    /// `P¹[σ(L) ∈ 𝒜]`
    pub p1: f64,
    /// `P⁰[σ(L) ∈ 𝒜]`
    pub p0: f64,
    /// `p0 / p1` from the atom laws.
    pub lhs: f64,
    /// `(π1/π0)(1+λ)/λ`
    pub rhs: f64,
    /// Bayes' rule with the root prior implied by the uniform-λ recursion
    /// (root odds `ω`), `ω(1+λ)/λ`.
    pub rhs_uniform_prior: f64,
}

/// `𝒜` is the set of depth-2 leaf patterns whose paper-mode posterior equals
/// the middle atom `½(1 + 1/(1+2λ))`; it is matched by atom identity.
pub fn cal_a_ratio_check(params: &ModelParams) -> Result<CalARatio> {
    let ladder = atom_recursion(params, 2, PosteriorMode::Paper)?;
    let lambda = params.lambda_internal;
    let middle = 0.5 * (1.0 + 1.0 / (1.0 + 2.0 * lambda));
    let p1 = ladder[2].q[1].prob_at(middle, 1e-12);
    let p0 = ladder[2].q[0].prob_at(middle, 1e-12);
    Ok(CalARatio {
        middle_atom: middle,
        p1,
        p0,
        lhs: p0 / p1,
        rhs: params.pi1 / params.pi0 * (1.0 + lambda) / lambda,
        rhs_uniform_prior: params.omega * (1.0 + lambda) / lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: usize, w: f64) -> ModelParams {
        ModelParams::derive_from_omega(k, w).unwrap()
    }

    fn assert_atoms(law: &AtomDistribution, expected: &[(f64, f64)]) {
        assert_eq!(law.len(), expected.len(), "{law:?}");
        let mut want = expected.to_vec();
        want.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (a, (v, pr)) in law.atoms.iter().zip(want) {
            assert!((a.value - v).abs() < 1e-14, "value {} vs {v}", a.value);
            assert!((a.prob - pr).abs() < 1e-14, "prob {} vs {pr}", a.prob);
        }
    }

    #[test]
    fn coalesce_merges_close_values() {
        let atoms = vec![
            Atom {
                value: 0.5,
                prob: 0.25,
            },
            Atom {
                value: 0.5 * (1.0 + 1e-15),
                prob: 0.25,
            },
            Atom {
                value: -0.1,
                prob: 0.5,
            },
            Atom {
                value: 3.0,
                prob: 0.0,
            },
        ];
        let out = coalesce(atoms);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].value, -0.1);
        assert!((out[1].prob - 0.5).abs() < 1e-15);
    }

    #[test]
    fn paper_depth_one_root_zero() {
        let ladder = atom_recursion(&p(2, 1.0), 1, PosteriorMode::Paper).unwrap();
        assert_atoms(&ladder[1].q[0], &[(1.0, 0.75), (0.2, 0.25)]);
        assert_atoms(&ladder[1].q[1], &[(0.2, 1.0)]);
    }

    #[test]
    fn paper_depth_two_root_one() {
        let ladder = atom_recursion(&p(2, 1.0), 2, PosteriorMode::Paper).unwrap();
        assert_atoms(
            &ladder[2].q[1],
            &[
                (0.2, 9.0 / 16.0),
                (5.0 / 9.0, 6.0 / 16.0),
                (25.0 / 29.0, 1.0 / 16.0),
            ],
        );
    }

    #[test]
    fn exact_depth_one_magnetization() {
        let ladder = atom_recursion(&p(2, 1.0), 1, PosteriorMode::Exact).unwrap();
        assert_atoms(&ladder[1].x[1], &[(0.5, 1.0)]);
        assert_atoms(&ladder[1].x[0], &[(0.5, 0.25), (-0.5, 0.75)]);
    }

    #[test]
    fn depth_one_moments() {
        let params = p(2, 1.0);
        let ladder = atom_recursion(&params, 1, PosteriorMode::Exact).unwrap();
        let m = ladder[1].moments(&params);
        assert!((m.xbar1 - 0.25).abs() < 1e-15);
        assert!((m.xbar0 - 0.25).abs() < 1e-15);
        assert!((m.xbar - 0.25).abs() < 1e-15);
        assert!((m.e1x - 0.5).abs() < 1e-15);
        assert!((m.e0x + 0.25).abs() < 1e-15);
        assert!((m.e1x - params.pi01 * m.xbar).abs() < 1e-15);
    }

    #[test]
    fn uninformative_law_has_zero_moments() {
        let params = p(3, 0.4);
        let zero = AtomDistribution {
            quantity: Quantity::Magnetization,
            condition: Condition::One,
            depth: 0,
            mode: PosteriorMode::Exact,
            atoms: vec![Atom {
                value: 0.0,
                prob: 1.0,
            }],
        };
        assert_eq!(
            moments_from_atoms(&zero, &zero, &params, 0),
            MagnetizationMoments::zero(0)
        );
    }

    #[test]
    fn laws_are_normalized() {
        for mode in [PosteriorMode::Exact, PosteriorMode::Paper] {
            let params = p(3, 0.3);
            for laws in atom_recursion(&params, 2, mode).unwrap() {
                for d in laws.distributions(&params) {
                    assert!((d.total_prob() - 1.0).abs() < 1e-12);
                    assert!(d.atoms.windows(2).all(|w| w[0].value < w[1].value));
                    if d.quantity == Quantity::Magnetization {
                        assert!(d.atoms.iter().all(|a| a.value <= 1.0 + 1e-15));
                    } else {
                        assert!(d.atoms.iter().all(|a| (0.0..=1.0).contains(&a.value)));
                    }
                }
            }
        }
    }

    #[test]
    fn exact_mode_lemma2_identities() {
        for (k, w) in [(2, 1.0), (3, 0.3), (4, 2.0)] {
            let params = p(k, w);
            for laws in atom_recursion(&params, 2, PosteriorMode::Exact).unwrap() {
                let m = laws.moments(&params);
                assert!(m.mean(&params).abs() < 1e-12);
                assert!((m.e1x - params.pi01 * m.xbar).abs() < 1e-10);
                assert!((m.e0x + m.xbar).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn capacity_error() {
        let err = atom_recursion_with_cap(&p(3, 0.4), 3, PosteriorMode::Exact, 10).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(err.to_string().contains("population dynamics"));
    }

    #[test]
    fn partial_folds_end_at_full_fold() {
        let params = p(3, 0.5);
        let ladder = atom_recursion(&params, 2, PosteriorMode::Exact).unwrap();
        let partials = partial_folds(&params, &ladder[1], DEFAULT_ATOM_CAP).unwrap();
        assert_eq!(partials.len(), 4);
        assert_eq!(
            partials[0][1].atoms,
            vec![Atom {
                value: 0.0,
                prob: 1.0
            }]
        );
        for s in 0..2 {
            assert_eq!(partials[3][s].atoms, ladder[2].x[s].atoms);
        }
    }

    #[test]
    fn child_law_mixes_rows() {
        let params = p(2, 1.0);
        let ladder = atom_recursion(&params, 1, PosteriorMode::Exact).unwrap();
        // parent 1 forces child 0
        let law = child_magnetization_law(&params, &ladder[1], 1);
        assert_eq!(law.atoms, ladder[1].x[0].atoms);
        let law = child_magnetization_law(&params, &ladder[1], 0);
        assert!((law.total_prob() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ratio_check_k2_omega1() {
        let r = cal_a_ratio_check(&p(2, 1.0)).unwrap();
        assert!((r.middle_atom - 5.0 / 9.0).abs() < 1e-15);
        assert!((r.rhs - 0.625).abs() < 1e-15);
        assert!((r.p1 - 6.0 / 16.0).abs() < 1e-15);
        assert!((r.p0 - 30.0 / 64.0).abs() < 1e-15);
        assert!((r.lhs - r.rhs_uniform_prior).abs() < 1e-12);
    }
}
