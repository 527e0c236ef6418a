//! Population dynamics for the conditioned magnetization laws.
//!
//! A population holds, for each root state, an equally sized pool of
//! magnetization samples at one depth. One level up, each new sample draws
//! `k` child states from the transition row, picks each child's value
//! uniformly from the matching pool, and folds them. Exact mode only.
//!
//! Randomness for level `n`, state `s` and worker `w` comes from stream
//! `(2n + s)·workers + w` of the master seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::atoms::{
    atom_recursion_with_cap, AtomDistribution, AtomLaws, MagnetizationMoments, DEFAULT_ATOM_CAP,
};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::posterior::{posterior_of_magnetization, PosteriorMode};
use crate::recursion::{add_edge, merge_magnetization};
use crate::streams::{chunk_bounds, stream_rng};

/// Number of jackknife blocks.
pub const JACKKNIFE_BLOCKS: usize = 50;

/// Runs stop once the stationary second moment falls below this.
pub const EARLY_STOP_XBAR: f64 = 1e-12;

pub const DEFAULT_EPS_REC: f64 = 1e-6;

pub const DEFAULT_POP: usize = 100_000;

/// Smallest pool accepted by [`run_decay`].
pub const MIN_DECAY_POP: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// `samples[s]` holds magnetizations conditioned on root state `s`.
    pub samples: [Vec<f64>; 2],
    pub depth: usize,
    pub params: ModelParams,
    pub seed: u64,
    pub workers: usize,
}

impl Population {
    /// The two-point leaf law: `1` given state 1, `θ` given state 0.
    pub fn new(params: &ModelParams, size: usize, seed: u64, workers: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Parameter(
                "population size must be at least 1".into(),
            ));
        }
        if workers == 0 {
            return Err(Error::Parameter("worker count must be at least 1".into()));
        }
        Ok(Self {
            samples: [vec![params.theta; size], vec![1.0; size]],
            depth: 0,
            params: *params,
            seed,
            workers,
        })
    }

    pub fn size(&self) -> usize {
        self.samples[0].len()
    }

    fn stream_index(&self, state: usize, worker: usize) -> u64 {
        ((self.depth as u64 * 2 + state as u64) * self.workers as u64) + worker as u64
    }

    /// One root sample given root `state`; `child(c, pool, rng)` yields the
    /// magnetization of a child in state `c`.
    fn draw_sample<C>(
        &self,
        state: usize,
        binom: &Binomial,
        rng: &mut ChaCha8Rng,
        child: &C,
    ) -> Result<f64>
    where
        C: Fn(usize, &[f64], &mut ChaCha8Rng) -> f64,
    {
        let p = &self.params;
        let ones = if state == 1 {
            0
        } else {
            binom.sample(rng) as usize
        };
        let mut acc = 0.0;
        for j in 0..p.k {
            let c = usize::from(j < ones);
            let z = child(c, &self.samples[c], rng);
            acc = merge_magnetization(acc, add_edge(z, p), p)?;
        }
        Ok(acc)
    }

    /// Population one level deeper.
    pub fn evolve_level(&self) -> Result<Population> {
        self.evolve_with(|_, pool, rng| pool[rng.random_range(0..pool.len())])
    }

    fn evolve_with<C>(&self, child: C) -> Result<Population>
    where
        C: Fn(usize, &[f64], &mut ChaCha8Rng) -> f64 + Sync,
    {
        let n = self.size();
        let binom = Binomial::new(self.params.k as u64, self.params.jump())
            .map_err(|e| Error::Parameter(format!("child-state law: {e}")))?;
        let chunks = chunk_bounds(n, self.workers);
        let mut next: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (state, slot) in next.iter_mut().enumerate() {
            let run = |(w, &(lo, hi)): (usize, &(usize, usize))| -> Result<Vec<f64>> {
                let mut rng = stream_rng(self.seed, self.stream_index(state, w));
                (lo..hi)
                    .map(|_| self.draw_sample(state, &binom, &mut rng, &child))
                    .collect()
            };
            let parts: Vec<Result<Vec<f64>>> = if self.workers <= 1 {
                chunks.iter().enumerate().map(run).collect()
            } else {
                chunks.par_iter().enumerate().map(run).collect()
            };
            let mut out = Vec::with_capacity(n);
            for part in parts {
                out.extend(part?);
            }
            *slot = out;
        }
        Ok(Population {
            samples: next,
            depth: self.depth + 1,
            params: self.params,
            seed: self.seed,
            workers: self.workers,
        })
    }

    pub fn estimate_moments(&self) -> MomentEstimate {
        estimate_moments(self)
    }

    /// Population one level above exact laws: every sample folds `k`
    /// children drawn independently from `laws` rather than from a finite
    /// pool, so the samples are iid from the exact next-level law.
    pub fn sample_above(
        laws: &AtomLaws,
        params: &ModelParams,
        size: usize,
        seed: u64,
        workers: usize,
    ) -> Result<Population> {
        if laws.mode != PosteriorMode::Exact {
            return Err(Error::Parameter(
                "population sampling needs exact-mode laws".into(),
            ));
        }
        let mut base = Population::new(params, size, seed, workers)?;
        base.depth = laws.depth;
        let samplers = [AtomSampler::new(&laws.x[0]), AtomSampler::new(&laws.x[1])];
        base.evolve_with(|state, _pool, rng| samplers[state].draw(rng))
    }

    /// Rescales every posterior odds `P(σ=1|·)/P(σ=0|·)` in both pools by one
    /// common factor so that the stationary mean of the posterior is `π1`,
    /// i.e. `E[X] = 0`. Returns the factor applied.
    ///
    /// Sampling noise otherwise feeds the uniform-shift direction of the
    /// linearized recursion, which grows by `|θ|k` per level.
    pub fn recalibrate(&mut self) -> Result<f64> {
        let p = self.params;
        let n = self.size() as f64;
        // ln odds; ±∞ for certain posteriors
        let ln_odds: [Vec<f64>; 2] = self.samples.clone().map(|pool| {
            pool.into_iter()
                .map(|x| {
                    let p1 = posterior_of_magnetization(&p, x).clamp(0.0, 1.0);
                    p1.ln() - (1.0 - p1).ln()
                })
                .collect()
        });
        let weights = [p.pi0 / n, p.pi1 / n];
        // g(t) = E[P1 after scaling odds by e^t] - π1, increasing in t
        let eval = |t: f64| {
            let mut g = -p.pi1;
            let mut dg = 0.0;
            for (pool, w) in ln_odds.iter().zip(weights) {
                for &l in pool {
                    let q = logistic(l + t);
                    g += w * q;
                    dg += w * q * (1.0 - q);
                }
            }
            (g, dg)
        };
        let (g0, dg0) = eval(0.0);
        if g0.abs() <= RECALIBRATION_TOL || dg0 <= 0.0 {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = if g0 > 0.0 { (-1.0, 0.0) } else { (0.0, 1.0) };
        while eval(lo).0 > 0.0 {
            lo *= 2.0;
            if lo < -700.0 {
                return Err(Error::Numeric(
                    "odds recalibration failed to bracket".into(),
                ));
            }
        }
        while eval(hi).0 < 0.0 {
            hi *= 2.0;
            if hi > 700.0 {
                return Err(Error::Numeric(
                    "odds recalibration failed to bracket".into(),
                ));
            }
        }
        let mut t = 0.0;
        for _ in 0..200 {
            let (g, dg) = eval(t);
            if g.abs() <= RECALIBRATION_TOL {
                break;
            }
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let newton = t - g / dg;
            let next = if dg > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - t).abs() <= 1e-15 * (1.0 + t.abs()) {
                t = next;
                break;
            }
            t = next;
        }
        for (pool, lo) in self.samples.iter_mut().zip(&ln_odds) {
            for (x, &l) in pool.iter_mut().zip(lo) {
                let p1 = logistic(l + t);
                *x = ((p1 / p.pi1 - 1.0) / p.pi01).min(1.0);
            }
        }
        Ok(t.exp())
    }
}

/// Inverse-CDF draws from a finite atom law.
struct AtomSampler {
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl AtomSampler {
    fn new(law: &AtomDistribution) -> Self {
        let mut acc = 0.0;
        let cdf = law
            .atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        Self {
            values: law.atoms.iter().map(|a| a.value).collect(),
            cdf,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let total = *self.cdf.last().expect("non-empty law");
        let u = rng.random::<f64>() * total;
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.values.len() - 1);
        self.values[i]
    }
}

/// Target accuracy of `|E[P1] - π1|` after recalibration.
pub const RECALIBRATION_TOL: f64 = 1e-14;

fn logistic(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Plug-in moments with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub moments: MagnetizationMoments,
    /// Standard error of each field of `moments`.
    pub stderr: MagnetizationMoments,
}

fn sums(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((0.0, 0.0), |(s1, s2), &x| (s1 + x, s2 + x * x))
}

fn moments_from_sums(
    params: &ModelParams,
    depth: usize,
    s1: (f64, f64),
    s0: (f64, f64),
    n1: f64,
    n0: f64,
) -> MagnetizationMoments {
    let xbar1 = s1.1 / n1;
    let xbar0 = s0.1 / n0;
    MagnetizationMoments {
        depth,
        xbar: params.pi1 * xbar1 + params.pi0 * xbar0,
        xbar1,
        xbar0,
        e1x: s1.0 / n1,
        e0x: s0.0 / n0,
    }
}

/// Delete-one-block jackknife over [`JACKKNIFE_BLOCKS`] contiguous blocks of
/// both pools.
pub fn estimate_moments(pop: &Population) -> MomentEstimate {
    let params = &pop.params;
    let n = pop.size();
    let blocks = JACKKNIFE_BLOCKS.min(n);
    let bounds = chunk_bounds(n, blocks);
    let block_sums: Vec<[(f64, f64); 2]> = bounds
        .iter()
        .map(|&(lo, hi)| [sums(&pop.samples[0][lo..hi]), sums(&pop.samples[1][lo..hi])])
        .collect();
    let total = |s: usize| {
        block_sums
            .iter()
            .fold((0.0, 0.0), |acc, b| (acc.0 + b[s].0, acc.1 + b[s].1))
    };
    let (t0, t1) = (total(0), total(1));
    let moments = moments_from_sums(params, pop.depth, t1, t0, n as f64, n as f64);
    if blocks < 2 {
        return MomentEstimate {
            moments,
            stderr: MagnetizationMoments::zero(pop.depth),
        };
    }
    let replicates: Vec<MagnetizationMoments> = block_sums
        .iter()
        .zip(&bounds)
        .map(|(b, &(lo, hi))| {
            let m = (n - (hi - lo)) as f64;
            let s1 = (t1.0 - b[1].0, t1.1 - b[1].1);
            let s0 = (t0.0 - b[0].0, t0.1 - b[0].1);
            moments_from_sums(params, pop.depth, s1, s0, m, m)
        })
        .collect();
    let bf = blocks as f64;
    let se = |f: fn(&MagnetizationMoments) -> f64| {
        let mean = replicates.iter().map(f).sum::<f64>() / bf;
        let ss: f64 = replicates.iter().map(|r| (f(r) - mean).powi(2)).sum();
        ((bf - 1.0) / bf * ss).sqrt()
    };
    let stderr = MagnetizationMoments {
        depth: pop.depth,
        xbar: se(|m| m.xbar),
        xbar1: se(|m| m.xbar1),
        xbar0: se(|m| m.xbar0),
        e1x: se(|m| m.e1x),
        e0x: se(|m| m.e0x),
    };
    MomentEstimate { moments, stderr }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecaySettings {
    pub max_depth: usize,
    pub pop_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub eps_rec: f64,
    /// Apply [`Population::recalibrate`] after every level.
    pub recalibrate: bool,
}

impl Default for DecaySettings {
    fn default() -> Self {
        Self {
            max_depth: 30,
            pop_size: DEFAULT_POP,
            seed: crate::streams::DEFAULT_SEED,
            workers: 1,
            eps_rec: DEFAULT_EPS_REC,
            recalibrate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DecayVerdict {
    #[serde(rename = "non-reconstruction (numeric)")]
    NonReconstruction,
    #[serde(rename = "reconstruction (numeric)")]
    Reconstruction,
}

impl DecayVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayVerdict::NonReconstruction => "non-reconstruction (numeric)",
            DecayVerdict::Reconstruction => "reconstruction (numeric)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTrace {
    pub k: usize,
    pub omega: f64,
    pub lambda: f64,
    pub pop_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub eps_rec: f64,
    pub max_depth: usize,
    /// Moments at depths `0..=depth_reached`.
    pub levels: Vec<MomentEstimate>,
    pub stopped_early: bool,
    pub verdict: DecayVerdict,
}

impl DecayTrace {
    pub fn terminal(&self) -> &MomentEstimate {
        self.levels.last().expect("trace always holds depth 0")
    }

    pub fn depth_reached(&self) -> usize {
        self.terminal().moments.depth
    }

    pub fn xbar_series(&self) -> Vec<(usize, f64)> {
        self.levels
            .iter()
            .map(|l| (l.moments.depth, l.moments.xbar))
            .collect()
    }
}

/// Iterates [`Population::evolve_level`] up to `max_depth`, recording the
/// moments of every level. The verdict compares the terminal `X̄` with
/// `eps_rec`.
pub fn run_decay(params: &ModelParams, settings: &DecaySettings) -> Result<DecayTrace> {
    run_decay_with_hook(params, settings, |_| {})
}

/// As [`run_decay`], calling `hook` on every population including depth 0.
pub fn run_decay_with_hook<F: FnMut(&Population)>(
    params: &ModelParams,
    settings: &DecaySettings,
    mut hook: F,
) -> Result<DecayTrace> {
    if settings.pop_size < MIN_DECAY_POP {
        return Err(Error::Parameter(format!(
            "decay runs need a population of at least {MIN_DECAY_POP}, got {}",
            settings.pop_size
        )));
    }
    if !(settings.eps_rec > 0.0) {
        return Err(Error::Parameter("eps_rec must be positive".into()));
    }
    let mut pop = Population::new(params, settings.pop_size, settings.seed, settings.workers)?;
    hook(&pop);
    let mut levels = vec![pop.estimate_moments()];
    let mut stopped_early = false;
    for _ in 0..settings.max_depth {
        pop = pop.evolve_level()?;
        if settings.recalibrate {
            pop.recalibrate()?;
        }
        hook(&pop);
        let est = pop.estimate_moments();
        levels.push(est);
        if est.moments.xbar < EARLY_STOP_XBAR {
            stopped_early = pop.depth < settings.max_depth;
            break;
        }
    }
    let terminal = levels.last().expect("non-empty").moments.xbar;
    Ok(DecayTrace {
        k: params.k,
        omega: params.omega,
        lambda: params.lambda_internal,
        pop_size: settings.pop_size,
        seed: settings.seed,
        workers: settings.workers,
        eps_rec: settings.eps_rec,
        max_depth: settings.max_depth,
        levels,
        stopped_early,
        verdict: if terminal < settings.eps_rec {
            DecayVerdict::NonReconstruction
        } else {
            DecayVerdict::Reconstruction
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub omega: f64,
    pub terminal_xbar: f64,
    pub stderr: f64,
    pub depth_reached: usize,
    pub reconstructs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub k: usize,
    pub grid: Vec<f64>,
    pub points: Vec<ScanPoint>,
    /// Adjacent grid values between which the verdict first flips to
    /// reconstruction.
    pub bracket: Option<(f64, f64)>,
    /// Midpoint of `bracket`.
    pub lambda_r: Option<f64>,
    pub pop_size: usize,
    pub depth: usize,
    pub seed: u64,
    pub workers: usize,
    pub eps_rec: f64,
}

/// Runs [`run_decay`] at each grid fugacity with the same master seed.
pub fn scan_threshold(k: usize, grid: &[f64], settings: &DecaySettings) -> Result<ScanResult> {
    if grid.is_empty() {
        return Err(Error::Parameter("scan grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter(
            "scan grid must be strictly increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let params = ModelParams::derive_from_lambda(k, lambda)?;
        let trace = run_decay(&params, settings)?;
        let t = trace.terminal();
        points.push(ScanPoint {
            lambda,
            omega: params.omega,
            terminal_xbar: t.moments.xbar,
            stderr: t.stderr.xbar,
            depth_reached: t.moments.depth,
            reconstructs: trace.verdict == DecayVerdict::Reconstruction,
        });
    }
    let bracket = points
        .iter()
        .position(|p| p.reconstructs)
        .filter(|&i| i > 0)
        .map(|i| (grid[i - 1], grid[i]));
    Ok(ScanResult {
        k,
        grid: grid.to_vec(),
        points,
        bracket,
        lambda_r: bracket.map(|(lo, hi)| 0.5 * (lo + hi)),
        pop_size: settings.pop_size,
        depth: settings.max_depth,
        seed: settings.seed,
        workers: settings.workers,
        eps_rec: settings.eps_rec,
    })
}

/// `steps` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || steps == 0 || (steps > 1 && !(lo < hi)) {
        return Err(Error::Parameter(format!(
            "invalid grid: lo={lo}, hi={hi}, steps={steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let h = (hi - lo) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + h * i as f64
            }
        })
        .collect())
}

/// How the depth-3 root law is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T3Method {
    Atoms {
        cap: usize,
    },
    PopDyn {
        pop_size: usize,
        seed: u64,
        workers: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct T3Estimate {
    pub k: usize,
    pub omega: f64,
    pub mode: PosteriorMode,
    /// `E¹[P(σ_root = 1 | σ(L))]` on the depth-3 tree.
    pub value: f64,
    /// Zero for the atom method.
    pub stderr: f64,
    /// `X̄(3)` in exact mode.
    pub xbar3: f64,
}

/// Posterior of state 1 in the requested mode from an exact-mode
/// magnetization. Paper-mode root odds are `(1+ω)` times the exact ones.
fn mode_posterior(params: &ModelParams, x: f64, mode: PosteriorMode) -> f64 {
    let p1 = posterior_of_magnetization(params, x).clamp(0.0, 1.0);
    match mode {
        PosteriorMode::Exact => p1,
        PosteriorMode::Paper => {
            let a = (1.0 + params.omega) * p1;
            a / (a + (1.0 - p1))
        }
    }
}

pub fn t3_expected_posterior(
    params: &ModelParams,
    mode: PosteriorMode,
    method: T3Method,
) -> Result<T3Estimate> {
    Ok(t3_estimates(params, &[mode], method)?.remove(0))
}

/// [`t3_expected_posterior`] for several modes from one set of samples.
pub fn t3_estimates(
    params: &ModelParams,
    modes: &[PosteriorMode],
    method: T3Method,
) -> Result<Vec<T3Estimate>> {
    let estimate = |mode, value, stderr, xbar3| T3Estimate {
        k: params.k,
        omega: params.omega,
        mode,
        value,
        stderr,
        xbar3,
    };
    match method {
        T3Method::Atoms { cap } => {
            let exact = atom_recursion_with_cap(params, 3, PosteriorMode::Exact, cap)?;
            let xbar3 = exact[3].moments(params).xbar;
            modes
                .iter()
                .map(|&mode| {
                    let value = match mode {
                        PosteriorMode::Exact => exact[3].q[1].expect(|q| 1.0 - q),
                        PosteriorMode::Paper => atom_recursion_with_cap(params, 3, mode, cap)?[3].q
                            [1]
                        .expect(|q| 1.0 - q),
                    };
                    Ok(estimate(mode, value, 0.0, xbar3))
                })
                .collect()
        }
        T3Method::PopDyn {
            pop_size,
            seed,
            workers,
        } => {
            let pop = depth_three_population(params, pop_size, seed, workers)?;
            let xbar3 = pop.estimate_moments().moments.xbar;
            Ok(modes
                .iter()
                .map(|&mode| {
                    let vals: Vec<f64> = pop.samples[1]
                        .iter()
                        .map(|&x| mode_posterior(params, x, mode))
                        .collect();
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = if vals.len() > 1 {
                        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    estimate(mode, mean, (var / n).sqrt(), xbar3)
                })
                .collect())
        }
    }
}

/// Depth-3 samples, drawn over the exact depth-2 laws when the atom cap
/// allows and by plain pool evolution otherwise.
fn depth_three_population(
    params: &ModelParams,
    pop_size: usize,
    seed: u64,
    workers: usize,
) -> Result<Population> {
    match atom_recursion_with_cap(params, 2, PosteriorMode::Exact, DEFAULT_ATOM_CAP) {
        Ok(ladder) => Population::sample_above(&ladder[2], params, pop_size, seed, workers),
        Err(Error::Capacity(_)) => {
            let mut pop = Population::new(params, pop_size, seed, workers)?;
            for _ in 0..3 {
                pop = pop.evolve_level()?;
                pop.recalibrate()?;
            }
            Ok(pop)
        }
        Err(e) => Err(e),
    }
}
