//! Backward recursion for the finite-horizon game.
//!
//! Starting from the terminal value, each stage solves, at every node of the
//! mean-field grid, the self-referential fixed point
//!
//! ```text
//! gamma(.|x) in argmax_gamma E^gamma[ R(x, A, mu) + delta * V_{t+1}(phi(mu, gamma~), X') ]
//! ```
//!
//! where `gamma~` is the solution itself, and then records the value
//! `V_t(mu, x)` of the solved prescription.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{propagate_with, PopulationState, Prescription};
use crate::error::{Error, Result};
use crate::game::{Game, StageData};
use crate::mfgrid::{MeanFieldGrid, ValueTable};
use crate::model::{Horizon, DEFAULT_TIE_TOLERANCE};
use crate::policy::{PolicyTable, StagePolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Sup-norm tolerance on successive prescriptions.
    pub tol: f64,
    /// Weight of the best response in the damped update, in (0, 1].
    pub damping: f64,
    /// Uniform start plus `restarts - 1` random starts.
    pub restarts: usize,
    pub tie_tolerance: f64,
    /// Also start from every pure prescription when there are at most this many.
    pub vertex_starts: usize,
    /// A converged point this close to an exact pure fixed point is replaced by it.
    pub polish_tol: f64,
    pub seed: u64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            max_iters: 500,
            tol: 1e-8,
            damping: 0.5,
            restarts: 4,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
            vertex_starts: 64,
            polish_tol: 1e-6,
            seed: 0,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("damping", "must be in (0, 1]"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if !(self.tie_tolerance >= 0.0) {
            return Err(Error::config("tie_tolerance", "must be non-negative"));
        }
        if !(self.polish_tol >= 0.0) {
            return Err(Error::config("polish_tol", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMethod {
    DampedBestResponse,
    /// Mixed equilibrium located by bisection on the next-period mass.
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    /// Iterations of the selected run.
    pub iterations: usize,
    /// Last sup-norm change of the selected run.
    pub residual: f64,
    pub converged_runs: usize,
    pub distinct_fixed_points: usize,
    /// `(class, state)` cells whose argmax is not a singleton.
    pub ties: Vec<(usize, usize)>,
    pub method: StageMethod,
    /// Period of a cycle seen in a non-converged run, if any.
    pub cycle: Option<usize>,
}

impl StageDiagnostics {
    pub fn multiple_equilibria(&self) -> bool {
        self.distinct_fixed_points > 1
    }
}

#[derive(Debug, Clone)]
pub struct StageSolution {
    pub prescription: Prescription,
    /// `V_t(mu, x)` per class, `[class * states + x]`.
    pub values: Vec<f64>,
    /// Objective of each action, `[(class * states + x) * actions + a]`.
    pub objectives: Vec<f64>,
    pub next_state: PopulationState,
    pub diagnostics: StageDiagnostics,
}

/// One stage at a fixed population state, with the continuation frozen.
pub(crate) struct StageProblem<'a> {
    pub grid: &'a MeanFieldGrid,
    pub mu: &'a PopulationState,
    pub data: StageData,
    pub v_next: &'a ValueTable,
    pub discount: f64,
    pub classes: usize,
    pub states: usize,
    pub actions: usize,
}

impl<'a> StageProblem<'a> {
    pub fn new(
        game: &Game,
        grid: &'a MeanFieldGrid,
        mu: &'a PopulationState,
        v_next: &'a ValueTable,
    ) -> Result<Self> {
        if grid.classes() != game.num_classes() || grid.states() != game.num_states() {
            return Err(Error::Dimension("mean-field grid does not match the game".into()));
        }
        Ok(StageProblem {
            grid,
            mu,
            data: game.stage(mu)?,
            v_next,
            discount: game.model().discount(),
            classes: game.num_classes(),
            states: game.num_states(),
            actions: game.num_actions(),
        })
    }

    pub fn next_state(&self, gamma: &Prescription) -> Result<PopulationState> {
        propagate_with(&self.data, self.mu, gamma)
    }

    /// Action objectives when the population moves to `mu_next`.
    pub fn objectives_at(&self, mu_next: &PopulationState) -> Result<Vec<f64>> {
        let w = self.v_next.interpolate(self.grid, mu_next)?;
        let (n, nx, na) = (self.classes, self.states, self.actions);
        let mut u = vec![0.0; n * nx * na];
        for i in 0..n {
            let wi = &w[i * nx..(i + 1) * nx];
            for x in 0..nx {
                for a in 0..na {
                    let cont: f64 = self
                        .data
                        .kernel_row(i, x, a)
                        .iter()
                        .zip(wi)
                        .map(|(q, v)| q * v)
                        .sum();
                    u[(i * nx + x) * na + a] = self.data.reward(i, x, a) + self.discount * cont;
                }
            }
        }
        Ok(u)
    }

    pub fn objectives(&self, gamma: &Prescription) -> Result<(Vec<f64>, PopulationState)> {
        let next = self.next_state(gamma)?;
        Ok((self.objectives_at(&next)?, next))
    }

    pub fn values(&self, gamma: &Prescription, u: &[f64]) -> Vec<f64> {
        let (n, nx, na) = (self.classes, self.states, self.actions);
        let mut v = vec![0.0; n * nx];
        for i in 0..n {
            for x in 0..nx {
                v[i * nx + x] = (0..na)
                    .map(|a| gamma.prob(i, x, a) * u[(i * nx + x) * na + a])
                    .sum();
            }
        }
        v
    }

    /// Population-weighted value, used to rank distinct fixed points.
    fn welfare(&self, game: &Game, values: &[f64]) -> f64 {
        let nx = self.states;
        (0..self.classes)
            .map(|i| {
                let w = game.groups()[i].weight;
                w * (0..nx).map(|x| self.mu.class(i)[x] * values[i * nx + x]).sum::<f64>()
            })
            .sum()
    }
}

/// Best response to the objectives `u`. Among actions within `tie_tol` of the
/// maximum, the current mixing is kept if it puts mass on them; otherwise the
/// lowest-index action is chosen.
pub(crate) fn best_response(
    u: &[f64],
    current: &Prescription,
    tie_tol: f64,
) -> (Prescription, Vec<(usize, usize)>) {
    let (n, nx, na) = (current.num_classes(), current.num_states(), current.num_actions());
    let mut rows = vec![vec![vec![0.0; na]; nx]; n];
    let mut ties = Vec::new();
    for i in 0..n {
        for x in 0..nx {
            let ux = &u[(i * nx + x) * na..(i * nx + x + 1) * na];
            let best = ux.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..na).filter(|&a| ux[a] >= best - tie_tol).collect();
            if tied.len() > 1 {
                ties.push((i, x));
            }
            let mass: f64 = tied.iter().map(|&a| current.prob(i, x, a)).sum();
            let row = &mut rows[i][x];
            if tied.len() > 1 && mass > 0.0 {
                for &a in &tied {
                    row[a] = current.prob(i, x, a) / mass;
                }
            } else {
                row[tied[0]] = 1.0;
            }
        }
    }
    (Prescription::from_rows_unchecked(rows), ties)
}

fn damp(gamma: &Prescription, br: &Prescription, lambda: f64) -> Prescription {
    let rows = gamma
        .rows()
        .iter()
        .zip(br.rows())
        .map(|(gc, bc)| {
            gc.iter()
                .zip(bc)
                .map(|(g, b)| g.iter().zip(b).map(|(p, q)| (1.0 - lambda) * p + lambda * q).collect())
                .collect()
        })
        .collect();
    Prescription::from_rows_unchecked(rows)
}

struct Run {
    gamma: Prescription,
    iterations: usize,
    residual: f64,
    converged: bool,
    cycle: Option<usize>,
}

fn damped_run(problem: &StageProblem, start: Prescription, cfg: &FixedPointConfig) -> Result<Run> {
    let mut gamma = start;
    let mut recent: Vec<Prescription> = Vec::new();
    let mut residual = f64::INFINITY;
    for k in 1..=cfg.max_iters {
        let (u, _) = problem.objectives(&gamma)?;
        let (br, _) = best_response(&u, &gamma, cfg.tie_tolerance);
        let next = damp(&gamma, &br, cfg.damping);
        residual = next.distance(&gamma);
        gamma = next;
        if residual <= cfg.tol {
            let (u, _) = problem.objectives(&br)?;
            let (snap, _) = best_response(&u, &br, cfg.tie_tolerance);
            if gamma.distance(&br) <= cfg.polish_tol && snap.distance(&br) == 0.0 {
                gamma = br;
                residual = 0.0;
            }
            return Ok(Run {
                gamma,
                iterations: k,
                residual,
                converged: true,
                cycle: None,
            });
        }
        if cfg.max_iters - k < 32 {
            recent.push(gamma.clone());
        }
    }
    let cycle = recent.last().and_then(|last| {
        let len = recent.len();
        (1..len).find(|&p| recent[len - 1 - p].distance(last) <= cfg.tol).filter(|&p| p >= 2)
    });
    Ok(Run {
        gamma,
        iterations: cfg.max_iters,
        residual,
        converged: false,
        cycle,
    })
}

fn random_prescription(rng: &mut ChaCha8Rng, n: usize, nx: usize, na: usize) -> Prescription {
    let rows = (0..n)
        .map(|_| {
            (0..nx)
                .map(|_| {
                    let v: Vec<f64> = (0..na).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|p| p / s).collect()
                })
                .collect()
        })
        .collect();
    Prescription::from_rows_unchecked(rows)
}

fn vertex_prescriptions(n: usize, nx: usize, na: usize, limit: usize) -> Vec<Prescription> {
    let cells = n * nx;
    let count = (na as u128).checked_pow(cells as u32).unwrap_or(u128::MAX);
    if na < 2 || count > limit as u128 {
        return Vec::new();
    }
    (0..count as usize)
        .map(|mut code| {
            let mut rows = vec![vec![vec![0.0; na]; nx]; n];
            for cell in 0..cells {
                rows[cell / nx][cell % nx][code % na] = 1.0;
                code /= na;
            }
            Prescription::from_rows_unchecked(rows)
        })
        .collect()
}

pub(crate) fn stage_seed(seed: u64, t: usize, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Solve one stage at population state `mu` against the continuation
/// `v_next` (the value one period ahead, interpolated on `grid`).
///
/// Runs damped best-response iteration from a warm start (if given), the
/// uniform prescription, every pure prescription (when few) and random
/// prescriptions. Converged runs closer than `10 * tol` are merged; among
/// genuinely distinct fixed points the one with the highest
/// population-weighted value is returned. If no run converges and the
/// next-period state is one-dimensional, the mixed fixed point is located by
/// bisection.
pub fn stage_fixed_point(
    game: &Game,
    grid: &MeanFieldGrid,
    mu: &PopulationState,
    v_next: &ValueTable,
    cfg: &FixedPointConfig,
    warm_start: Option<&Prescription>,
    salt: u64,
) -> Result<StageSolution> {
    let problem = StageProblem::new(game, grid, mu, v_next)?;
    let (n, nx, na) = (problem.classes, problem.states, problem.actions);

    let mut starts: Vec<Prescription> = Vec::new();
    if let Some(w) = warm_start {
        starts.push(w.clone());
    }
    starts.push(Prescription::uniform(n, nx, na));
    starts.extend(vertex_prescriptions(n, nx, na, cfg.vertex_starts));
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, 0, salt));
    if na > 1 {
        for _ in 1..cfg.restarts {
            starts.push(random_prescription(&mut rng, n, nx, na));
        }
    }

    let mut found: Vec<Run> = Vec::new();
    let mut best_failed: Option<Run> = None;
    let mut converged_runs = 0;
    for start in starts {
        let run = damped_run(&problem, start, cfg)?;
        if run.converged {
            converged_runs += 1;
            if !found.iter().any(|r| r.gamma.distance(&run.gamma) <= 10.0 * cfg.tol) {
                found.push(run);
            }
        } else if best_failed.as_ref().is_none_or(|b| run.residual < b.residual) {
            best_failed = Some(run);
        }
    }

    let mut method = StageMethod::DampedBestResponse;
    let mut cycle = None;
    if found.is_empty() {
        cycle = best_failed.as_ref().and_then(|r| r.cycle);
        match bisect_mixed(&problem, cfg)? {
            Some(gamma) => {
                method = StageMethod::Bisection;
                found.push(Run {
                    gamma,
                    iterations: 0,
                    residual: 0.0,
                    converged: true,
                    cycle: None,
                });
            }
            None => {
                let b = best_failed.expect("at least one run");
                return Err(Error::NoFixedPoint {
                    best_residual: b.residual,
                    iterations: b.iterations,
                    last_iterate: b.gamma.rows().to_vec(),
                });
            }
        }
    }

    let distinct = found.len();
    let mut best: Option<(f64, Run, Vec<f64>, PopulationState, Vec<f64>)> = None;
    for run in found {
        let (u, next) = problem.objectives(&run.gamma)?;
        let values = problem.values(&run.gamma, &u);
        let score = problem.welfare(game, &values);
        if best.as_ref().is_none_or(|b| score > b.0 + 1e-12) {
            best = Some((score, run, u, next, values));
        }
    }
    let (_, run, u, next, values) = best.expect("non-empty");
    let (_, ties) = best_response(&u, &run.gamma, cfg.tie_tolerance);
    Ok(StageSolution {
        prescription: run.gamma,
        values,
        objectives: u,
        next_state: next,
        diagnostics: StageDiagnostics {
            iterations: run.iterations,
            residual: run.residual,
            converged_runs,
            distinct_fixed_points: distinct,
            ties,
            method,
            cycle,
        },
    })
}

/// Mixed fixed point for a single class with two states: find the next-period
/// infected mass `m` at which the best-response image of `m` brackets `m`.
fn bisect_mixed(problem: &StageProblem, cfg: &FixedPointConfig) -> Result<Option<Prescription>> {
    if problem.classes != 1 || problem.states != 2 {
        return Ok(None);
    }
    let na = problem.actions;
    let point = |m: f64| PopulationState::new(vec![vec![1.0 - m, m]]).expect("two-point distribution");
    let pure_br = |m: f64| -> Result<(Prescription, f64)> {
        let u = problem.objectives_at(&point(m))?;
        let choice: Vec<usize> = (0..2)
            .map(|x| {
                let ux = &u[x * na..(x + 1) * na];
                let best = ux.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (0..na).find(|&a| ux[a] >= best).unwrap()
            })
            .collect();
        let gamma = Prescription::pure_by_state(1, na, &choice);
        let image = problem.next_state(&gamma)?.class(0)[1];
        Ok((gamma, image))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (_, h0) = pure_br(lo)?;
    let (_, h1) = pure_br(hi)?;
    if h0 <= lo || h1 >= hi {
        // a pure fixed point at the boundary should have been found already
        return Ok(None);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (_, h) = pure_br(mid)?;
        if h > mid {
            lo = mid;
        } else if h < mid {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
        }
    }
    let (g_lo, h_lo) = pure_br(lo)?;
    let (g_hi, h_hi) = pure_br(hi)?;
    let target = 0.5 * (lo + hi);
    let s = if (h_lo - h_hi).abs() > 0.0 {
        ((h_lo - target) / (h_lo - h_hi)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut gamma = damp(&g_lo, &g_hi, s);
    // states without mass do not move the population: play their own argmax
    let u = problem.objectives(&gamma)?.0;
    for x in 0..2 {
        if problem.mu.class(0)[x] == 0.0 {
            let ux = &u[x * na..(x + 1) * na];
            let best = ux.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = (0..na).find(|&a| ux[a] >= best).unwrap();
            let row = &mut gamma.rows_mut()[0][x];
            row.iter_mut().for_each(|p| *p = 0.0);
            row[a] = 1.0;
        }
    }
    // accept only if the mixture is itself a fixed point
    let (u, _) = problem.objectives(&gamma)?;
    let (br, _) = best_response(&u, &gamma, cfg.tie_tolerance);
    if br.distance(&gamma) <= cfg.tol {
        Ok(Some(gamma))
    } else {
        Ok(None)
    }
}

fn finite_horizon(game: &Game) -> Result<usize> {
    match game.model().horizon() {
        Horizon::Finite(t) => Ok(t),
        Horizon::Infinite => Err(Error::InvalidModel(
            "solve_finite needs a finite horizon".into(),
        )),
    }
}

/// Backward recursion over `t = T-1, ..., 0` (zero-based stages) with
/// `V_T = terminal` (zero when `None`).
pub fn solve_finite(
    game: &Game,
    grid: &MeanFieldGrid,
    cfg: &FixedPointConfig,
    terminal: Option<&ValueTable>,
) -> Result<PolicyTable> {
    cfg.validate()?;
    let horizon = finite_horizon(game)?;
    let terminal = match terminal {
        Some(t) => {
            if t.num_nodes() != grid.num_nodes() {
                return Err(Error::Dimension("terminal value table does not match the grid".into()));
            }
            t.clone()
        }
        None => ValueTable::zeros(grid),
    };
    let nodes: Vec<PopulationState> = (0..grid.num_nodes()).map(|k| grid.node(k)).collect();
    let mut stages: Vec<StagePolicy> = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let v_next = stages.last().map_or(&terminal, |s| &s.values);
        let solved: Vec<StageSolution> = nodes
            .par_iter()
            .enumerate()
            .map(|(k, mu)| {
                stage_fixed_point(game, grid, mu, v_next, cfg, None, stage_seed(0, t, k as u64))
                    .map_err(|e| Error::Stage {
                        t,
                        node: k,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;
        stages.push(StagePolicy::from_solutions(grid, solved));
    }
    stages.reverse();
    Ok(PolicyTable::new(
        game,
        grid.clone(),
        Horizon::Finite(horizon),
        *cfg,
        stages,
        terminal,
    ))
}
