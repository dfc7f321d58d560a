//! Stationary equilibria of the discounted infinite-horizon game.
//!
//! Modified policy iteration on the value table: with the prescription table
//! frozen, `V` is updated by a few evaluation sweeps
//! `V(mu, x) <- sum_a theta(a|x) [R + delta * sum_y Q V(phi(mu, theta(mu)), y)]`,
//! then every node's stage fixed point is re-solved against the new `V`,
//! warm-started from the previous prescription.

use std::io::Write;

use rayon::prelude::*;

use crate::dynamics::{Policy, PopulationState, Prescription};
use crate::error::{Error, Result};
use crate::finite::{stage_fixed_point, stage_seed, FixedPointConfig, StageProblem, StageSolution};
use crate::game::Game;
use crate::mfgrid::{MeanFieldGrid, ValueTable};
use crate::model::Horizon;
use crate::policy::{PolicyTable, StagePolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteConfig {
    /// Evaluation sweeps between prescription re-solves.
    pub sweeps_per_solve: usize,
    /// Prescription tolerance between successive re-solves.
    pub tol: f64,
    /// Bellman residual tolerance on the value table.
    pub tol_value: f64,
    pub max_sweeps: usize,
}

impl Default for InfiniteConfig {
    fn default() -> Self {
        InfiniteConfig {
            sweeps_per_solve: 10,
            tol: 1e-8,
            tol_value: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

impl InfiniteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps_per_solve == 0 {
            return Err(Error::config("sweeps_per_solve", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if !(self.tol_value > 0.0) {
            return Err(Error::config("tol_value", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub policy: PolicyTable,
    /// Bellman residual of the returned value under the returned prescriptions.
    pub value_residual: f64,
    /// Prescription change in the last re-solve.
    pub prescription_residual: f64,
    pub sweeps: usize,
    pub outer_iterations: usize,
    /// `(value residual, prescription residual)` after each outer iteration.
    pub history: Vec<(f64, f64)>,
    /// Largest ratio of successive sweep residuals with the prescription frozen.
    pub contraction_ratio: f64,
}

/// Transition and reward data of one node under a frozen prescription.
struct NodeEval {
    weights: Vec<(usize, f64)>,
    /// `sum_a theta(a|x) R` per `[class * states + x]`.
    reward: Vec<f64>,
    /// `sum_a theta(a|x) Q(y|x,a)`, `[(class * states + x) * states + y]`.
    kernel: Vec<f64>,
}

fn node_eval(problem: &StageProblem, gamma: &Prescription) -> Result<NodeEval> {
    let next = problem.next_state(gamma)?;
    let weights = problem.grid.locate(&next)?;
    let (n, nx, na) = (problem.classes, problem.states, problem.actions);
    let mut reward = vec![0.0; n * nx];
    let mut kernel = vec![0.0; n * nx * nx];
    for i in 0..n {
        for x in 0..nx {
            let k = i * nx + x;
            for a in 0..na {
                let p = gamma.prob(i, x, a);
                if p == 0.0 {
                    continue;
                }
                reward[k] += p * problem.data.reward(i, x, a);
                for (o, q) in kernel[k * nx..(k + 1) * nx]
                    .iter_mut()
                    .zip(problem.data.kernel_row(i, x, a))
                {
                    *o += p * q;
                }
            }
        }
    }
    Ok(NodeEval {
        weights,
        reward,
        kernel,
    })
}

fn sweep(evals: &[NodeEval], v: &ValueTable, grid: &MeanFieldGrid, delta: f64, n: usize, nx: usize) -> ValueTable {
    let rows: Vec<Vec<f64>> = evals
        .par_iter()
        .map(|e| {
            let w = v.combine(&e.weights);
            let mut out = vec![0.0; n * nx];
            for i in 0..n {
                for x in 0..nx {
                    let k = i * nx + x;
                    let cont: f64 = e.kernel[k * nx..(k + 1) * nx]
                        .iter()
                        .zip(&w[i * nx..(i + 1) * nx])
                        .map(|(q, v)| q * v)
                        .sum();
                    out[k] = e.reward[k] + delta * cont;
                }
            }
            out
        })
        .collect();
    ValueTable::from_node_rows(grid, rows)
}

/// Solve the stationary equilibrium on `grid`.
pub fn solve_infinite(
    game: &Game,
    grid: &MeanFieldGrid,
    cfg: &FixedPointConfig,
    icfg: &InfiniteConfig,
) -> Result<StationarySolution> {
    cfg.validate()?;
    icfg.validate()?;
    if game.model().horizon() != Horizon::Infinite {
        return Err(Error::InvalidModel("solve_infinite needs an infinite horizon".into()));
    }
    let delta = game.model().discount();
    let (n, nx) = (game.num_classes(), game.num_states());
    let nodes: Vec<PopulationState> = (0..grid.num_nodes()).map(|k| grid.node(k)).collect();

    let solve_all = |v: &ValueTable, warm: Option<&[Prescription]>| -> Result<Vec<StageSolution>> {
        nodes
            .par_iter()
            .enumerate()
            .map(|(k, mu)| {
                stage_fixed_point(game, grid, mu, v, cfg, warm.map(|w| &w[k]), stage_seed(0, 0, k as u64))
                    .map_err(|e| Error::Stage {
                        t: 0,
                        node: k,
                        source: Box::new(e),
                    })
            })
            .collect()
    };
    let evaluate = |v: &ValueTable, theta: &[Prescription]| -> Result<Vec<NodeEval>> {
        nodes
            .par_iter()
            .zip(theta)
            .map(|(mu, gamma)| node_eval(&StageProblem::new(game, grid, mu, v)?, gamma))
            .collect()
    };

    let mut v = ValueTable::zeros(grid);
    let mut solved = solve_all(&v, None)?;
    let mut theta: Vec<Prescription> = solved.iter().map(|s| s.prescription.clone()).collect();
    let mut history = Vec::new();
    let mut sweeps = 0;
    let mut outer = 0;
    let mut ratio: f64 = 0.0;
    let mut last_value = f64::INFINITY;
    let mut last_presc;
    loop {
        outer += 1;
        let evals = evaluate(&v, &theta)?;
        let mut prev_res: Option<f64> = None;
        for _ in 0..icfg.sweeps_per_solve {
            let next = sweep(&evals, &v, grid, delta, n, nx);
            let res = next.distance(&v);
            v = next;
            sweeps += 1;
            if let Some(p) = prev_res {
                if p > 1e-12 {
                    ratio = ratio.max(res / p);
                }
            }
            prev_res = Some(res);
            last_value = res;
            if res < icfg.tol_value {
                break;
            }
        }
        solved = solve_all(&v, Some(&theta))?;
        let new_theta: Vec<Prescription> = solved.iter().map(|s| s.prescription.clone()).collect();
        last_presc = new_theta
            .iter()
            .zip(&theta)
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max);
        theta = new_theta;
        history.push((last_value, last_presc));
        if last_presc < icfg.tol && last_value < icfg.tol_value {
            let evals = evaluate(&v, &theta)?;
            let bellman = sweep(&evals, &v, grid, delta, n, nx).distance(&v);
            if bellman < icfg.tol_value {
                last_value = bellman;
                break;
            }
        }
        if sweeps >= icfg.max_sweeps {
            return Err(Error::NoStationaryPoint {
                sweeps,
                last_value,
                last_prescription: last_presc,
                history,
            });
        }
    }

    let mut stage = StagePolicy::from_solutions(grid, solved);
    stage.values = v;
    let terminal = stage.values.clone();
    let policy = PolicyTable::new(game, grid.clone(), Horizon::Infinite, *cfg, vec![stage], terminal);
    Ok(StationarySolution {
        policy,
        value_residual: last_value,
        prescription_residual: last_presc,
        sweeps,
        outer_iterations: outer,
        history,
        contraction_ratio: ratio,
    })
}

#[derive(Debug, Clone)]
pub struct StationaryReport {
    pub state: PopulationState,
    pub steps: usize,
    pub converged: bool,
    /// Sup-norm change of the last step.
    pub residual: f64,
    /// Period of a detected cycle when the iteration does not settle.
    pub cycle: Option<usize>,
    pub path: Vec<PopulationState>,
}

/// Stationary states as `graphon,class,state,mass` rows.
pub fn write_stationary_csv<W: Write>(mut w: W, game: &Game, rows: &[(String, PopulationState)]) -> Result<()> {
    writeln!(w, "graphon,class,state,mass")?;
    let states = game.model().states();
    for (label, mu) in rows {
        for i in 0..mu.num_classes() {
            for (x, p) in mu.class(i).iter().enumerate() {
                writeln!(w, "{label},{i},{},{p}", states[x])?;
            }
        }
    }
    Ok(())
}

/// Iterate `mu <- phi(mu, policy(mu))` until successive states differ by less
/// than `tol`, a cycle is detected among the last 100 iterates, or
/// `max_steps` is reached.
pub fn stationary_mean_field(
    game: &Game,
    policy: &dyn Policy,
    mu0: &PopulationState,
    tol: f64,
    max_steps: usize,
) -> Result<StationaryReport> {
    const WINDOW: usize = 100;
    let mut mu = mu0.clone().at_time(0);
    let mut path = vec![mu.clone()];
    let mut residual = f64::INFINITY;
    for step in 1..=max_steps {
        let gamma = policy.prescription(game, 0, &mu)?;
        let next = crate::dynamics::propagate(game, &mu, &gamma)?;
        residual = next.distance(&mu);
        mu = next;
        path.push(mu.clone());
        if residual < tol {
            return Ok(StationaryReport {
                state: mu,
                steps: step,
                converged: true,
                residual,
                cycle: None,
                path,
            });
        }
        let len = path.len();
        let lo = len.saturating_sub(WINDOW + 1);
        if let Some(j) = (lo..len - 2).rev().find(|&j| path[j].distance(&mu) < tol) {
            return Ok(StationaryReport {
                state: mu,
                steps: step,
                converged: false,
                residual,
                cycle: Some(len - 1 - j),
                path,
            });
        }
    }
    Ok(StationaryReport {
        state: mu,
        steps: max_steps,
        converged: false,
        residual,
        cycle: None,
        path,
    })
}
