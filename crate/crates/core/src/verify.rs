//! Audits of solved policies.
//!
//! With the population flow frozen, a single agent faces an ordinary Markov
//! decision problem; its exact optimal value is compared with the value of
//! following the policy (equilibrium gap). The converse check re-verifies the
//! stage fixed-point condition at every stored node.

use std::io::Write;

use rayon::prelude::*;

use crate::dynamics::{propagate, Policy, PopulationState, Prescription};
use crate::error::{Error, Result};
use crate::finite::{best_response, StageProblem};
use crate::game::Game;
use crate::model::Horizon;
use crate::policy::PolicyTable;

/// Truncation tail bound targeted by infinite-horizon audits.
pub const TAIL_TOLERANCE: f64 = 1e-8;
/// Steps reported by default for infinite-horizon audits.
pub const DEFAULT_REPORT_STEPS: usize = 50;
/// Gap tolerance before interpolation and truncation allowances.
pub const GAP_TOLERANCE: f64 = 1e-5;

fn check_path(game: &Game, path: &[PopulationState], terminal: &[f64]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Dimension("empty population path".into()));
    }
    if terminal.len() != game.num_classes() * game.num_states() {
        return Err(Error::Dimension("terminal value has the wrong length".into()));
    }
    Ok(())
}

/// Exact optimal values `W*_t(class, x)` of one agent against the frozen
/// population path `mu_0, ..., mu_H`, with `W*_H = terminal`. Returns `H + 1`
/// vectors indexed `[class * states + x]`.
pub fn best_response_value(game: &Game, path: &[PopulationState], terminal: &[f64]) -> Result<Vec<Vec<f64>>> {
    backward(game, path, terminal, None)
}

/// Values of following `prescriptions[t]` against the frozen path.
pub fn policy_value(
    game: &Game,
    path: &[PopulationState],
    prescriptions: &[Prescription],
    terminal: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if prescriptions.len() + 1 != path.len() {
        return Err(Error::Dimension("need one prescription per step".into()));
    }
    backward(game, path, terminal, Some(prescriptions))
}

fn backward(
    game: &Game,
    path: &[PopulationState],
    terminal: &[f64],
    follow: Option<&[Prescription]>,
) -> Result<Vec<Vec<f64>>> {
    check_path(game, path, terminal)?;
    let (n, nx, na) = (game.num_classes(), game.num_states(), game.num_actions());
    let delta = game.model().discount();
    let h = path.len() - 1;
    let mut out = vec![Vec::new(); h + 1];
    out[h] = terminal.to_vec();
    for t in (0..h).rev() {
        let stage = game.stage(&path[t])?;
        let next = &out[t + 1];
        let mut cur = vec![0.0; n * nx];
        for i in 0..n {
            let w = &next[i * nx..(i + 1) * nx];
            for x in 0..nx {
                let q = |a: usize| -> f64 {
                    stage.reward(i, x, a)
                        + delta * stage.kernel_row(i, x, a).iter().zip(w).map(|(p, v)| p * v).sum::<f64>()
                };
                cur[i * nx + x] = match follow {
                    None => (0..na).map(q).fold(f64::NEG_INFINITY, f64::max),
                    Some(g) => (0..na).map(|a| g[t].prob(i, x, a) * q(a)).sum(),
                };
            }
        }
        out[t] = cur;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub t: usize,
    pub class: usize,
    pub state: usize,
    pub policy_value: f64,
    pub best_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub max_gap: f64,
    /// Largest difference between the policy's interpolated value table and
    /// the exact value of following it along the realized path.
    pub interpolation_error: f64,
    /// Truncation allowance (infinite horizon only).
    pub tail_bound: f64,
    /// Number of periods evaluated (including the truncation tail).
    pub horizon_evaluated: usize,
    pub path: Vec<PopulationState>,
}

impl GapReport {
    pub fn tolerance(&self) -> f64 {
        GAP_TOLERANCE + self.interpolation_error + self.tail_bound
    }

    pub fn passes(&self) -> bool {
        self.max_gap <= self.tolerance()
    }

    /// Rows as `t,class,state,V_policy,V_star,gap`.
    pub fn write_csv<W: Write>(&self, mut w: W, game: &Game) -> Result<()> {
        writeln!(w, "t,class,state,V_policy,V_star,gap")?;
        let states = game.model().states();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t, r.class, states[r.state], r.policy_value, r.best_value, r.gap
            )?;
        }
        Ok(())
    }

    /// One `key=value` line for logs and CI.
    pub fn summary_line(&self) -> String {
        format!(
            "gap_status={} max_gap={:e} tolerance={:e} interpolation_error={:e} tail_bound={:e} horizon={}",
            if self.passes() { "pass" } else { "fail" },
            self.max_gap,
            self.tolerance(),
            self.interpolation_error,
            self.tail_bound,
            self.horizon_evaluated
        )
    }
}

/// Periods needed so that `2 delta^T max|R| / (1 - delta)` drops below `tol`.
pub fn truncation_length(delta: f64, max_reward: f64, tol: f64) -> usize {
    if max_reward == 0.0 || delta == 0.0 {
        return 0;
    }
    let needed = (tol * (1.0 - delta) / (2.0 * max_reward)).ln() / delta.ln();
    needed.max(0.0).ceil() as usize
}

/// Equilibrium gap `W*_t - V^sigma_t` of a solved policy from `mu_start` at
/// time `t_start`. For the infinite horizon the game is truncated after
/// `report_steps` plus a tail long enough that the discounted remainder is
/// below [`TAIL_TOLERANCE`]; only the first `report_steps + 1` times are
/// reported.
pub fn equilibrium_gap(
    game: &Game,
    policy: &PolicyTable,
    mu_start: &PopulationState,
    t_start: usize,
    report_steps: Option<usize>,
) -> Result<GapReport> {
    let delta = game.model().discount();
    let (steps, report, tail_bound) = match policy.horizon() {
        Horizon::Finite(h) => {
            if t_start > h {
                return Err(Error::OutsideDomain {
                    t: t_start,
                    reason: format!("policy horizon is {h}"),
                });
            }
            (h - t_start, h - t_start, 0.0)
        }
        Horizon::Infinite => {
            let report = report_steps.unwrap_or(DEFAULT_REPORT_STEPS);
            let m = game.model().max_abs_reward();
            let tail = truncation_length(delta, m, TAIL_TOLERANCE);
            let bound = if m == 0.0 {
                0.0
            } else {
                2.0 * delta.powi(tail as i32) * m / (1.0 - delta)
            };
            (report + tail, report, bound)
        }
    };
    let mut path = vec![mu_start.clone().at_time(t_start)];
    let mut prescriptions = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = t_start + s;
        let gamma = policy.prescription(game, t, &path[s])?;
        let next = propagate(game, &path[s], &gamma).map_err(|e| Error::OutsideDomain {
            t: t + 1,
            reason: e.to_string(),
        })?;
        prescriptions.push(gamma);
        path.push(next);
    }
    let terminal = match policy.horizon() {
        Horizon::Finite(h) => policy.value_at(h, &path[steps])?,
        Horizon::Infinite => vec![0.0; game.num_classes() * game.num_states()],
    };
    let best = best_response_value(game, &path, &terminal)?;
    let follow = policy_value(game, &path, &prescriptions, &terminal)?;
    let nx = game.num_states();
    let mut rows = Vec::new();
    let mut max_gap = f64::NEG_INFINITY;
    let mut interp: f64 = 0.0;
    for s in 0..=report {
        let table = policy.value_at(t_start + s, &path[s])?;
        for (k, (&w, &v)) in best[s].iter().zip(&follow[s]).enumerate() {
            let gap = w - v;
            max_gap = max_gap.max(gap);
            interp = interp.max((table[k] - v).abs());
            rows.push(GapRow {
                t: t_start + s,
                class: k / nx,
                state: k % nx,
                policy_value: v,
                best_value: w,
                gap,
            });
        }
    }
    Ok(GapReport {
        rows,
        max_gap,
        interpolation_error: interp,
        tail_bound,
        horizon_evaluated: steps,
        path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The stored prescription is not a best response to itself.
    Prescription,
    /// The stored value disagrees with the value of the stored prescription.
    Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: usize,
    pub node: usize,
    pub class: usize,
    pub state: usize,
    pub kind: ViolationKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieFlag {
    pub t: usize,
    pub node: usize,
    pub class: usize,
    pub state: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
    pub max_prescription_residual: f64,
    pub max_value_residual: f64,
    /// Cells whose argmax is not a singleton.
    pub ties: Vec<TieFlag>,
}

impl ScanReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-check every stored `(t, node)`: the best response to the stored
/// prescription (ties resolved towards it) must equal it within `tol`, and the
/// stored value must equal the value of the stored prescription within `tol`.
pub fn converse_scan(game: &Game, policy: &PolicyTable, tol: f64) -> Result<ScanReport> {
    if policy.model_hash() != crate::policy::game_hash(game) {
        return Err(Error::PolicyFormat("policy was solved for a different game".into()));
    }
    let grid = policy.grid();
    let tie_tol = policy.config().tie_tolerance;
    let nx = game.num_states();
    let mut report = ScanReport::default();
    for (s, stage) in policy.stages().iter().enumerate() {
        let cont = policy.continuation(s)?;
        let per_node: Vec<(Vec<Violation>, f64, f64, Vec<TieFlag>)> = (0..grid.num_nodes())
            .into_par_iter()
            .map(|node| -> Result<_> {
                let mu = grid.node(node);
                let problem = StageProblem::new(game, grid, &mu, cont)?;
                let gamma = &stage.prescriptions[node];
                let (u, _) = problem.objectives(gamma)?;
                let (br, ties) = best_response(&u, gamma, tie_tol);
                let values = problem.values(gamma, &u);
                let mut found = Vec::new();
                let (mut pr, mut vr): (f64, f64) = (0.0, 0.0);
                for i in 0..game.num_classes() {
                    for x in 0..nx {
                        let d = br
                            .row(i, x)
                            .iter()
                            .zip(gamma.row(i, x))
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        let dv = (values[i * nx + x] - stage.values.get(node, i, x)).abs();
                        pr = pr.max(d);
                        vr = vr.max(dv);
                        if d > tol {
                            found.push(Violation {
                                t: s,
                                node,
                                class: i,
                                state: x,
                                kind: ViolationKind::Prescription,
                                magnitude: d,
                            });
                        }
                        if dv > tol {
                            found.push(Violation {
                                t: s,
                                node,
                                class: i,
                                state: x,
                                kind: ViolationKind::Value,
                                magnitude: dv,
                            });
                        }
                    }
                }
                let ties = ties
                    .into_iter()
                    .map(|(class, state)| TieFlag { t: s, node, class, state })
                    .collect();
                Ok((found, pr, vr, ties))
            })
            .collect::<Result<_>>()?;
        for (v, pr, vr, ties) in per_node {
            report.checked += 1;
            report.violations.extend(v);
            report.max_prescription_residual = report.max_prescription_residual.max(pr);
            report.max_value_residual = report.max_value_residual.max(vr);
            report.ties.extend(ties);
        }
    }
    Ok(report)
}

/// Fixed-point residual of an arbitrary policy along its own path: at each
/// step, the sup distance between its prescription and the tie-preserving best
/// response against its own interpolated continuation.
pub fn path_residuals(game: &Game, policy: &PolicyTable, mu0: &PopulationState, steps: usize) -> Result<Vec<f64>> {
    let mut mu = mu0.clone();
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let gamma = policy.prescription(game, t, &mu)?;
        let problem = StageProblem::new(game, policy.grid(), &mu, policy.continuation(t)?)?;
        let (u, _) = problem.objectives(&gamma)?;
        let (br, _) = best_response(&u, &gamma, policy.config().tie_tolerance);
        out.push(br.distance(&gamma));
        mu = propagate(game, &mu, &gamma)?;
    }
    Ok(out)
}
