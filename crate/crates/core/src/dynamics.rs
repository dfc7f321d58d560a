//! Forward population dynamics: the discrete-time McKean-Vlasov map.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{Game, StageData};

/// Tolerance on the unit mass of each class distribution.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Mass drift tolerated inside `propagate` before it is reported as an error.
pub const MASS_TOL: f64 = 1e-9;

/// One probability vector over states per class (group).
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    dists: Vec<Vec<f64>>,
    pub t: usize,
}

fn check_simplex(v: &[f64], tol: f64, what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < -tol) {
        return Err(Error::Distribution(format!("{what} has a negative entry: {v:?}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Distribution(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl PopulationState {
    pub fn new(dists: Vec<Vec<f64>>) -> Result<Self> {
        if dists.is_empty() || dists[0].is_empty() {
            return Err(Error::Dimension("empty population state".into()));
        }
        let nx = dists[0].len();
        for (i, d) in dists.iter().enumerate() {
            if d.len() != nx {
                return Err(Error::Dimension("ragged population state".into()));
            }
            check_simplex(d, SIMPLEX_TOL, &format!("class {i} distribution"))?;
        }
        Ok(PopulationState { dists, t: 0 })
    }

    /// The same distribution for each of `classes` classes.
    pub fn uniform_classes(classes: usize, dist: Vec<f64>) -> Result<Self> {
        Self::new(vec![dist; classes])
    }

    /// Point mass on `x` in every class.
    pub fn point_mass(classes: usize, states: usize, x: usize) -> Self {
        let mut d = vec![0.0; states];
        d[x] = 1.0;
        PopulationState {
            dists: vec![d; classes],
            t: 0,
        }
    }

    pub fn at_time(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.dists.len()
    }

    pub fn num_states(&self) -> usize {
        self.dists[0].len()
    }

    pub fn class(&self, i: usize) -> &[f64] {
        &self.dists[i]
    }

    pub fn classes(&self) -> &[Vec<f64>] {
        &self.dists
    }

    /// Sup-norm distance over classes and states.
    pub fn distance(&self, other: &PopulationState) -> f64 {
        self.dists
            .iter()
            .flatten()
            .zip(other.dists.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-class map from private state to a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    rows: Vec<Vec<Vec<f64>>>,
}

impl Prescription {
    pub fn new(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() || rows[0][0].is_empty() {
            return Err(Error::Dimension("empty prescription".into()));
        }
        let (nx, na) = (rows[0].len(), rows[0][0].len());
        for (i, class) in rows.iter().enumerate() {
            if class.len() != nx || class.iter().any(|r| r.len() != na) {
                return Err(Error::Dimension("ragged prescription".into()));
            }
            for (x, r) in class.iter().enumerate() {
                check_simplex(r, SIMPLEX_TOL, &format!("prescription row (class {i}, state {x})"))?;
            }
        }
        Ok(Prescription { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<Vec<f64>>>) -> Self {
        Prescription { rows }
    }

    /// Every class plays `action` in every state.
    pub fn pure(classes: usize, states: usize, actions: usize, action: usize) -> Self {
        let mut r = vec![0.0; actions];
        r[action] = 1.0;
        Prescription {
            rows: vec![vec![r; states]; classes],
        }
    }

    /// Every class plays `choice[x]` in state `x`.
    pub fn pure_by_state(classes: usize, actions: usize, choice: &[usize]) -> Self {
        let per_class: Vec<Vec<f64>> = choice
            .iter()
            .map(|&a| {
                let mut r = vec![0.0; actions];
                r[a] = 1.0;
                r
            })
            .collect();
        Prescription {
            rows: vec![per_class; classes],
        }
    }

    pub fn uniform(classes: usize, states: usize, actions: usize) -> Self {
        Prescription {
            rows: vec![vec![vec![1.0 / actions as f64; actions]; states]; classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn num_states(&self) -> usize {
        self.rows[0].len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows[0][0].len()
    }

    #[inline]
    pub fn prob(&self, class: usize, x: usize, a: usize) -> f64 {
        self.rows[class][x][a]
    }

    pub fn row(&self, class: usize, x: usize) -> &[f64] {
        &self.rows[class][x]
    }

    pub fn rows(&self) -> &[Vec<Vec<f64>>] {
        &self.rows
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<Vec<Vec<f64>>> {
        &mut self.rows
    }

    pub fn distance(&self, other: &Prescription) -> f64 {
        self.rows
            .iter()
            .flatten()
            .flatten()
            .zip(other.rows.iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Something that generates a prescription from the population state.
pub trait Policy: Sync {
    fn prescription(&self, game: &Game, t: usize, mu: &PopulationState) -> Result<Prescription>;
}

/// The same prescription at every time and population state.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Prescription);

impl Policy for ConstantPolicy {
    fn prescription(&self, _game: &Game, _t: usize, _mu: &PopulationState) -> Result<Prescription> {
        Ok(self.0.clone())
    }
}

fn check_dims(game: &Game, mu: &PopulationState, gamma: &Prescription) -> Result<()> {
    let (n, nx, na) = (game.num_classes(), game.num_states(), game.num_actions());
    if mu.num_classes() != n || mu.num_states() != nx {
        return Err(Error::Dimension(format!(
            "population state {}x{} vs game {n}x{nx}",
            mu.num_classes(),
            mu.num_states()
        )));
    }
    if gamma.num_classes() != n || gamma.num_states() != nx || gamma.num_actions() != na {
        return Err(Error::Dimension(format!(
            "prescription {}x{}x{} vs game {n}x{nx}x{na}",
            gamma.num_classes(),
            gamma.num_states(),
            gamma.num_actions()
        )));
    }
    Ok(())
}

/// `mu'_i(y) = sum_x sum_a mu_i(x) gamma_i(a|x) Q(y | x, a, mu; g^i)`, with the
/// kernel evaluated at the pre-update state.
pub fn propagate(game: &Game, mu: &PopulationState, gamma: &Prescription) -> Result<PopulationState> {
    check_dims(game, mu, gamma)?;
    let stage = game.stage(mu)?;
    propagate_with(&stage, mu, gamma)
}

/// [`propagate`] with precomputed stage data.
pub fn propagate_with(
    stage: &StageData,
    mu: &PopulationState,
    gamma: &Prescription,
) -> Result<PopulationState> {
    let n = mu.num_classes();
    let one = |i: usize| -> Result<Vec<f64>> {
        let d = class_update(stage, mu.class(i), gamma, i);
        let mass: f64 = d.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::MassLoss { class: i, mass });
        }
        Ok(d.into_iter().map(|v| v.max(0.0) / mass).collect())
    };
    let dists: Vec<Vec<f64>> = if n >= 16 {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    Ok(PopulationState { dists, t: mu.t + 1 })
}

pub(crate) fn class_update(stage: &StageData, mu_i: &[f64], gamma: &Prescription, i: usize) -> Vec<f64> {
    let nx = mu_i.len();
    let na = gamma.num_actions();
    let mut out = vec![0.0; nx];
    for (x, &m) in mu_i.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for a in 0..na {
            let w = m * gamma.prob(i, x, a);
            if w == 0.0 {
                continue;
            }
            for (o, q) in out.iter_mut().zip(stage.kernel_row(i, x, a)) {
                *o += w * q;
            }
        }
    }
    out
}

/// `mu_0, mu_1, ..., mu_T` with `mu_{t+1} = propagate(mu_t, policy(t, mu_t))`.
pub fn trajectory(
    game: &Game,
    mu0: &PopulationState,
    policy: &dyn Policy,
    horizon: usize,
) -> Result<Vec<PopulationState>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut mu = mu0.clone().at_time(0);
    for t in 0..horizon {
        let gamma = policy.prescription(game, t, &mu)?;
        let next = propagate(game, &mu, &gamma).map_err(|e| match e {
            Error::MassLoss { .. } | Error::Distribution(_) => Error::OutsideDomain {
                t: t + 1,
                reason: e.to_string(),
            },
            e => e,
        })?;
        out.push(std::mem::replace(&mut mu, next));
    }
    out.push(mu);
    Ok(out)
}

/// CSV with columns `t,class,state,probability`.
pub fn write_trajectory_csv<W: Write>(mut w: W, game: &Game, traj: &[PopulationState]) -> Result<()> {
    writeln!(w, "t,class,state,probability")?;
    let states = game.model().states();
    for (t, mu) in traj.iter().enumerate() {
        for i in 0..mu.num_classes() {
            for (x, p) in mu.class(i).iter().enumerate() {
                writeln!(w, "{t},{i},{},{p}", states[x])?;
            }
        }
    }
    Ok(())
}
