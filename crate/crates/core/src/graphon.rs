//! Graphon kernels on `[0,1]^2` and their discretization into agent classes.
//!
//! The continuum of players is approximated by `M` equal-weight classes with
//! midpoint representatives `alpha_i = (i + 0.5) / M`. The midpoint rule is
//! exact for the piecewise-constant families (complete, Erdos-Renyi, block
//! models whose cut falls on a class boundary) and second order otherwise.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub const DEFAULT_GRID_SIZE: usize = 64;

/// Tolerance used when comparing coupling rows for statistical equivalence.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphonKind {
    Complete,
    ErdosRenyi {
        p: f64,
    },
    StochasticBlock {
        p_in: f64,
        q_out: f64,
        cut: f64,
    },
    /// `g(a, b) = exp(-decay * x / (0.5 - x))` with `x` the circular distance
    /// `min(|b - a|, 1 - |b - a|)`, and `g = 0` at `x = 0.5`.
    RandomGeometric {
        decay: f64,
    },
    /// Piecewise-constant kernel given on the agent-class grid.
    Custom {
        table: Vec<Vec<f64>>,
    },
}

/// A bounded symmetric kernel together with the class grid it is used on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graphon {
    kind: GraphonKind,
    grid_size: usize,
}

impl Graphon {
    pub fn new(kind: GraphonKind, grid_size: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::Graphon("grid_size must be positive".into()));
        }
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Graphon(format!("{name} = {v} is not in [0,1]")));
            }
            Ok(())
        };
        match &kind {
            GraphonKind::Complete => {}
            GraphonKind::ErdosRenyi { p } => unit("p", *p)?,
            GraphonKind::StochasticBlock { p_in, q_out, cut } => {
                unit("p_in", *p_in)?;
                unit("q_out", *q_out)?;
                unit("cut", *cut)?;
            }
            GraphonKind::RandomGeometric { decay } => {
                if !(decay.is_finite() && *decay >= 0.0) {
                    return Err(Error::Graphon(format!("decay = {decay} must be finite and >= 0")));
                }
            }
            GraphonKind::Custom { table } => {
                if table.len() != grid_size || table.iter().any(|r| r.len() != grid_size) {
                    return Err(Error::Graphon(format!(
                        "custom table must be {grid_size}x{grid_size}"
                    )));
                }
                for (i, row) in table.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::Graphon(format!("entry ({i},{j}) = {v} not in [0,1]")));
                        }
                        if (v - table[j][i]).abs() > SYMMETRY_TOL {
                            return Err(Error::Graphon(format!(
                                "custom table is not symmetric at ({i},{j})"
                            )));
                        }
                    }
                }
            }
        }
        let kind = match kind {
            // symmetrize exactly
            GraphonKind::Custom { table } => {
                let m = table.len();
                let mut sym = table.clone();
                for i in 0..m {
                    for j in 0..i {
                        let v = 0.5 * (table[i][j] + table[j][i]);
                        sym[i][j] = v;
                        sym[j][i] = v;
                    }
                }
                GraphonKind::Custom { table: sym }
            }
            k => k,
        };
        Ok(Graphon { kind, grid_size })
    }

    pub fn complete(grid_size: usize) -> Result<Self> {
        Self::new(GraphonKind::Complete, grid_size)
    }

    pub fn erdos_renyi(p: f64, grid_size: usize) -> Result<Self> {
        Self::new(GraphonKind::ErdosRenyi { p }, grid_size)
    }

    pub fn stochastic_block(p_in: f64, q_out: f64, cut: f64, grid_size: usize) -> Result<Self> {
        Self::new(GraphonKind::StochasticBlock { p_in, q_out, cut }, grid_size)
    }

    pub fn random_geometric(decay: f64, grid_size: usize) -> Result<Self> {
        Self::new(GraphonKind::RandomGeometric { decay }, grid_size)
    }

    /// Load a custom kernel from a headerless CSV of `M` rows and `M` columns.
    pub fn custom_from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let mut table = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Graphon(format!("bad kernel entry {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(row);
        }
        let m = table.len();
        Self::new(GraphonKind::Custom { table }, m)
    }

    pub fn kind(&self) -> &GraphonKind {
        &self.kind
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Same kernel, different number of agent classes. Custom kernels are tied
    /// to their table size and cannot be regridded.
    pub fn with_grid_size(&self, grid_size: usize) -> Result<Self> {
        if let GraphonKind::Custom { .. } = self.kind {
            if grid_size != self.grid_size {
                return Err(Error::Graphon("custom kernels cannot be regridded".into()));
            }
        }
        Self::new(self.kind.clone(), grid_size)
    }

    /// Short label without commas, suitable for CSV cells.
    pub fn label(&self) -> String {
        match &self.kind {
            GraphonKind::Complete => "complete".into(),
            GraphonKind::ErdosRenyi { p } => format!("erdos_renyi_{p}"),
            GraphonKind::StochasticBlock { p_in, q_out, cut } => {
                format!("sbm_{p_in}_{q_out}_{cut}")
            }
            GraphonKind::RandomGeometric { decay } => format!("geometric_{decay}"),
            GraphonKind::Custom { .. } => format!("custom_{}", self.grid_size),
        }
    }

    pub fn eval(&self, alpha: f64, beta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::Domain { alpha, beta });
        }
        Ok(self.eval_unchecked(alpha, beta))
    }

    pub(crate) fn eval_unchecked(&self, alpha: f64, beta: f64) -> f64 {
        match &self.kind {
            GraphonKind::Complete => 1.0,
            GraphonKind::ErdosRenyi { p } => *p,
            GraphonKind::StochasticBlock { p_in, q_out, cut } => {
                let same = (alpha <= *cut && beta <= *cut) || (alpha >= *cut && beta >= *cut);
                if same {
                    *p_in
                } else {
                    *q_out
                }
            }
            GraphonKind::RandomGeometric { decay } => {
                let d = (beta - alpha).abs();
                geometric_profile(*decay, d.min(1.0 - d))
            }
            GraphonKind::Custom { table } => {
                let m = table.len();
                let cell = |v: f64| ((v * m as f64).floor() as usize).min(m - 1);
                table[cell(alpha)][cell(beta)]
            }
        }
    }
}

/// Non-increasing profile `[0, 0.5] -> [0, 1]` of the random geometric graphon.
pub fn geometric_profile(decay: f64, x: f64) -> f64 {
    if x >= 0.5 {
        return 0.0;
    }
    (-decay * x / (0.5 - x)).exp()
}

impl fmt::Display for Graphon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (M={})", self.label(), self.grid_size)
    }
}

/// Midpoint discretization of the player continuum.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentClassGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AgentClassGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Graphon("agent class grid needs M >= 1".into()));
        }
        let w = 1.0 / m as f64;
        Ok(AgentClassGrid {
            points: (0..m).map(|i| (i as f64 + 0.5) * w).collect(),
            weights: vec![w; m],
        })
    }

    pub fn for_graphon(g: &Graphon) -> Self {
        Self::new(g.grid_size()).expect("graphon grid size is positive")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Class containing position `alpha`.
    pub fn class_of(&self, alpha: f64) -> usize {
        let m = self.len();
        ((alpha.clamp(0.0, 1.0) * m as f64).floor() as usize).min(m - 1)
    }
}

/// Quadrature weights for the neighbourhood integral: entry `(i, j)` is
/// `g(alpha_i, alpha_j) * w_j`.
pub fn class_coupling(g: &Graphon, grid: &AgentClassGrid) -> Result<Vec<Vec<f64>>> {
    if g.grid_size() != grid.len() {
        return Err(Error::Dimension(format!(
            "graphon grid_size {} but class grid has {} classes",
            g.grid_size(),
            grid.len()
        )));
    }
    let pts = grid.points();
    let w = grid.weights();
    Ok(pts
        .iter()
        .map(|&a| {
            pts.iter()
                .zip(w)
                .map(|(&b, &wj)| g.eval_unchecked(a, b) * wj)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equivalence {
    /// Every class belongs to a single group.
    pub single: bool,
    /// Coarsest partition of the classes, ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    /// Outcome of the propagation falsifier (custom kernels only).
    pub propagation_check: Option<bool>,
}

impl Equivalence {
    fn from_groups(groups: Vec<Vec<usize>>, propagation_check: Option<bool>) -> Self {
        Equivalence {
            single: groups.len() == 1,
            groups,
            propagation_check,
        }
    }
}

/// Partition the agent classes into groups whose population-update maps
/// coincide.
///
/// Two classes are merged when, for every group of the partition, their
/// aggregated coupling into that group agrees (a weighted equitable
/// partition of the coupling matrix). Under such a partition every class in a
/// group sees the same neighbourhood as long as the ensemble is constant on
/// groups, which is preserved by propagation. Without interaction (`f = 0`)
/// every class is equivalent. Custom kernels are additionally run through a
/// ten-step propagation falsifier.
pub fn statistically_equivalent(
    g: &Graphon,
    grid: &AgentClassGrid,
    model: &ModelSpec,
) -> Result<Equivalence> {
    let m = grid.len();
    if !model.has_interaction() {
        return Ok(Equivalence::from_groups(vec![(0..m).collect()], None));
    }
    let coupling = class_coupling(g, grid)?;
    let groups = equitable_partition(&coupling, EQUIVALENCE_TOL);
    if let GraphonKind::Custom { .. } = g.kind() {
        let ok = propagation_falsifier(&coupling, &groups, model, 10, 0x5eed)?;
        if !ok {
            let singletons = (0..m).map(|i| vec![i]).collect();
            return Ok(Equivalence::from_groups(singletons, Some(false)));
        }
        return Ok(Equivalence::from_groups(groups, Some(true)));
    }
    Ok(Equivalence::from_groups(groups, None))
}

/// Coarsest partition such that within each group every row has the same
/// mass into every group (to `tol`).
pub fn equitable_partition(coupling: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let m = coupling.len();
    let mut label = vec![0usize; m];
    let mut count = 1;
    loop {
        let signatures: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut s = vec![0.0; count];
                for (j, &c) in coupling[i].iter().enumerate() {
                    s[label[j]] += c;
                }
                s
            })
            .collect();
        // split each current group by signature, keeping first-seen order
        let mut reps: Vec<(usize, usize)> = Vec::new(); // (old label, representative class)
        let mut new_label = vec![0usize; m];
        for i in 0..m {
            let found = reps.iter().position(|&(l, r)| {
                l == label[i]
                    && signatures[r]
                        .iter()
                        .zip(&signatures[i])
                        .all(|(a, b)| (a - b).abs() <= tol)
            });
            new_label[i] = match found {
                Some(k) => k,
                None => {
                    reps.push((label[i], i));
                    reps.len() - 1
                }
            };
        }
        let new_count = reps.len();
        label = new_label;
        if new_count == count {
            break;
        }
        count = new_count;
    }
    let mut groups = vec![Vec::new(); count];
    for (i, &l) in label.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Propagate random group-constant ensembles under random group-constant
/// prescriptions and check that the classes of each group stay identical.
fn propagation_falsifier(
    coupling: &[Vec<f64>],
    groups: &[Vec<usize>],
    model: &ModelSpec,
    steps: usize,
    seed: u64,
) -> Result<bool> {
    let m = coupling.len();
    let nx = model.num_states();
    let na = model.num_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_dist = |n: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    };
    let mut group_of = vec![0; m];
    for (k, grp) in groups.iter().enumerate() {
        for &i in grp {
            group_of[i] = k;
        }
    }
    let group_mu: Vec<Vec<f64>> = groups.iter().map(|_| random_dist(nx)).collect();
    let group_gamma: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|_| (0..nx).map(|_| random_dist(na)).collect())
        .collect();
    let mut mu: Vec<Vec<f64>> = (0..m).map(|i| group_mu[group_of[i]].clone()).collect();
    let mut row = vec![0.0; nx];
    for _ in 0..steps {
        let mut next = vec![vec![0.0; nx]; m];
        for i in 0..m {
            let mut nb = vec![0.0; nx];
            for (j, &c) in coupling[i].iter().enumerate() {
                for y in 0..nx {
                    nb[y] += c * mu[j][y];
                }
            }
            for x in 0..nx {
                for a in 0..na {
                    let drive = model.drive(x, a, &nb);
                    model.transition(x, a, drive, &mut row)?;
                    let w = mu[i][x] * group_gamma[group_of[i]][x][a];
                    for y in 0..nx {
                        next[i][y] += w * row[y];
                    }
                }
            }
        }
        mu = next;
        for grp in groups {
            let first = &mu[grp[0]];
            for &i in &grp[1..] {
                if mu[i].iter().zip(first).any(|(a, b)| (a - b).abs() > EQUIVALENCE_TOL) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}
