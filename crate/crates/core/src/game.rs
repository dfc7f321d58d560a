//! A model coupled to a graphon on a class grid.
//!
//! Classes that are statistically equivalent are merged into groups; all
//! population states, prescriptions and value tables are indexed by group.
//! In full mode every grid class is its own group.

use crate::dynamics::PopulationState;
use crate::error::{Error, Result};
use crate::graphon::{class_coupling, statistically_equivalent, AgentClassGrid, Equivalence, Graphon};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Merge statistically equivalent classes.
    #[default]
    Auto,
    /// Keep one group per grid class.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGroup {
    pub members: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Game {
    model: ModelSpec,
    graphon: Graphon,
    grid: AgentClassGrid,
    equivalence: Equivalence,
    groups: Vec<ClassGroup>,
    group_of: Vec<usize>,
    /// Group-to-group coupling mass, `coupling[p][q] = sum_{j in q} c(rep(p), j)`.
    coupling: Vec<Vec<f64>>,
}

/// `f[x, a, mu^G; g^alpha]` after quadrature, indexed `[class][x][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDrive {
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Rewards and transition rows at a fixed population state. These do not
/// depend on the prescription, so they are computed once per state.
#[derive(Debug, Clone)]
pub struct StageData {
    classes: usize,
    nx: usize,
    na: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
}

impl StageData {
    #[inline]
    pub fn kernel_row(&self, class: usize, x: usize, a: usize) -> &[f64] {
        let start = ((class * self.nx + x) * self.na + a) * self.nx;
        &self.kernel[start..start + self.nx]
    }

    #[inline]
    pub fn reward(&self, class: usize, x: usize, a: usize) -> f64 {
        self.reward[(class * self.nx + x) * self.na + a]
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }
}

impl Game {
    pub fn new(model: ModelSpec, graphon: Graphon, reduction: Reduction) -> Result<Game> {
        let grid = AgentClassGrid::for_graphon(&graphon);
        let m = grid.len();
        let class_c = class_coupling(&graphon, &grid)?;
        let equivalence = match reduction {
            Reduction::Auto => statistically_equivalent(&graphon, &grid, &model)?,
            Reduction::Full => {
                let eq = statistically_equivalent(&graphon, &grid, &model)?;
                Equivalence {
                    single: m == 1,
                    groups: (0..m).map(|i| vec![i]).collect(),
                    propagation_check: eq.propagation_check,
                }
            }
        };
        let mut group_of = vec![0; m];
        for (k, g) in equivalence.groups.iter().enumerate() {
            for &i in g {
                group_of[i] = k;
            }
        }
        let groups: Vec<ClassGroup> = equivalence
            .groups
            .iter()
            .map(|g| ClassGroup {
                members: g.clone(),
                weight: g.iter().map(|&i| grid.weights()[i]).sum(),
            })
            .collect();
        let coupling = equivalence
            .groups
            .iter()
            .map(|p| {
                let rep = p[0];
                let mut row = vec![0.0; groups.len()];
                for (j, &c) in class_c[rep].iter().enumerate() {
                    row[group_of[j]] += c;
                }
                row
            })
            .collect();
        Ok(Game {
            model,
            graphon,
            grid,
            equivalence,
            groups,
            group_of,
            coupling,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn graphon(&self) -> &Graphon {
        &self.graphon
    }

    pub fn grid(&self) -> &AgentClassGrid {
        &self.grid
    }

    pub fn equivalence(&self) -> &Equivalence {
        &self.equivalence
    }

    pub fn groups(&self) -> &[ClassGroup] {
        &self.groups
    }

    pub fn coupling(&self) -> &[Vec<f64>] {
        &self.coupling
    }

    /// Number of groups (one when fully reduced).
    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.model.num_actions()
    }

    /// Group of the grid class containing position `alpha`.
    pub fn class_at(&self, alpha: f64) -> usize {
        self.group_of[self.grid.class_of(alpha)]
    }

    pub fn group_of_grid_class(&self, i: usize) -> usize {
        self.group_of[i]
    }

    fn check(&self, mu: &PopulationState) -> Result<()> {
        if mu.num_classes() != self.num_classes() || mu.num_states() != self.num_states() {
            return Err(Error::Dimension(format!(
                "population state is {}x{} but the game has {} classes and {} states",
                mu.num_classes(),
                mu.num_states(),
                self.num_classes(),
                self.num_states()
            )));
        }
        Ok(())
    }

    /// Graphon-weighted state mass seen by `class`:
    /// `sum_j coupling(class, j) * mu_j(y)`.
    pub fn neighborhood(&self, mu: &PopulationState, class: usize) -> Result<Vec<f64>> {
        self.check(mu)?;
        Ok(self.neighborhood_unchecked(mu, class))
    }

    fn neighborhood_unchecked(&self, mu: &PopulationState, class: usize) -> Vec<f64> {
        let mut nb = vec![0.0; self.num_states()];
        for (j, &c) in self.coupling[class].iter().enumerate() {
            for (y, &m) in mu.class(j).iter().enumerate() {
                nb[y] += c * m;
            }
        }
        nb
    }

    pub fn aggregate(&self, mu: &PopulationState, class: usize, x: usize, a: usize) -> Result<f64> {
        let nb = self.neighborhood(mu, class)?;
        Ok(self.model.drive(x, a, &nb))
    }

    pub fn aggregate_drive(&self, mu: &PopulationState) -> Result<AggregateDrive> {
        self.check(mu)?;
        let (nx, na) = (self.num_states(), self.num_actions());
        let values = (0..self.num_classes())
            .map(|i| {
                let nb = self.neighborhood_unchecked(mu, i);
                (0..nx)
                    .map(|x| (0..na).map(|a| self.model.drive(x, a, &nb)).collect())
                    .collect()
            })
            .collect();
        Ok(AggregateDrive { values })
    }

    /// `Q(. | x, a, mu^G; g^alpha)` for an agent of `class`.
    pub fn kernel(&self, mu: &PopulationState, class: usize, x: usize, a: usize) -> Result<Vec<f64>> {
        let d = self.aggregate(mu, class, x, a)?;
        let mut row = vec![0.0; self.num_states()];
        self.model.transition(x, a, d, &mut row)?;
        Ok(row)
    }

    pub fn reward(&self, mu: &PopulationState, class: usize, x: usize, a: usize) -> Result<f64> {
        let d = self.aggregate(mu, class, x, a)?;
        Ok(self.model.reward(x, a, d))
    }

    pub fn stage(&self, mu: &PopulationState) -> Result<StageData> {
        self.check(mu)?;
        let (n, nx, na) = (self.num_classes(), self.num_states(), self.num_actions());
        let mut kernel = vec![0.0; n * nx * na * nx];
        let mut reward = vec![0.0; n * nx * na];
        for i in 0..n {
            let nb = self.neighborhood_unchecked(mu, i);
            for x in 0..nx {
                for a in 0..na {
                    let d = self.model.drive(x, a, &nb);
                    let k = (i * nx + x) * na + a;
                    self.model
                        .transition(x, a, d, &mut kernel[k * nx..(k + 1) * nx])?;
                    reward[k] = self.model.reward(x, a, d);
                }
            }
        }
        Ok(StageData {
            classes: n,
            nx,
            na,
            kernel,
            reward,
        })
    }
}
