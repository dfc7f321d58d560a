//! Malware-spread game on a network of servers.
//!
//! Two states (`healthy = 0`, `infected = 1`) and two actions
//! (`no_repair = 0`, `repair = 1`). Repairing sends the node to healthy; a
//! healthy node that does not repair becomes infected with probability
//! `sum_y q * 1{y = infected} * neighbourhood(y)`, an infected node that does
//! not repair stays infected. The stage reward is `-k x - lambda a`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphon::Graphon;
use crate::model::{Horizon, KernelRule, ModelBuilder, ModelSpec, RewardRule};

pub const HEALTHY: usize = 0;
pub const INFECTED: usize = 1;
pub const NO_REPAIR: usize = 0;
pub const REPAIR: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MalwareParams {
    /// Infection probability under full exposure.
    pub q: f64,
    /// Per-period penalty of being infected.
    pub k: f64,
    /// Cost of a repair.
    pub lambda: f64,
}

impl Default for MalwareParams {
    fn default() -> Self {
        MalwareParams {
            q: 0.9,
            k: 0.3,
            lambda: 0.2,
        }
    }
}

impl MalwareParams {
    /// Ten-period game with discount 0.9.
    pub fn model(&self) -> ModelSpec {
        self.build(Horizon::Finite(10), 0.9)
            .expect("default malware parameters are valid")
    }

    pub fn build(&self, horizon: Horizon, discount: f64) -> Result<ModelSpec> {
        let MalwareParams { q, k, lambda } = *self;
        let f = vec![vec![vec![0.0, q]; 2]; 2];
        let stay = vec![vec![HEALTHY, HEALTHY], vec![INFECTED, HEALTHY]];
        let jump = vec![vec![INFECTED, HEALTHY], vec![INFECTED, HEALTHY]];
        let reward = (0..2)
            .map(|x| (0..2).map(|a| -k * x as f64 - lambda * a as f64).collect())
            .collect();
        ModelBuilder::new(["healthy", "infected"], ["no_repair", "repair"])
            .interaction(f)
            .kernel(KernelRule::BernoulliJump { stay, jump })
            .reward(RewardRule::Table(reward))
            .discount(discount)
            .horizon(horizon)
            .fingerprint(format!(
                "malware(q={q},k={k},lambda={lambda});horizon={horizon};discount={discount}"
            ))
            .build()
    }
}

/// The four interaction structures of the numerical study: complete,
/// Erdos-Renyi(0.8), symmetric block model (0.9, 0.4) and random geometric.
pub fn study_graphons(grid_size: usize) -> Vec<Graphon> {
    vec![
        Graphon::complete(grid_size).unwrap(),
        Graphon::erdos_renyi(0.8, grid_size).unwrap(),
        Graphon::stochastic_block(0.9, 0.4, 0.5, grid_size).unwrap(),
        Graphon::random_geometric(1.0, grid_size).unwrap(),
    ]
}
