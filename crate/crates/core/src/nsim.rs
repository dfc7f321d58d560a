//! Finite-population simulation on graphs sampled from a graphon.
//!
//! Vertices are placed in `[0, 1]` and joined independently with probability
//! `g(alpha_i, alpha_j)`. Each agent acts on the prescription generated from
//! the empirical population state and interacts through the normalized
//! neighbour sum `(1/N) sum_j adj(i, j) f(x_i, a_i, x_j)`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{Policy, PopulationState, Prescription};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::graphon::Graphon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Positions drawn uniformly at random.
    #[default]
    Uniform,
    /// Deterministic midpoints `(i + 1/2) / N`.
    Grid,
}

/// Undirected simple graph on `N` positioned vertices, stored as bitset rows.
#[derive(Debug, Clone)]
pub struct SampledNetwork {
    n: usize,
    positions: Vec<f64>,
    words: usize,
    adj: Vec<u64>,
    seed: u64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SampledNetwork {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.adj[i * self.words..(i + 1) * self.words]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.row(i)[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn num_edges(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).sum::<usize>() / 2
    }

    /// Edges over vertex pairs.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.num_edges() as f64 / (self.n * (self.n - 1) / 2) as f64
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i).iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + b)
            })
        })
    }

    /// `sum_j adj(i, j) 1{j in set}` for a bitset `set`.
    fn count_in(&self, i: usize, set: &[u64]) -> usize {
        self.row(i)
            .iter()
            .zip(set)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Sample a W-random graph with `n` vertices. Pairs with `g = 0` or `g = 1`
/// consume no randomness.
pub fn sample_network(g: &Graphon, n: usize, seed: u64, placement: Placement) -> Result<SampledNetwork> {
    if n == 0 {
        return Err(Error::Dimension("network needs at least one vertex".into()));
    }
    let positions: Vec<f64> = match placement {
        Placement::Grid => (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
        Placement::Uniform => {
            let mut rng = rng_for(seed, u64::MAX);
            (0..n).map(|_| rng.gen::<f64>()).collect()
        }
    };
    let words = n.div_ceil(64);
    let upper: Vec<Vec<u64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut row = vec![0u64; words];
            for j in i + 1..n {
                let p = g.eval_unchecked(positions[i], positions[j]);
                let edge = if p >= 1.0 {
                    true
                } else if p <= 0.0 {
                    false
                } else {
                    rng.gen::<f64>() < p
                };
                if edge {
                    row[j / 64] |= 1 << (j % 64);
                }
            }
            row
        })
        .collect();
    let mut adj = vec![0u64; n * words];
    for (i, row) in upper.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let j = k * 64 + w.trailing_zeros() as usize;
                w &= w - 1;
                adj[i * words + j / 64] |= 1 << (j % 64);
                adj[j * words + i / 64] |= 1 << (i % 64);
            }
        }
    }
    Ok(SampledNetwork {
        n,
        positions,
        words,
        adj,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialAssignment {
    /// Per-class counts rounded from `mu_0` (largest remainder), randomly
    /// assigned within the class.
    #[default]
    Exact,
    /// Each agent's state drawn independently from its class distribution.
    Sampled,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    /// Group of each agent.
    pub classes: Vec<usize>,
    /// `states[t][agent]` for `t = 0..=T`.
    pub states: Vec<Vec<usize>>,
    /// `actions[t][agent]` for `t = 0..T`.
    pub actions: Vec<Vec<usize>>,
    /// Empirical population state per time.
    pub empirical: Vec<PopulationState>,
}

fn sample_index(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn empirical_state(game: &Game, classes: &[usize], states: &[usize]) -> Result<PopulationState> {
    let (n, nx) = (game.num_classes(), game.num_states());
    let mut counts = vec![vec![0.0; nx]; n];
    for (&c, &x) in classes.iter().zip(states) {
        counts[c][x] += 1.0;
    }
    let dists = counts
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total == 0.0 {
                vec![1.0 / nx as f64; nx]
            } else {
                row.into_iter().map(|c| c / total).collect()
            }
        })
        .collect();
    PopulationState::new(dists)
}

fn initial_states(
    mu0: &PopulationState,
    classes: &[usize],
    mode: InitialAssignment,
    seed: u64,
) -> Vec<usize> {
    let mut rng = rng_for(seed, u64::MAX - 1);
    match mode {
        InitialAssignment::Sampled => classes
            .iter()
            .map(|&c| sample_index(rng.gen::<f64>(), mu0.class(c)))
            .collect(),
        InitialAssignment::Exact => {
            let mut states = vec![0; classes.len()];
            for c in 0..mu0.num_classes() {
                let members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
                let m = members.len();
                let dist = mu0.class(c);
                let raw: Vec<f64> = dist.iter().map(|p| p * m as f64).collect();
                let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
                let mut order: Vec<usize> = (0..dist.len()).collect();
                order.sort_by(|&a, &b| {
                    (raw[b] - raw[b].floor())
                        .partial_cmp(&(raw[a] - raw[a].floor()))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let mut missing = m - counts.iter().sum::<usize>();
                for &x in order.iter().cycle() {
                    if missing == 0 {
                        break;
                    }
                    counts[x] += 1;
                    missing -= 1;
                }
                let mut labels: Vec<usize> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(x, &k)| std::iter::repeat_n(x, k))
                    .collect();
                labels.shuffle(&mut rng);
                for (&i, x) in members.iter().zip(labels) {
                    states[i] = x;
                }
            }
            states
        }
    }
}

/// Simulate `horizon` periods of the finite population on `net`.
pub fn simulate(
    game: &Game,
    net: &SampledNetwork,
    policy: &dyn Policy,
    mu0: &PopulationState,
    assignment: InitialAssignment,
    horizon: usize,
    seed: u64,
) -> Result<SimulationOutput> {
    let model = game.model();
    let (nx, na) = (game.num_states(), game.num_actions());
    if mu0.num_classes() != game.num_classes() || mu0.num_states() != nx {
        return Err(Error::Dimension("initial state does not match the game".into()));
    }
    let n = net.len();
    let classes: Vec<usize> = net.positions().iter().map(|&a| game.class_at(a)).collect();
    let mut states = vec![initial_states(mu0, &classes, assignment, seed)];
    let mut actions = Vec::with_capacity(horizon);
    let mut empirical = vec![empirical_state(game, &classes, &states[0])?];
    let inv_n = 1.0 / n as f64;
    for t in 0..horizon {
        let cur = &states[t];
        let gamma: Prescription = policy.prescription(game, t, &empirical[t])?;
        let mut sets = vec![vec![0u64; net.words]; nx];
        for (i, &x) in cur.iter().enumerate() {
            sets[x][i / 64] |= 1 << (i % 64);
        }
        let step: Vec<(usize, usize)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(usize, usize)> {
                let mut rng = rng_for(seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15), i as u64);
                let x = cur[i];
                let a = sample_index(rng.gen::<f64>(), gamma.row(classes[i], x));
                let nb: Vec<f64> = sets.iter().map(|s| net.count_in(i, s) as f64 * inv_n).collect();
                let d = model.drive(x, a, &nb);
                let mut row = vec![0.0; nx];
                model.transition(x, a, d, &mut row)?;
                Ok((a, sample_index(rng.gen::<f64>(), &row)))
            })
            .collect::<Result<_>>()?;
        let (acts, next): (Vec<usize>, Vec<usize>) = step.into_iter().unzip();
        debug_assert!(acts.iter().all(|&a| a < na));
        empirical.push(empirical_state(game, &classes, &next)?.at_time(t + 1));
        actions.push(acts);
        states.push(next);
    }
    Ok(SimulationOutput {
        classes,
        states,
        actions,
        empirical,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldGap {
    pub per_t: Vec<f64>,
    pub max: f64,
}

/// `|| mu_hat_t - mu_t ||_inf` per time.
pub fn mf_gap(empirical: &[PopulationState], mean_field: &[PopulationState]) -> Result<MeanFieldGap> {
    if empirical.len() != mean_field.len() {
        return Err(Error::Dimension(format!(
            "simulation has {} times, mean-field path {}",
            empirical.len(),
            mean_field.len()
        )));
    }
    let mut per_t = Vec::with_capacity(empirical.len());
    for (a, b) in empirical.iter().zip(mean_field) {
        if a.num_classes() != b.num_classes() || a.num_states() != b.num_states() {
            return Err(Error::Dimension("population states differ in shape".into()));
        }
        per_t.push(a.distance(b));
    }
    let max = per_t.iter().copied().fold(0.0, f64::max);
    Ok(MeanFieldGap { per_t, max })
}

/// Per-agent CSV: `t,agent,state,action` (no action at the last time).
pub fn write_agents_csv<W: Write>(mut w: W, game: &Game, out: &SimulationOutput) -> Result<()> {
    let states = game.model().states();
    let actions = game.model().actions();
    writeln!(w, "t,agent,state,action")?;
    for (t, row) in out.states.iter().enumerate() {
        for (i, &x) in row.iter().enumerate() {
            let a = out.actions.get(t).map_or("", |acts| actions[acts[i]].as_str());
            writeln!(w, "{t},{i},{},{a}", states[x])?;
        }
    }
    Ok(())
}

/// Aggregate CSV: `t,state,fraction` over all agents.
pub fn write_aggregate_csv<W: Write>(mut w: W, game: &Game, out: &SimulationOutput) -> Result<()> {
    let states = game.model().states();
    writeln!(w, "t,state,fraction")?;
    for (t, row) in out.states.iter().enumerate() {
        let mut counts = vec![0usize; states.len()];
        for &x in row {
            counts[x] += 1;
        }
        for (x, c) in counts.iter().enumerate() {
            writeln!(w, "{t},{},{}", states[x], *c as f64 / row.len() as f64)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ConstantPolicy;
    use crate::game::Reduction;
    use crate::malware::{MalwareParams, INFECTED, NO_REPAIR, REPAIR};

    fn game(g: Graphon) -> Game {
        Game::new(MalwareParams::default().model(), g, Reduction::Auto).unwrap()
    }

    #[test]
    fn complete_graph_has_all_edges() {
        let net = sample_network(&Graphon::complete(8).unwrap(), 130, 1, Placement::Uniform).unwrap();
        assert_eq!(net.num_edges(), 130 * 129 / 2);
        assert!(!net.has_edge(5, 5));
        assert_eq!(net.neighbors(0).count(), 129);
    }

    #[test]
    fn empty_graphon_has_no_edges() {
        let net = sample_network(&Graphon::erdos_renyi(0.0, 8).unwrap(), 200, 1, Placement::Grid).unwrap();
        assert_eq!(net.num_edges(), 0);
    }

    #[test]
    fn symmetric_and_reproducible() {
        let g = Graphon::stochastic_block(0.7, 0.2, 0.5, 8).unwrap();
        let a = sample_network(&g, 150, 42, Placement::Uniform).unwrap();
        let b = sample_network(&g, 150, 42, Placement::Uniform).unwrap();
        assert_eq!(a.adj, b.adj);
        for i in 0..150 {
            assert!(!a.has_edge(i, i));
            for j in 0..150 {
                assert_eq!(a.has_edge(i, j), a.has_edge(j, i));
            }
        }
    }

    #[test]
    fn always_repair_heals_everyone() {
        let g = game(Graphon::complete(8).unwrap());
        let net = sample_network(g.graphon(), 300, 3, Placement::Uniform).unwrap();
        let mu0 = PopulationState::new(vec![vec![0.4, 0.6]]).unwrap();
        let policy = ConstantPolicy(Prescription::pure(1, 2, 2, REPAIR));
        let out = simulate(&g, &net, &policy, &mu0, InitialAssignment::Exact, 3, 9).unwrap();
        assert_eq!(out.states[0].iter().filter(|&&x| x == INFECTED).count(), 180);
        for t in 1..=3 {
            assert!(out.states[t].iter().all(|&x| x != INFECTED));
        }
    }

    #[test]
    fn mf_gap_of_identical_paths_is_zero() {
        let mu = vec![PopulationState::new(vec![vec![0.3, 0.7]]).unwrap(); 4];
        let gap = mf_gap(&mu, &mu).unwrap();
        assert_eq!(gap.max, 0.0);
        assert!(mf_gap(&mu, &mu[..2]).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = game(Graphon::erdos_renyi(0.6, 8).unwrap());
        let net = sample_network(g.graphon(), 200, 5, Placement::Uniform).unwrap();
        let mu0 = PopulationState::new(vec![vec![0.5, 0.5]]).unwrap();
        let policy = ConstantPolicy(Prescription::pure(1, 2, 2, NO_REPAIR));
        let a = simulate(&g, &net, &policy, &mu0, InitialAssignment::Sampled, 5, 11).unwrap();
        let b = simulate(&g, &net, &policy, &mu0, InitialAssignment::Sampled, 5, 11).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.actions, b.actions);
    }
}
