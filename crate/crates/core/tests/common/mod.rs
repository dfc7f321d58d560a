#![allow(dead_code)]

//! Independent reference implementations used by the integration tests.
//! Nothing here calls the solver's interpolation or stage code.

use std::collections::HashMap;

use gmfe::dynamics::PopulationState;
use gmfe::graphon::Graphon;
use gmfe::malware::MalwareParams;
use gmfe::mfgrid::{MeanFieldGrid, ValueTable, DEFAULT_NODE_BUDGET};
use gmfe::model::{KernelRule, ModelBuilder, ModelSpec, RewardRule};
use gmfe::{Game, Horizon, Reduction};
use rand::Rng;

pub const DELTA: f64 = 0.9;

pub fn malware_game(g: &Graphon, horizon: Horizon) -> Game {
    let model = MalwareParams::default().build(horizon, DELTA).unwrap();
    Game::new(model, g.clone(), Reduction::Auto).unwrap()
}

pub fn infected(m: f64) -> PopulationState {
    PopulationState::new(vec![vec![1.0 - m, m]]).unwrap()
}

pub fn grid_for(game: &Game, resolution: usize) -> MeanFieldGrid {
    MeanFieldGrid::new(game.num_classes(), game.num_states(), resolution, DEFAULT_NODE_BUDGET).unwrap()
}

/// Piecewise-linear interpolation on a single-class simplex lattice with two
/// or three states, located by brute-force search over lattice triangles.
pub struct OracleInterp {
    d: usize,
    states: usize,
    node_of: HashMap<Vec<usize>, usize>,
}

impl OracleInterp {
    pub fn new(grid: &MeanFieldGrid) -> Self {
        assert_eq!(grid.classes(), 1);
        assert!(grid.states() == 2 || grid.states() == 3);
        let d = grid.resolution() - 1;
        let node_of = (0..grid.num_nodes())
            .map(|k| {
                let counts: Vec<usize> = grid
                    .node(k)
                    .class(0)
                    .iter()
                    .map(|p| (p * d as f64).round() as usize)
                    .collect();
                (counts, k)
            })
            .collect();
        OracleInterp {
            d,
            states: grid.states(),
            node_of,
        }
    }

    fn value(&self, table: &ValueTable, counts: Vec<usize>) -> Vec<f64> {
        let node = self.node_of[&counts];
        (0..self.states).map(|x| table.get(node, 0, x)).collect()
    }

    pub fn eval(&self, table: &ValueTable, mu: &[f64]) -> Vec<f64> {
        let d = self.d;
        let df = d as f64;
        let mut out = vec![0.0; self.states];
        if self.states == 2 {
            let m = mu[1] * df;
            let i = (m.floor() as usize).min(d - 1);
            let w = m - i as f64;
            let lo = self.value(table, vec![d - i, i]);
            let hi = self.value(table, vec![d - i - 1, i + 1]);
            for x in 0..2 {
                out[x] = (1.0 - w) * lo[x] + w * hi[x];
            }
            return out;
        }
        let p = (mu[1] * df, mu[2] * df);
        let mut tris: Vec<[(usize, usize); 3]> = Vec::new();
        for i in 0..d {
            for j in 0..d - i {
                tris.push([(i, j), (i + 1, j), (i, j + 1)]);
                if i + j + 2 <= d {
                    tris.push([(i + 1, j), (i, j + 1), (i + 1, j + 1)]);
                }
            }
        }
        for t in tris {
            let (x0, y0) = (t[0].0 as f64, t[0].1 as f64);
            let (ax, ay) = (t[1].0 as f64 - x0, t[1].1 as f64 - y0);
            let (bx, by) = (t[2].0 as f64 - x0, t[2].1 as f64 - y0);
            let det = ax * by - ay * bx;
            let (px, py) = (p.0 - x0, p.1 - y0);
            let s = (px * by - py * bx) / det;
            let r = (ax * py - ay * px) / det;
            let l = [1.0 - s - r, s, r];
            if l.iter().all(|&v| v >= -1e-12) {
                for (k, &(i, j)) in t.iter().enumerate() {
                    let v = self.value(table, vec![d - i - j, i, j]);
                    for x in 0..3 {
                        out[x] += l[k] * v[x];
                    }
                }
                return out;
            }
        }
        panic!("point {mu:?} not covered by the lattice");
    }
}

/// Stage objectives `U[x][a]` of a single-class game at `mu` when the
/// population plays `gamma[x][a]`, computed from the public kernel and reward.
pub fn stage_objective(
    game: &Game,
    interp: &OracleInterp,
    v_next: &ValueTable,
    mu: &PopulationState,
    gamma: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let (nx, na) = (game.num_states(), game.num_actions());
    let delta = game.model().discount();
    let kernel: Vec<Vec<Vec<f64>>> = (0..nx)
        .map(|x| (0..na).map(|a| game.kernel(mu, 0, x, a).unwrap()).collect())
        .collect();
    let mut next = vec![0.0; nx];
    for x in 0..nx {
        for a in 0..na {
            for y in 0..nx {
                next[y] += mu.class(0)[x] * gamma[x][a] * kernel[x][a][y];
            }
        }
    }
    let w = interp.eval(v_next, &next);
    (0..nx)
        .map(|x| {
            (0..na)
                .map(|a| {
                    let cont: f64 = (0..nx).map(|y| kernel[x][a][y] * w[y]).sum();
                    game.reward(mu, 0, x, a).unwrap() + delta * cont
                })
                .collect()
        })
        .collect()
}

pub fn pure_rows(choice: &[usize], na: usize) -> Vec<Vec<f64>> {
    choice
        .iter()
        .map(|&c| (0..na).map(|a| if a == c { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Every pure prescription with its objectives, and whether it is a fixed
/// point with a strict argmax in every state.
pub fn enumerate_pure(
    game: &Game,
    interp: &OracleInterp,
    v_next: &ValueTable,
    mu: &PopulationState,
) -> Vec<(Vec<usize>, Vec<Vec<f64>>, bool)> {
    let (nx, na) = (game.num_states(), game.num_actions());
    let total = na.pow(nx as u32);
    (0..total)
        .map(|mut code| {
            let choice: Vec<usize> = (0..nx)
                .map(|_| {
                    let c = code % na;
                    code /= na;
                    c
                })
                .collect();
            let u = stage_objective(game, interp, v_next, mu, &pure_rows(&choice, na));
            let strict = (0..nx).all(|x| (0..na).all(|a| a == choice[x] || u[x][a] < u[x][choice[x]]));
            (choice, u, strict)
        })
        .collect()
}

fn random_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|p| p / s).collect()
}

/// Random valid model with `nx` states and `na` actions: Bernoulli-jump or
/// affine kernels driven by a nonnegative interaction.
pub fn random_model(rng: &mut impl Rng, nx: usize, na: usize, horizon: Horizon, delta: f64) -> ModelSpec {
    let states: Vec<String> = (0..nx).map(|x| format!("s{x}")).collect();
    let actions: Vec<String> = (0..na).map(|a| format!("a{a}")).collect();
    let f: Vec<Vec<Vec<f64>>> = (0..nx)
        .map(|_| (0..na).map(|_| (0..nx).map(|_| 0.5 * rng.gen::<f64>()).collect()).collect())
        .collect();
    let reward: Vec<Vec<f64>> = (0..nx)
        .map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut b = ModelBuilder::new(states, actions)
        .interaction(f.clone())
        .discount(delta)
        .horizon(horizon);
    if rng.gen_bool(0.5) {
        let stay = (0..nx).map(|_| (0..na).map(|_| rng.gen_range(0..nx)).collect()).collect();
        let jump = (0..nx).map(|_| (0..na).map(|_| rng.gen_range(0..nx)).collect()).collect();
        let f0 = (0..nx).map(|_| (0..na).map(|_| 0.5 * rng.gen::<f64>()).collect()).collect();
        b = b.kernel(KernelRule::BernoulliJump { stay, jump }).local(f0);
    } else {
        let mut base = vec![vec![Vec::new(); na]; nx];
        let mut slope = vec![vec![Vec::new(); na]; nx];
        for x in 0..nx {
            for a in 0..na {
                let lo = random_row(rng, nx);
                let hi = random_row(rng, nx);
                let dmax = f[x][a].iter().copied().fold(0.0, f64::max);
                slope[x][a] = if dmax > 0.0 {
                    lo.iter().zip(&hi).map(|(l, h)| (h - l) / dmax).collect()
                } else {
                    vec![0.0; nx]
                };
                base[x][a] = lo;
            }
        }
        b = b.kernel(KernelRule::Affine { base, slope });
    }
    if rng.gen_bool(0.5) {
        b = b.reward(RewardRule::Table(reward));
    } else {
        let slope = (0..nx).map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        b = b.reward(RewardRule::Affine { base: reward, slope });
    }
    b.build().expect("random model is valid by construction")
}

pub fn random_prescription(rng: &mut impl Rng, n: usize, nx: usize, na: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| {
            (0..nx)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        let mut r = vec![0.0; na];
                        r[rng.gen_range(0..na)] = 1.0;
                        r
                    } else {
                        random_row(rng, na)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn random_distribution(rng: &mut impl Rng, nx: usize) -> Vec<f64> {
    if rng.gen_bool(0.2) {
        let mut r = vec![0.0; nx];
        r[rng.gen_range(0..nx)] = 1.0;
        return r;
    }
    random_row(rng, nx)
}
