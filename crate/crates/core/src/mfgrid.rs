//! Discretization of the population-state space.
//!
//! Each class distribution lives on a simplex lattice with `resolution`
//! points per edge (spacing `1 / (resolution - 1)`); the grid over an ensemble
//! is the product of the per-class lattices. Off-grid values are interpolated
//! on the Freudenthal triangulation of each simplex (barycentric, hence exact
//! for affine functions and convex) and combined multilinearly across classes.

use std::collections::HashMap;

use crate::dynamics::PopulationState;
use crate::error::{Error, Result};

pub const DEFAULT_NODE_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct MeanFieldGrid {
    classes: usize,
    states: usize,
    resolution: usize,
    lattice: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

fn compositions(total: u32, parts: usize, out: &mut Vec<Vec<u32>>) {
    // last coordinate varies slowest so that for two states index == count of state 1
    fn rec(total: u32, parts: usize, suffix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            let mut v = vec![total];
            v.extend(suffix.iter().rev());
            out.push(v);
            return;
        }
        for last in 0..=total {
            suffix.push(last);
            rec(total - last, parts - 1, suffix, out);
            suffix.pop();
        }
    }
    rec(total, parts, &mut Vec::new(), out);
}

impl MeanFieldGrid {
    pub fn new(classes: usize, states: usize, resolution: usize, node_budget: u128) -> Result<Self> {
        if classes == 0 || states == 0 {
            return Err(Error::Dimension("mean-field grid needs classes and states".into()));
        }
        if resolution < 2 && states > 1 {
            return Err(Error::Dimension("mean-field grid resolution must be >= 2".into()));
        }
        let divisions = resolution.saturating_sub(1) as u128;
        let per_class = binomial(divisions + states as u128 - 1, states as u128 - 1);
        let nodes = per_class.checked_pow(classes as u32).unwrap_or(u128::MAX);
        if nodes > node_budget {
            return Err(Error::GridTooLarge {
                nodes,
                budget: node_budget,
            });
        }
        let mut lattice = Vec::with_capacity(per_class as usize);
        compositions(divisions as u32, states, &mut lattice);
        let index = lattice.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
        Ok(MeanFieldGrid {
            classes,
            states,
            resolution,
            lattice,
            index,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    fn divisions(&self) -> u32 {
        self.resolution.saturating_sub(1) as u32
    }

    pub fn nodes_per_class(&self) -> usize {
        self.lattice.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.lattice.len().pow(self.classes as u32)
    }

    fn class_indices(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let p = self.lattice.len();
        (0..self.classes).scan(node, move |rest, _| {
            let i = *rest % p;
            *rest /= p;
            Some(i)
        })
    }

    pub fn node(&self, node: usize) -> PopulationState {
        let d = self.divisions().max(1) as f64;
        let dists = self
            .class_indices(node)
            .map(|i| self.lattice[i].iter().map(|&c| c as f64 / d).collect())
            .collect();
        PopulationState::new(dists).expect("lattice points are distributions")
    }

    /// Barycentric vertices of one class distribution: `(lattice index, weight)`.
    fn locate_class(&self, mu: &[f64]) -> Vec<(usize, f64)> {
        let n = self.states;
        if n == 1 {
            return vec![(0, 1.0)];
        }
        let d = self.divisions() as f64;
        // u_k = D * sum_{l >= k} mu_l, k = 1..n-1 (non-increasing in k)
        let mut u = vec![0.0; n - 1];
        let mut suffix = 0.0;
        for k in (1..n).rev() {
            suffix += mu[k].max(0.0);
            u[k - 1] = (d * suffix).min(d);
        }
        let base: Vec<u32> = u.iter().map(|v| v.floor() as u32).collect();
        let frac: Vec<f64> = u.iter().zip(&base).map(|(v, b)| v - *b as f64).collect();
        let mut order: Vec<usize> = (0..n - 1).collect();
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));

        let to_counts = |uv: &[u32]| -> Vec<u32> {
            let mut c = vec![0u32; n];
            c[0] = self.divisions() - uv[0];
            for k in 1..n - 1 {
                c[k] = uv[k - 1] - uv[k];
            }
            c[n - 1] = uv[n - 2];
            c
        };
        let mut out = Vec::with_capacity(n);
        let mut vertex = base.clone();
        let w0 = 1.0 - frac[order[0]];
        if w0 > 0.0 {
            out.push((self.index[&to_counts(&vertex)], w0));
        }
        for j in 0..n - 1 {
            vertex[order[j]] += 1;
            let next = if j + 1 < n - 1 { frac[order[j + 1]] } else { 0.0 };
            let w = frac[order[j]] - next;
            if w > 0.0 {
                out.push((self.index[&to_counts(&vertex)], w));
            }
        }
        out
    }

    /// Grid nodes and convex weights reproducing `mu` by interpolation.
    pub fn locate(&self, mu: &PopulationState) -> Result<Vec<(usize, f64)>> {
        if mu.num_classes() != self.classes || mu.num_states() != self.states {
            return Err(Error::Dimension(format!(
                "population state {}x{} on a {}x{} grid",
                mu.num_classes(),
                mu.num_states(),
                self.classes,
                self.states
            )));
        }
        let p = self.lattice.len();
        let mut out = vec![(0usize, 1.0f64)];
        let mut stride = 1usize;
        for i in 0..self.classes {
            let verts = self.locate_class(mu.class(i));
            let mut next = Vec::with_capacity(out.len() * verts.len());
            for &(node, w) in &out {
                for &(v, wv) in &verts {
                    next.push((node + v * stride, w * wv));
                }
            }
            out = next;
            stride *= p;
        }
        Ok(out)
    }

    /// The node `mu` sits on, if any.
    pub fn node_of(&self, mu: &PopulationState) -> Option<usize> {
        let w = self.locate(mu).ok()?;
        w.iter()
            .find(|(_, wt)| *wt >= 1.0 - 1e-12)
            .map(|(n, _)| *n)
    }
}

/// Values `V(node, class, x)` on a [`MeanFieldGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    nodes: usize,
    classes: usize,
    states: usize,
    data: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(grid: &MeanFieldGrid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: &MeanFieldGrid, v: f64) -> Self {
        ValueTable {
            nodes: grid.num_nodes(),
            classes: grid.classes(),
            states: grid.states(),
            data: vec![v; grid.num_nodes() * grid.classes() * grid.states()],
        }
    }

    pub fn from_fn(grid: &MeanFieldGrid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(grid);
        for n in 0..t.nodes {
            for i in 0..t.classes {
                for x in 0..t.states {
                    t.set(n, i, x, f(n, i, x));
                }
            }
        }
        t
    }

    pub(crate) fn from_node_rows(grid: &MeanFieldGrid, rows: Vec<Vec<f64>>) -> Self {
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        debug_assert_eq!(data.len(), grid.num_nodes() * grid.classes() * grid.states());
        ValueTable {
            nodes: grid.num_nodes(),
            classes: grid.classes(),
            states: grid.states(),
            data,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn get(&self, node: usize, class: usize, x: usize) -> f64 {
        self.data[(node * self.classes + class) * self.states + x]
    }

    #[inline]
    pub fn set(&mut self, node: usize, class: usize, x: usize, v: f64) {
        self.data[(node * self.classes + class) * self.states + x] = v;
    }

    /// Values of all classes and states at one node, `[class * states + x]`.
    pub fn node_values(&self, node: usize) -> &[f64] {
        let w = self.classes * self.states;
        &self.data[node * w..(node + 1) * w]
    }

    /// Interpolated `[class * states + x]` from located weights.
    pub fn combine(&self, weights: &[(usize, f64)]) -> Vec<f64> {
        let w = self.classes * self.states;
        let mut out = vec![0.0; w];
        for &(node, wt) in weights {
            for (o, v) in out.iter_mut().zip(self.node_values(node)) {
                *o += wt * v;
            }
        }
        out
    }

    pub fn interpolate(&self, grid: &MeanFieldGrid, mu: &PopulationState) -> Result<Vec<f64>> {
        Ok(self.combine(&grid.locate(mu)?))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn distance(&self, other: &ValueTable) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
