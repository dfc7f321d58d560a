//! Solved policy tables and their on-disk format.
//!
//! A policy file is a CSV preceded by `#` header lines:
//!
//! ```text
//! # gmfe-policy v1
//! # model_hash=<sha256>
//! # horizon=10
//! ...
//! t,node,class,state,value,p_no_repair,p_repair
//! 0,0,0,healthy,-0.12,1,0
//! ```
//!
//! Rows with `t = T` (finite horizon only) carry the terminal value and no
//! probabilities. Floats are written in shortest round-trip form, so loading
//! a saved policy reproduces it bit for bit.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use sha2::{Digest, Sha256};

use crate::dynamics::{Policy, PopulationState, Prescription};
use crate::error::{Error, Result};
use crate::finite::{stage_fixed_point, FixedPointConfig, StageDiagnostics, StageSolution};
use crate::game::Game;
use crate::mfgrid::{MeanFieldGrid, ValueTable};
use crate::model::Horizon;

const MAGIC: &str = "gmfe-policy v1";

/// Prescriptions and values of one stage at every grid node.
#[derive(Debug, Clone)]
pub struct StagePolicy {
    pub prescriptions: Vec<Prescription>,
    pub values: ValueTable,
    /// Empty for policies read from disk.
    pub diagnostics: Vec<StageDiagnostics>,
}

impl StagePolicy {
    pub fn from_solutions(grid: &MeanFieldGrid, solved: Vec<StageSolution>) -> Self {
        let mut prescriptions = Vec::with_capacity(solved.len());
        let mut rows = Vec::with_capacity(solved.len());
        let mut diagnostics = Vec::with_capacity(solved.len());
        for s in solved {
            prescriptions.push(s.prescription);
            rows.push(s.values);
            diagnostics.push(s.diagnostics);
        }
        StagePolicy {
            prescriptions,
            values: ValueTable::from_node_rows(grid, rows),
            diagnostics,
        }
    }
}

/// Identifies the game a policy was solved for.
pub fn game_hash(game: &Game) -> String {
    let mut h = Sha256::new();
    h.update(game.model().fingerprint().as_bytes());
    h.update(b"|");
    h.update(game.graphon().label().as_bytes());
    h.update(format!("|grid={}|groups=", game.graphon().grid_size()).as_bytes());
    for g in game.groups() {
        h.update(format!("{:?};", g.members).as_bytes());
    }
    hex::encode(h.finalize())
}

/// A solved policy: a prescription table `theta_t(mu)` and value table
/// `V_t(mu, .)` per stage on a mean-field grid. Finite horizons store stages
/// `0..T` plus the terminal value `V_T`; the infinite horizon stores a single
/// stationary stage.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    grid: MeanFieldGrid,
    horizon: Horizon,
    discount: f64,
    cfg: FixedPointConfig,
    stages: Vec<StagePolicy>,
    terminal: ValueTable,
    model_hash: String,
    graphon: String,
}

impl PolicyTable {
    pub(crate) fn new(
        game: &Game,
        grid: MeanFieldGrid,
        horizon: Horizon,
        cfg: FixedPointConfig,
        stages: Vec<StagePolicy>,
        terminal: ValueTable,
    ) -> Self {
        PolicyTable {
            grid,
            horizon,
            discount: game.model().discount(),
            cfg,
            stages,
            terminal,
            model_hash: game_hash(game),
            graphon: game.graphon().label(),
        }
    }

    pub fn grid(&self) -> &MeanFieldGrid {
        &self.grid
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn config(&self) -> &FixedPointConfig {
        &self.cfg
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn graphon_label(&self) -> &str {
        &self.graphon
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Stored stage `s` (zero-based).
    pub fn stage(&self, s: usize) -> &StagePolicy {
        &self.stages[s]
    }

    pub fn stages(&self) -> &[StagePolicy] {
        &self.stages
    }

    pub fn terminal(&self) -> &ValueTable {
        &self.terminal
    }

    /// Stored stage used at time `t`.
    pub fn stage_index(&self, t: usize) -> Result<usize> {
        match self.horizon {
            Horizon::Infinite => Ok(0),
            Horizon::Finite(h) if t < h => Ok(t),
            Horizon::Finite(h) => Err(Error::OutsideDomain {
                t,
                reason: format!("policy covers t < {h}"),
            }),
        }
    }

    /// `V_{t+1}` as seen from stage `t`.
    pub fn continuation(&self, t: usize) -> Result<&ValueTable> {
        let s = self.stage_index(t)?;
        Ok(match self.horizon {
            Horizon::Infinite => &self.stages[0].values,
            Horizon::Finite(_) => self.stages.get(s + 1).map_or(&self.terminal, |st| &st.values),
        })
    }

    /// Interpolated `V_t(mu, .)`, `[class * states + x]`. For `t = T` this is
    /// the terminal value.
    pub fn value_at(&self, t: usize, mu: &PopulationState) -> Result<Vec<f64>> {
        let table = match self.horizon {
            Horizon::Finite(h) if t == h => &self.terminal,
            _ => &self.stages[self.stage_index(t)?].values,
        };
        table.interpolate(&self.grid, mu)
    }

    /// `theta_t(mu)`: the stored prescription on grid nodes, otherwise the
    /// stage fixed point solved at `mu` against the interpolated continuation.
    pub fn prescription_at(&self, game: &Game, t: usize, mu: &PopulationState) -> Result<Prescription> {
        let s = self.stage_index(t)?;
        if let Some(node) = self.grid.node_of(mu) {
            return Ok(self.stages[s].prescriptions[node].clone());
        }
        let salt = mu
            .classes()
            .iter()
            .flatten()
            .fold(0u64, |h, p| h.rotate_left(7) ^ p.to_bits());
        let sol = stage_fixed_point(game, &self.grid, mu, self.continuation(t)?, &self.cfg, None, salt)
            .map_err(|e| Error::Stage {
                t,
                node: usize::MAX,
                source: Box::new(e),
            })?;
        Ok(sol.prescription)
    }

    fn check_game(&self, game: &Game) -> Result<()> {
        if game_hash(game) != self.model_hash {
            return Err(Error::PolicyFormat(
                "policy was solved for a different model or graphon".into(),
            ));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W, game: &Game) -> Result<()> {
        let model = game.model();
        let c = &self.cfg;
        writeln!(w, "# {MAGIC}")?;
        writeln!(w, "# model_hash={}", self.model_hash)?;
        writeln!(w, "# graphon={}", self.graphon)?;
        writeln!(w, "# grid_size={}", game.graphon().grid_size())?;
        writeln!(w, "# classes={}", self.grid.classes())?;
        writeln!(w, "# states={}", self.grid.states())?;
        writeln!(w, "# actions={}", model.num_actions())?;
        writeln!(w, "# resolution={}", self.grid.resolution())?;
        writeln!(w, "# horizon={}", self.horizon)?;
        writeln!(w, "# discount={}", self.discount)?;
        writeln!(
            w,
            "# fixed_point=max_iters:{};tol:{};damping:{};restarts:{};tie_tolerance:{};vertex_starts:{};polish_tol:{};seed:{}",
            c.max_iters, c.tol, c.damping, c.restarts, c.tie_tolerance, c.vertex_starts, c.polish_tol, c.seed
        )?;
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "node".into(), "class".into(), "state".into(), "value".into()];
        header.extend(model.actions().iter().map(|a| format!("p_{a}")));
        csv.write_record(&header)?;
        let (n, nx, na) = (self.grid.classes(), self.grid.states(), model.num_actions());
        let names = model.states();
        let mut record: Vec<String> = Vec::with_capacity(5 + na);
        for (t, stage) in self.stages.iter().enumerate() {
            for (node, gamma) in stage.prescriptions.iter().enumerate() {
                for i in 0..n {
                    for x in 0..nx {
                        record.clear();
                        record.extend([
                            t.to_string(),
                            node.to_string(),
                            i.to_string(),
                            names[x].clone(),
                            stage.values.get(node, i, x).to_string(),
                        ]);
                        record.extend(gamma.row(i, x).iter().map(|p| p.to_string()));
                        csv.write_record(&record)?;
                    }
                }
            }
        }
        if let Horizon::Finite(h) = self.horizon {
            for node in 0..self.grid.num_nodes() {
                for i in 0..n {
                    for x in 0..nx {
                        record.clear();
                        record.extend([
                            h.to_string(),
                            node.to_string(),
                            i.to_string(),
                            names[x].clone(),
                            self.terminal.get(node, i, x).to_string(),
                        ]);
                        record.extend(std::iter::repeat_n(String::new(), na));
                        csv.write_record(&record)?;
                    }
                }
            }
        }
        csv.flush()?;
        Ok(())
    }

    /// Read a policy written by [`PolicyTable::write`] for `game`.
    pub fn read<R: Read>(r: R, game: &Game) -> Result<PolicyTable> {
        let mut reader = BufReader::new(r);
        let mut meta: HashMap<String, String> = HashMap::new();
        let mut magic = false;
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if rest == MAGIC {
                    magic = true;
                } else if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            } else {
                body.push_str(&line);
                reader.read_to_string(&mut body)?;
                break;
            }
        }
        if !magic {
            return Err(Error::PolicyFormat(format!("missing '# {MAGIC}' header")));
        }
        let get = |k: &str| -> Result<&str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::PolicyFormat(format!("missing header field '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::PolicyFormat(format!("header field '{k}' is not an integer")))
        };
        let model_hash = get("model_hash")?.to_string();
        let expected = game_hash(game);
        if model_hash != expected {
            return Err(Error::PolicyFormat(format!(
                "model hash {model_hash} does not match the configured game ({expected})"
            )));
        }
        let (n, nx, na) = (num("classes")?, num("states")?, num("actions")?);
        if n != game.num_classes() || nx != game.num_states() || na != game.num_actions() {
            return Err(Error::PolicyFormat("policy dimensions do not match the game".into()));
        }
        let horizon = match get("horizon")? {
            "infinite" => Horizon::Infinite,
            h => Horizon::Finite(
                h.parse()
                    .map_err(|_| Error::PolicyFormat(format!("bad horizon '{h}'")))?,
            ),
        };
        let discount: f64 = get("discount")?
            .parse()
            .map_err(|_| Error::PolicyFormat("bad discount".into()))?;
        let cfg = parse_fixed_point(get("fixed_point")?)?;
        let grid = MeanFieldGrid::new(n, nx, num("resolution")?, u128::MAX)?;
        let nodes = grid.num_nodes();
        let num_stages = match horizon {
            Horizon::Finite(h) => h,
            Horizon::Infinite => 1,
        };
        let states: HashMap<&str, usize> = game
            .model()
            .states()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();

        let mut values: Vec<ValueTable> = (0..=num_stages).map(|_| ValueTable::zeros(&grid)).collect();
        let mut rows = vec![vec![vec![vec![vec![f64::NAN; na]; nx]; n]; nodes]; num_stages];
        let mut seen = vec![false; (num_stages + 1) * nodes * n * nx];
        let mut csv = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header = csv.headers()?.clone();
        if header.len() != 5 + na || &header[0] != "t" || &header[4] != "value" {
            return Err(Error::PolicyFormat("unexpected column layout".into()));
        }
        let bad = |what: &str, row: usize| Error::PolicyFormat(format!("row {row}: bad {what}"));
        for (k, rec) in csv.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            let t: usize = rec[0].parse().map_err(|_| bad("t", row))?;
            let node: usize = rec[1].parse().map_err(|_| bad("node", row))?;
            let i: usize = rec[2].parse().map_err(|_| bad("class", row))?;
            let x = *states.get(&rec[3]).ok_or_else(|| bad("state", row))?;
            let v: f64 = rec[4].parse().map_err(|_| bad("value", row))?;
            let terminal = matches!(horizon, Horizon::Finite(h) if t == h);
            if t > num_stages || (t == num_stages && !terminal) || node >= nodes || i >= n {
                return Err(bad("index", row));
            }
            seen[((t * nodes + node) * n + i) * nx + x] = true;
            values[t].set(node, i, x, v);
            if !terminal {
                for a in 0..na {
                    rows[t][node][i][x][a] = rec[5 + a].parse().map_err(|_| bad("probability", row))?;
                }
            }
        }
        let needed = match horizon {
            Horizon::Finite(_) => seen.len(),
            Horizon::Infinite => nodes * n * nx,
        };
        if seen[..needed].iter().any(|s| !s) {
            return Err(Error::PolicyFormat("policy table is incomplete".into()));
        }
        let terminal = match horizon {
            Horizon::Finite(_) => values.pop().expect("terminal"),
            Horizon::Infinite => {
                values.pop();
                values[0].clone()
            }
        };
        let stages = rows
            .into_iter()
            .zip(values)
            .map(|(stage_rows, values)| {
                let prescriptions = stage_rows
                    .into_iter()
                    .map(Prescription::new)
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::PolicyFormat(e.to_string()))?;
                Ok(StagePolicy {
                    prescriptions,
                    values,
                    diagnostics: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyTable {
            grid,
            horizon,
            discount,
            cfg,
            stages,
            terminal,
            model_hash,
            graphon: get("graphon")?.to_string(),
        })
    }

    /// Sup-norm difference of prescriptions and values against another table
    /// on the same grid.
    pub fn distance(&self, other: &PolicyTable) -> Option<(f64, f64)> {
        if self.stages.len() != other.stages.len() || self.grid.num_nodes() != other.grid.num_nodes() {
            return None;
        }
        let mut dp: f64 = 0.0;
        let mut dv = self.terminal.distance(&other.terminal);
        for (a, b) in self.stages.iter().zip(&other.stages) {
            dv = dv.max(a.values.distance(&b.values));
            for (p, q) in a.prescriptions.iter().zip(&b.prescriptions) {
                dp = dp.max(p.distance(q));
            }
        }
        Some((dp, dv))
    }
}

fn parse_fixed_point(s: &str) -> Result<FixedPointConfig> {
    let mut cfg = FixedPointConfig::default();
    for part in s.split(';') {
        let (k, v) = part
            .split_once(':')
            .ok_or_else(|| Error::PolicyFormat(format!("bad fixed_point entry '{part}'")))?;
        let bad = || Error::PolicyFormat(format!("bad fixed_point value for '{k}'"));
        match k {
            "max_iters" => cfg.max_iters = v.parse().map_err(|_| bad())?,
            "tol" => cfg.tol = v.parse().map_err(|_| bad())?,
            "damping" => cfg.damping = v.parse().map_err(|_| bad())?,
            "restarts" => cfg.restarts = v.parse().map_err(|_| bad())?,
            "tie_tolerance" => cfg.tie_tolerance = v.parse().map_err(|_| bad())?,
            "vertex_starts" => cfg.vertex_starts = v.parse().map_err(|_| bad())?,
            "polish_tol" => cfg.polish_tol = v.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            _ => {}
        }
    }
    Ok(cfg)
}

impl Policy for PolicyTable {
    fn prescription(&self, game: &Game, t: usize, mu: &PopulationState) -> Result<Prescription> {
        self.check_game(game)?;
        self.prescription_at(game, t, mu)
    }
}
