//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! states = ["healthy", "infected"]
//! actions = ["no_repair", "repair"]
//! discount = 0.9
//! horizon = 10            # or "infinite"
//! grid_size = 64
//! initial = [0.5, 0.5]
//!
//! [graphon]
//! kind = "erdos_renyi"
//! params = { p = 0.8 }
//!
//! [builtin.malware]
//! q = 0.9
//! k = 0.3
//! lambda = 0.2
//! ```
//!
//! Instead of `builtin`, a model can be tabulated with `f` (`[x][a][y]`),
//! optional `f0` (`[x][a]`), `reward` (`[x][a]`, with optional
//! `reward_slope`) and a `[kernel_rule]` table of kind `bernoulli_jump`
//! (`stay`, `jump`) or `affine` (`base`, `slope`).

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::dynamics::PopulationState;
use crate::error::{Error, Result};
use crate::finite::FixedPointConfig;
use crate::game::{Game, Reduction};
use crate::graphon::{Graphon, GraphonKind, DEFAULT_GRID_SIZE};
use crate::infinite::InfiniteConfig;
use crate::malware::{self, MalwareParams};
use crate::mfgrid::{MeanFieldGrid, DEFAULT_NODE_BUDGET};
use crate::model::{Horizon, KernelRule, ModelBuilder, ModelSpec, RewardRule};
use crate::nsim::{InitialAssignment, Placement};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum HorizonValue {
    Steps(i64),
    Word(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphonConfig {
    pub kind: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuiltinConfig {
    malware: Option<MalwareParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KernelRuleConfig {
    BernoulliJump {
        stay: Vec<Vec<usize>>,
        jump: Vec<Vec<usize>>,
    },
    Affine {
        base: Vec<Vec<Vec<f64>>>,
        slope: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub resolution: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub damping: Option<f64>,
    pub restarts: Option<usize>,
    pub tie_tolerance: Option<f64>,
    pub vertex_starts: Option<usize>,
    pub polish_tol: Option<f64>,
    pub node_budget: Option<u64>,
    pub reduction: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct InfiniteSection {
    pub sweeps_per_solve: Option<usize>,
    pub tol: Option<f64>,
    pub tol_value: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub report_steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NsimSection {
    pub agents: Option<usize>,
    pub steps: Option<usize>,
    pub placement: Option<String>,
    pub assignment: Option<String>,
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FiguresSection {
    pub graphons: Option<Vec<GraphonConfig>>,
    pub steps: Option<usize>,
    pub state: Option<String>,
    pub action: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    states: Option<Vec<String>>,
    actions: Option<Vec<String>>,
    discount: Option<f64>,
    horizon: Option<HorizonValue>,
    grid_size: Option<usize>,
    initial: Option<Vec<f64>>,
    graphon: Option<GraphonConfig>,
    builtin: Option<BuiltinConfig>,
    f: Option<Vec<Vec<Vec<f64>>>>,
    f0: Option<Vec<Vec<f64>>>,
    reward: Option<Vec<Vec<f64>>>,
    reward_slope: Option<Vec<Vec<f64>>>,
    kernel_rule: Option<KernelRuleConfig>,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    infinite: InfiniteSection,
    #[serde(default)]
    nsim: NsimSection,
    #[serde(default)]
    figures: FiguresSection,
}

#[derive(Debug, Clone)]
enum ModelSource {
    Malware(MalwareParams),
    Tabulated {
        f: Vec<Vec<Vec<f64>>>,
        f0: Option<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        reward_slope: Option<Vec<Vec<f64>>>,
        kernel: KernelRuleConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsimOutput {
    Agents,
    Aggregate,
}

#[derive(Debug, Clone)]
pub struct NsimSettings {
    pub agents: usize,
    pub steps: usize,
    pub placement: Placement,
    pub assignment: InitialAssignment,
    pub output: NsimOutput,
}

/// A validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub discount: f64,
    pub horizon: Horizon,
    pub grid_size: usize,
    pub initial: Vec<f64>,
    pub graphon: GraphonConfig,
    pub reduction: Reduction,
    pub resolution: usize,
    pub node_budget: u128,
    pub fixed_point: FixedPointConfig,
    pub infinite: InfiniteConfig,
    pub report_steps: usize,
    pub nsim: NsimSettings,
    pub figures: FiguresSection,
    source: ModelSource,
    hash: String,
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "missing required field"))
}

fn parse_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.contains("field"))
        .unwrap_or("<document>")
        .to_string();
    Error::Config {
        field,
        message: msg.trim().to_string(),
    }
}

fn graphon_from(cfg: &GraphonConfig, grid_size: usize, field: &str) -> Result<Graphon> {
    let num = |k: &str| -> Result<f64> {
        match cfg.params.get(k) {
            Some(toml::Value::Float(v)) => Ok(*v),
            Some(toml::Value::Integer(v)) => Ok(*v as f64),
            Some(_) => Err(Error::config(format!("{field}.params.{k}"), "must be a number")),
            None => Err(Error::config(format!("{field}.params.{k}"), "missing required parameter")),
        }
    };
    let g = match cfg.kind.as_str() {
        "complete" => Graphon::complete(grid_size),
        "erdos_renyi" => Graphon::erdos_renyi(num("p")?, grid_size),
        "stochastic_block" => Graphon::stochastic_block(
            num("p_in")?,
            num("q_out")?,
            cfg.params.get("cut").map_or(Ok(0.5), |_| num("cut"))?,
            grid_size,
        ),
        "random_geometric" => Graphon::random_geometric(num("decay")?, grid_size),
        "custom" => match cfg.params.get("path") {
            Some(toml::Value::String(p)) => Graphon::custom_from_csv(p),
            _ => Err(Error::config(format!("{field}.params.path"), "custom graphon needs a CSV path")),
        },
        "custom_table" => {
            let table: Vec<Vec<f64>> = cfg
                .params
                .get("table")
                .cloned()
                .ok_or_else(|| Error::config(format!("{field}.params.table"), "missing table"))?
                .try_into()
                .map_err(|_| Error::config(format!("{field}.params.table"), "must be a numeric matrix"))?;
            let m = table.len();
            Graphon::new(GraphonKind::Custom { table }, m)
        }
        other => {
            return Err(Error::config(
                format!("{field}.kind"),
                format!("unknown graphon kind '{other}'"),
            ))
        }
    };
    g.map_err(|e| match e {
        Error::Config { .. } => e,
        e => Error::config(field, e.to_string()),
    })
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(parse_error)?;
        let discount = required(raw.discount, "discount")?;
        let horizon = match required(raw.horizon, "horizon")? {
            HorizonValue::Steps(t) if t >= 1 => Horizon::Finite(t as usize),
            HorizonValue::Word(w) if w == "infinite" => Horizon::Infinite,
            _ => return Err(Error::config("horizon", "must be a positive integer or \"infinite\"")),
        };
        let grid_size = raw.grid_size.unwrap_or(DEFAULT_GRID_SIZE);
        if grid_size == 0 {
            return Err(Error::config("grid_size", "must be positive"));
        }
        let graphon = required(raw.graphon, "graphon")?;

        let source = match (raw.builtin, raw.f) {
            (Some(b), None) => ModelSource::Malware(
                b.malware
                    .ok_or_else(|| Error::config("builtin", "unknown builtin model (expected 'malware')"))?,
            ),
            (None, Some(f)) => ModelSource::Tabulated {
                f,
                f0: raw.f0,
                reward: required(raw.reward, "reward")?,
                reward_slope: raw.reward_slope,
                kernel: required(raw.kernel_rule, "kernel_rule")?,
            },
            (Some(_), Some(_)) => return Err(Error::config("builtin", "give either builtin or a tabulated model, not both")),
            (None, None) => return Err(Error::config("builtin", "missing model: set builtin.malware or tabulate f/reward/kernel_rule")),
        };
        let (states, actions) = match &source {
            ModelSource::Malware(_) => (
                raw.states.unwrap_or_else(|| vec!["healthy".into(), "infected".into()]),
                raw.actions.unwrap_or_else(|| vec!["no_repair".into(), "repair".into()]),
            ),
            ModelSource::Tabulated { .. } => (required(raw.states, "states")?, required(raw.actions, "actions")?),
        };
        if matches!(source, ModelSource::Malware(_)) && (states.len() != 2 || actions.len() != 2) {
            return Err(Error::config("states", "the malware model has two states and two actions"));
        }
        let initial = raw.initial.unwrap_or_else(|| {
            if matches!(source, ModelSource::Malware(_)) {
                vec![0.5, 0.5]
            } else {
                vec![1.0 / states.len() as f64; states.len()]
            }
        });
        if initial.len() != states.len() {
            return Err(Error::config("initial", "must have one entry per state"));
        }
        PopulationState::new(vec![initial.clone()]).map_err(|e| Error::config("initial", e.to_string()))?;

        let s = &raw.solver;
        let d = FixedPointConfig::default();
        let fixed_point = FixedPointConfig {
            max_iters: s.max_iters.unwrap_or(d.max_iters),
            tol: s.tol.unwrap_or(d.tol),
            damping: s.damping.unwrap_or(d.damping),
            restarts: s.restarts.unwrap_or(d.restarts),
            tie_tolerance: s.tie_tolerance.unwrap_or(d.tie_tolerance),
            vertex_starts: s.vertex_starts.unwrap_or(d.vertex_starts),
            polish_tol: s.polish_tol.unwrap_or(d.polish_tol),
            seed: raw.seed.unwrap_or(0),
        };
        fixed_point
            .validate()
            .map_err(|e| prefix_field(e, "solver"))?;
        let reduction = match s.reduction.as_deref() {
            None | Some("auto") => Reduction::Auto,
            Some("full") => Reduction::Full,
            Some(o) => return Err(Error::config("solver.reduction", format!("unknown reduction '{o}'"))),
        };
        let resolution = s.resolution.unwrap_or(101);
        if resolution < 2 {
            return Err(Error::config("solver.resolution", "must be at least 2"));
        }
        let i = &raw.infinite;
        let di = InfiniteConfig::default();
        let infinite = InfiniteConfig {
            sweeps_per_solve: i.sweeps_per_solve.unwrap_or(di.sweeps_per_solve),
            tol: i.tol.unwrap_or(di.tol),
            tol_value: i.tol_value.unwrap_or(di.tol_value),
            max_sweeps: i.max_sweeps.unwrap_or(di.max_sweeps),
        };
        infinite.validate().map_err(|e| prefix_field(e, "infinite"))?;
        let n = &raw.nsim;
        let nsim = NsimSettings {
            agents: n.agents.unwrap_or(1000),
            steps: n.steps.unwrap_or(match horizon {
                Horizon::Finite(t) => t,
                Horizon::Infinite => 50,
            }),
            placement: match n.placement.as_deref() {
                None | Some("uniform") => Placement::Uniform,
                Some("grid") => Placement::Grid,
                Some(o) => return Err(Error::config("nsim.placement", format!("unknown placement '{o}'"))),
            },
            assignment: match n.assignment.as_deref() {
                None | Some("exact") => InitialAssignment::Exact,
                Some("sampled") => InitialAssignment::Sampled,
                Some(o) => return Err(Error::config("nsim.assignment", format!("unknown assignment '{o}'"))),
            },
            output: match n.output.as_deref() {
                None | Some("aggregate") => NsimOutput::Aggregate,
                Some("agents") => NsimOutput::Agents,
                Some(o) => return Err(Error::config("nsim.output", format!("unknown output '{o}'"))),
            },
        };
        if nsim.agents == 0 {
            return Err(Error::config("nsim.agents", "must be positive"));
        }
        if let Some(t) = raw.threads {
            if t == 0 {
                return Err(Error::config("threads", "must be positive"));
            }
        }

        let cfg = ExperimentConfig {
            seed: raw.seed.unwrap_or(0),
            threads: raw.threads,
            states,
            actions,
            discount,
            horizon,
            grid_size,
            initial,
            graphon,
            reduction,
            resolution,
            node_budget: s.node_budget.map_or(DEFAULT_NODE_BUDGET, u128::from),
            fixed_point,
            infinite,
            report_steps: i.report_steps.unwrap_or(crate::verify::DEFAULT_REPORT_STEPS),
            nsim,
            figures: raw.figures,
            source,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        };
        cfg.model()?;
        cfg.graphon()?;
        for (k, g) in cfg.figures.graphons.iter().flatten().enumerate() {
            graphon_from(g, cfg.grid_size, &format!("figures.graphons[{k}]"))?;
        }
        Ok(cfg)
    }

    /// SHA-256 of the configuration text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn model(&self) -> Result<ModelSpec> {
        self.model_with(self.horizon)
    }

    pub fn model_with(&self, horizon: Horizon) -> Result<ModelSpec> {
        let built = match &self.source {
            ModelSource::Malware(p) => p.build(horizon, self.discount),
            ModelSource::Tabulated {
                f,
                f0,
                reward,
                reward_slope,
                kernel,
            } => {
                let kernel = match kernel.clone() {
                    KernelRuleConfig::BernoulliJump { stay, jump } => KernelRule::BernoulliJump { stay, jump },
                    KernelRuleConfig::Affine { base, slope } => KernelRule::Affine { base, slope },
                };
                let reward = match reward_slope {
                    Some(slope) => RewardRule::Affine {
                        base: reward.clone(),
                        slope: slope.clone(),
                    },
                    None => RewardRule::Table(reward.clone()),
                };
                let mut b = ModelBuilder::new(self.states.clone(), self.actions.clone())
                    .interaction(f.clone())
                    .kernel(kernel)
                    .reward(reward)
                    .discount(self.discount)
                    .horizon(horizon)
                    .fingerprint(format!("tabulated:{}", self.hash));
                if let Some(f0) = f0 {
                    b = b.local(f0.clone());
                }
                b.build()
            }
        };
        built.map_err(|e| match e {
            Error::InvalidModel(m) if m.contains("discount") => Error::config("discount", m),
            e => Error::config("model", e.to_string()),
        })
    }

    pub fn graphon(&self) -> Result<Graphon> {
        graphon_from(&self.graphon, self.grid_size, "graphon")
    }

    /// Graphons for the figure data; the four study graphons by default.
    pub fn figure_graphons(&self) -> Result<Vec<Graphon>> {
        match &self.figures.graphons {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(k, g)| graphon_from(g, self.grid_size, &format!("figures.graphons[{k}]")))
                .collect(),
            None => Ok(malware::study_graphons(self.grid_size)),
        }
    }

    pub fn game(&self) -> Result<Game> {
        Game::new(self.model()?, self.graphon()?, self.reduction)
    }

    pub fn grid_for(&self, game: &Game) -> Result<MeanFieldGrid> {
        MeanFieldGrid::new(game.num_classes(), game.num_states(), self.resolution, self.node_budget)
    }

    /// The configured initial distribution in every class of `game`.
    pub fn initial_state(&self, game: &Game) -> Result<PopulationState> {
        PopulationState::uniform_classes(game.num_classes(), self.initial.clone())
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|s| s == name)
    }
}

fn prefix_field(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        e => e,
    }
}
