//! Game instances: finite state and action sets, the interaction integrand,
//! local dynamics, the transition rule, reward, discount and horizon.
//!
//! The transition kernel is supplied as a function of `(x, a, drive)` where
//! `drive` is the graphon-weighted aggregate of the interaction integrand over
//! the population. Everything a solver needs is reachable from [`ModelSpec`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Probability slack accepted from user kernels before renormalization.
pub const KERNEL_TOL: f64 = 1e-12;

/// Default tolerance for declaring two action values tied.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

/// Rewards above this magnitude are treated as unbounded.
const REWARD_BOUND: f64 = 1e12;

/// Number of drive values sampled per `(x, a)` when validating rules.
const DRIVE_SAMPLES: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(t) => write!(f, "{t}"),
            Horizon::Infinite => write!(f, "infinite"),
        }
    }
}

pub type KernelFn = dyn Fn(usize, usize, f64, f64, &mut [f64]) + Send + Sync;
pub type RewardFn = dyn Fn(usize, usize, f64) -> f64 + Send + Sync;

/// Rule turning `(x, a, f0(x,a), drive)` into a distribution over next states.
#[derive(Clone)]
pub enum KernelRule {
    /// `x' = jump[x][a]` with probability `f0(x,a) + drive`, else `stay[x][a]`.
    BernoulliJump {
        stay: Vec<Vec<usize>>,
        jump: Vec<Vec<usize>>,
    },
    /// `Q(y | x, a) = base[x][a][y] + drive * slope[x][a][y]`.
    Affine {
        base: Vec<Vec<Vec<f64>>>,
        slope: Vec<Vec<Vec<f64>>>,
    },
    /// Arbitrary rule `(x, a, f0, drive, out)`.
    Custom(Arc<KernelFn>),
}

impl fmt::Debug for KernelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelRule::BernoulliJump { stay, jump } => f
                .debug_struct("BernoulliJump")
                .field("stay", stay)
                .field("jump", jump)
                .finish(),
            KernelRule::Affine { base, slope } => f
                .debug_struct("Affine")
                .field("base", base)
                .field("slope", slope)
                .finish(),
            KernelRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone)]
pub enum RewardRule {
    /// `R(x, a)`.
    Table(Vec<Vec<f64>>),
    /// `R(x, a, drive) = base[x][a] + drive * slope[x][a]`.
    Affine {
        base: Vec<Vec<f64>>,
        slope: Vec<Vec<f64>>,
    },
    Custom(Arc<RewardFn>),
}

impl fmt::Debug for RewardRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardRule::Table(t) => f.debug_tuple("Table").field(t).finish(),
            RewardRule::Affine { base, slope } => f
                .debug_struct("Affine")
                .field("base", base)
                .field("slope", slope)
                .finish(),
            RewardRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// An immutable, validated game instance.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    states: Vec<String>,
    actions: Vec<String>,
    /// `f(x, a, x')`, flattened `[x][a][x']`.
    interaction: Vec<f64>,
    /// `f0(x, a)`, flattened `[x][a]`.
    local: Vec<f64>,
    kernel: KernelRule,
    reward: RewardRule,
    discount: f64,
    horizon: Horizon,
    max_abs_reward: f64,
    fingerprint: String,
}

pub struct ModelBuilder {
    states: Vec<String>,
    actions: Vec<String>,
    interaction: Option<Vec<Vec<Vec<f64>>>>,
    local: Option<Vec<Vec<f64>>>,
    kernel: Option<KernelRule>,
    reward: Option<RewardRule>,
    discount: Option<f64>,
    horizon: Horizon,
    fingerprint: Option<String>,
}

impl ModelBuilder {
    pub fn new<S: Into<String>>(
        states: impl IntoIterator<Item = S>,
        actions: impl IntoIterator<Item = S>,
    ) -> Self {
        ModelBuilder {
            states: states.into_iter().map(Into::into).collect(),
            actions: actions.into_iter().map(Into::into).collect(),
            interaction: None,
            local: None,
            kernel: None,
            reward: None,
            discount: None,
            horizon: Horizon::Finite(1),
            fingerprint: None,
        }
    }

    /// Interaction integrand `f[x][a][x']`; zero when not set.
    pub fn interaction(mut self, f: Vec<Vec<Vec<f64>>>) -> Self {
        self.interaction = Some(f);
        self
    }

    /// Local dynamics `f0[x][a]`; zero when not set.
    pub fn local(mut self, f0: Vec<Vec<f64>>) -> Self {
        self.local = Some(f0);
        self
    }

    pub fn kernel(mut self, rule: KernelRule) -> Self {
        self.kernel = Some(rule);
        self
    }

    pub fn reward(mut self, rule: RewardRule) -> Self {
        self.reward = Some(rule);
        self
    }

    pub fn discount(mut self, delta: f64) -> Self {
        self.discount = Some(delta);
        self
    }

    pub fn horizon(mut self, horizon: Horizon) -> Self {
        self.horizon = horizon;
        self
    }

    /// Stable description used for hashing; generated for tabulated models.
    pub fn fingerprint(mut self, fp: impl Into<String>) -> Self {
        self.fingerprint = Some(fp.into());
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let nx = self.states.len();
        let na = self.actions.len();
        if nx == 0 || na == 0 {
            return Err(Error::InvalidModel("state and action sets must be non-empty".into()));
        }
        let discount = self
            .discount
            .ok_or_else(|| Error::InvalidModel("discount not set".into()))?;
        match self.horizon {
            Horizon::Finite(t) => {
                if t == 0 {
                    return Err(Error::InvalidModel("finite horizon must be >= 1".into()));
                }
                if !(discount > 0.0 && discount <= 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "discount {discount} not in (0,1] for a finite horizon"
                    )));
                }
            }
            Horizon::Infinite => {
                if !(discount > 0.0 && discount < 1.0) {
                    return Err(Error::InvalidModel(format!(
                        "discount {discount} not in (0,1) for an infinite horizon"
                    )));
                }
            }
        }

        let interaction = match self.interaction {
            None => vec![0.0; nx * na * nx],
            Some(f) => flatten3(&f, nx, na, nx, "interaction")?,
        };
        let local = match self.local {
            None => vec![0.0; nx * na],
            Some(f0) => flatten2(&f0, nx, na, "local")?,
        };
        let kernel = self
            .kernel
            .ok_or_else(|| Error::InvalidModel("kernel rule not set".into()))?;
        match &kernel {
            KernelRule::BernoulliJump { stay, jump } => {
                for (name, t) in [("stay", stay), ("jump", jump)] {
                    if t.len() != nx || t.iter().any(|r| r.len() != na) {
                        return Err(Error::InvalidModel(format!("{name} table must be {nx}x{na}")));
                    }
                    if t.iter().flatten().any(|&y| y >= nx) {
                        return Err(Error::InvalidModel(format!("{name} table names an unknown state")));
                    }
                }
            }
            KernelRule::Affine { base, slope } => {
                flatten3(base, nx, na, nx, "kernel base")?;
                flatten3(slope, nx, na, nx, "kernel slope")?;
            }
            KernelRule::Custom(_) => {}
        }
        let reward = self
            .reward
            .ok_or_else(|| Error::InvalidModel("reward not set".into()))?;
        match &reward {
            RewardRule::Table(t) => {
                flatten2(t, nx, na, "reward")?;
            }
            RewardRule::Affine { base, slope } => {
                flatten2(base, nx, na, "reward base")?;
                flatten2(slope, nx, na, "reward slope")?;
            }
            RewardRule::Custom(_) => {}
        }

        let fingerprint = self.fingerprint.unwrap_or_else(|| {
            format!(
                "states={:?};actions={:?};f={:?};f0={:?};kernel={:?};reward={:?};discount={};horizon={}",
                self.states, self.actions, interaction, local, kernel, reward, discount, self.horizon
            )
        });

        let mut model = ModelSpec {
            states: self.states,
            actions: self.actions,
            interaction,
            local,
            kernel,
            reward,
            discount,
            horizon: self.horizon,
            max_abs_reward: 0.0,
            fingerprint,
        };
        model.validate()?;
        Ok(model)
    }
}

fn flatten2(t: &[Vec<f64>], n0: usize, n1: usize, name: &str) -> Result<Vec<f64>> {
    if t.len() != n0 || t.iter().any(|r| r.len() != n1) {
        return Err(Error::InvalidModel(format!("{name} table must be {n0}x{n1}")));
    }
    let flat: Vec<f64> = t.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{name} table has non-finite entries")));
    }
    Ok(flat)
}

fn flatten3(t: &[Vec<Vec<f64>>], n0: usize, n1: usize, n2: usize, name: &str) -> Result<Vec<f64>> {
    if t.len() != n0 {
        return Err(Error::InvalidModel(format!("{name} table must be {n0}x{n1}x{n2}")));
    }
    let mut out = Vec::with_capacity(n0 * n1 * n2);
    for m in t {
        out.extend(flatten2(m, n1, n2, name)?);
    }
    Ok(out)
}

impl ModelSpec {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.max_abs_reward
    }

    /// Same game with another horizon and discount (validated again).
    pub fn with_horizon(&self, horizon: Horizon, discount: f64) -> Result<ModelSpec> {
        let mut m = self.clone();
        m.horizon = horizon;
        m.discount = discount;
        match horizon {
            Horizon::Finite(t) if t == 0 || !(discount > 0.0 && discount <= 1.0) => {
                return Err(Error::InvalidModel("invalid finite horizon/discount".into()))
            }
            Horizon::Infinite if !(discount > 0.0 && discount < 1.0) => {
                return Err(Error::InvalidModel("invalid infinite-horizon discount".into()))
            }
            _ => {}
        }
        m.fingerprint = format!("{}|horizon={horizon}|discount={discount}", self.fingerprint);
        Ok(m)
    }

    pub fn interaction(&self, x: usize, a: usize, y: usize) -> f64 {
        let n = self.num_states();
        self.interaction[(x * self.num_actions() + a) * n + y]
    }

    pub fn has_interaction(&self) -> bool {
        self.interaction.iter().any(|&v| v != 0.0)
    }

    pub fn local(&self, x: usize, a: usize) -> f64 {
        self.local[x * self.num_actions() + a]
    }

    /// `sum_y f(x, a, y) * neighborhood[y]`, where `neighborhood[y]` is the
    /// graphon-weighted mass of state `y` seen by the agent.
    pub fn drive(&self, x: usize, a: usize, neighborhood: &[f64]) -> f64 {
        let n = self.num_states();
        let base = (x * self.num_actions() + a) * n;
        self.interaction[base..base + n]
            .iter()
            .zip(neighborhood)
            .map(|(f, m)| f * m)
            .sum()
    }

    /// Range of `drive(x, a, .)` over neighbourhoods with total mass at most one.
    pub fn drive_range(&self, x: usize, a: usize) -> (f64, f64) {
        let n = self.num_states();
        let base = (x * self.num_actions() + a) * n;
        let row = &self.interaction[base..base + n];
        let lo = row.iter().copied().fold(0.0, f64::min);
        let hi = row.iter().copied().fold(0.0, f64::max);
        (lo, hi)
    }

    /// Fill `out` with `Q(. | x, a, drive)`.
    pub fn transition(&self, x: usize, a: usize, drive: f64, out: &mut [f64]) -> Result<()> {
        let n = self.num_states();
        if out.len() != n {
            return Err(Error::Dimension(format!("kernel buffer of {} for {n} states", out.len())));
        }
        match &self.kernel {
            KernelRule::BernoulliJump { stay, jump } => {
                let p = self.local(x, a) + drive;
                if !(-KERNEL_TOL..=1.0 + KERNEL_TOL).contains(&p) {
                    return Err(Error::ModelDefinition {
                        state: x,
                        action: a,
                        reason: format!("jump probability {p} outside [0,1]"),
                    });
                }
                let p = p.clamp(0.0, 1.0);
                out.fill(0.0);
                out[stay[x][a]] += 1.0 - p;
                out[jump[x][a]] += p;
            }
            KernelRule::Affine { base, slope } => {
                for y in 0..n {
                    out[y] = base[x][a][y] + drive * slope[x][a][y];
                }
                self.check_row(x, a, out)?;
            }
            KernelRule::Custom(f) => {
                f(x, a, self.local(x, a), drive, out);
                self.check_row(x, a, out)?;
            }
        }
        Ok(())
    }

    fn check_row(&self, x: usize, a: usize, out: &mut [f64]) -> Result<()> {
        let mut sum = 0.0;
        for v in out.iter_mut() {
            if !v.is_finite() || *v < -KERNEL_TOL || *v > 1.0 + KERNEL_TOL {
                return Err(Error::ModelDefinition {
                    state: x,
                    action: a,
                    reason: format!("transition probability {v} outside [0,1]"),
                });
            }
            *v = v.clamp(0.0, 1.0);
            sum += *v;
        }
        if (sum - 1.0).abs() > KERNEL_TOL * out.len() as f64 {
            return Err(Error::ModelDefinition {
                state: x,
                action: a,
                reason: format!("transition row sums to {sum}"),
            });
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
        Ok(())
    }

    pub fn reward(&self, x: usize, a: usize, drive: f64) -> f64 {
        match &self.reward {
            RewardRule::Table(t) => t[x][a],
            RewardRule::Affine { base, slope } => base[x][a] + drive * slope[x][a],
            RewardRule::Custom(f) => f(x, a, drive),
        }
    }

    fn drive_samples(&self, x: usize, a: usize) -> impl Iterator<Item = f64> {
        let (lo, hi) = self.drive_range(x, a);
        (0..DRIVE_SAMPLES).map(move |k| lo + (hi - lo) * k as f64 / (DRIVE_SAMPLES - 1) as f64)
    }

    /// Checks the kernel on sampled drives and bounds the reward.
    fn validate(&mut self) -> Result<()> {
        let nx = self.num_states();
        let mut row = vec![0.0; nx];
        let mut max_abs: f64 = 0.0;
        for x in 0..nx {
            for a in 0..self.num_actions() {
                for d in self.drive_samples(x, a) {
                    self.transition(x, a, d, &mut row)?;
                    let r = self.reward(x, a, d);
                    if !r.is_finite() || r.abs() > REWARD_BOUND {
                        return Err(Error::InvalidModel(format!(
                            "reward is unbounded: R({x}, {a}, drive={d}) = {r}"
                        )));
                    }
                    max_abs = max_abs.max(r.abs());
                }
            }
        }
        self.max_abs_reward = max_abs;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    /// Informational estimate; never blocks.
    Info,
    /// Evaluated during solving.
    Deferred,
    Flagged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Runtime diagnostics for the existence assumptions on a finite model.
///
/// A1 holds for any finite action set. A2-A4 are reported as difference
/// quotients over adjacent states/actions of the drift `f0 + drive` and of the
/// reward, taken over sampled drives. A5 (singleton argmax) depends on the
/// solved stages and is filled in from a policy with [`a5_from_ties`].
pub fn check_assumptions(model: &ModelSpec) -> AssumptionReport {
    let nx = model.num_states();
    let na = model.num_actions();
    let drives: Vec<Vec<Vec<f64>>> = (0..nx)
        .map(|x| (0..na).map(|a| model.drive_samples(x, a).collect()).collect())
        .collect();
    let drift = |x: usize, a: usize, k: usize| model.local(x, a) + drives[x][a][k];
    let rew = |x: usize, a: usize, k: usize| model.reward(x, a, drives[x][a][k]);

    let mut lip_x: f64 = 0.0;
    let mut curv_x: f64 = 0.0;
    let mut lip_a: f64 = 0.0;
    for k in 0..DRIVE_SAMPLES {
        for a in 0..na {
            for x in 1..nx {
                lip_x = lip_x
                    .max((drift(x, a, k) - drift(x - 1, a, k)).abs())
                    .max((rew(x, a, k) - rew(x - 1, a, k)).abs());
                if x + 1 < nx {
                    let d2f = drift(x + 1, a, k) - 2.0 * drift(x, a, k) + drift(x - 1, a, k);
                    let d2r = rew(x + 1, a, k) - 2.0 * rew(x, a, k) + rew(x - 1, a, k);
                    curv_x = curv_x.max(d2f.abs()).max(d2r.abs());
                }
            }
        }
        for x in 0..nx {
            for a in 1..na {
                lip_a = lip_a.max((drift(x, a, k) - drift(x, a - 1, k)).abs());
            }
        }
    }
    AssumptionReport {
        checks: vec![
            AssumptionCheck {
                id: "A1",
                status: CheckStatus::Pass,
                value: Some(na as f64),
                detail: format!("finite action set (|A|={na})"),
            },
            AssumptionCheck {
                id: "A2",
                status: CheckStatus::Info,
                value: Some(lip_x),
                detail: "max difference quotient in x of drift and reward".into(),
            },
            AssumptionCheck {
                id: "A3",
                status: CheckStatus::Info,
                value: Some(curv_x),
                detail: "max second difference in x of drift and reward".into(),
            },
            AssumptionCheck {
                id: "A4",
                status: CheckStatus::Info,
                value: Some(lip_a),
                detail: "max difference quotient in a of drift".into(),
            },
            AssumptionCheck {
                id: "A5",
                status: CheckStatus::Deferred,
                value: None,
                detail: "singleton argmax checked at each solved stage".into(),
            },
        ],
    }
}

/// Replace the deferred A5 entry with the tie count collected while solving.
pub fn a5_from_ties(mut report: AssumptionReport, ties: usize) -> AssumptionReport {
    if let Some(c) = report.checks.iter_mut().find(|c| c.id == "A5") {
        c.status = if ties == 0 {
            CheckStatus::Pass
        } else {
            CheckStatus::Flagged
        };
        c.value = Some(ties as f64);
        c.detail = format!("{ties} (stage, node, class, state) cells with a non-singleton argmax");
    }
    report
}
