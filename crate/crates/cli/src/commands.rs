use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use gmfe::config::NsimOutput;
use gmfe::dynamics::write_trajectory_csv;
use gmfe::nsim::{write_aggregate_csv, write_agents_csv};
use gmfe::policy::PolicyTable;
use gmfe::verify::ViolationKind;
use gmfe::{
    converse_scan, equilibrium_gap, mf_gap, propagate, sample_network, simulate, solve_finite, solve_infinite,
    trajectory, Error, ExperimentConfig, Game, Graphon, Horizon, Policy, PopulationState, Result,
};

use crate::manifest::Manifest;
use crate::Common;

struct Run<'a> {
    args: &'a Common,
    cfg: ExperimentConfig,
    artifacts: Vec<String>,
    residuals: BTreeMap<String, f64>,
    graphons: Vec<String>,
}

fn config_error(field: &str, message: &str) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl Run<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.args.out.join(name))?))
    }

    fn residual(&mut self, key: &str, v: f64) {
        self.residuals.insert(key.to_string(), v);
    }

    fn write_policy(&mut self, policy: &PolicyTable, game: &Game, default: Option<&str>) -> Result<()> {
        let path: PathBuf = match (&self.args.policy_out, default) {
            (Some(p), _) => p.clone(),
            (None, Some(name)) => self.args.out.join(name),
            (None, None) => return Ok(()),
        };
        let mut w = BufWriter::new(File::create(&path)?);
        policy.write(&mut w, game)?;
        w.flush()?;
        let shown = path.strip_prefix(&self.args.out).unwrap_or(&path);
        self.artifacts.push(shown.display().to_string());
        Ok(())
    }

    fn solve_finite_policy(&mut self, game: &Game, stage_summary: bool) -> Result<PolicyTable> {
        let grid = self.cfg.grid_for(game)?;
        let policy = solve_finite(game, &grid, &self.cfg.fixed_point, None)?;
        let diags = policy.stages().iter().flat_map(|s| &s.diagnostics);
        let (mut iters, mut resid, mut multi, mut ties) = (0usize, 0.0f64, 0usize, 0usize);
        for d in diags {
            iters = iters.max(d.iterations);
            resid = resid.max(d.residual);
            multi += d.multiple_equilibria() as usize;
            ties += d.ties.len();
        }
        self.residual("max_stage_residual", resid);
        self.residual("max_stage_iterations", iters as f64);
        self.residual("stages_with_multiple_equilibria", multi as f64);
        self.residual("tie_cells", ties as f64);
        if stage_summary {
            let mut w = self.create("stage_summary.csv")?;
            writeln!(w, "t,node,iterations,residual,converged_runs,distinct_fixed_points,ties,method")?;
            for (t, stage) in policy.stages().iter().enumerate() {
                for (node, d) in stage.diagnostics.iter().enumerate() {
                    writeln!(
                        w,
                        "{t},{node},{},{},{},{},{},{:?}",
                        d.iterations,
                        d.residual,
                        d.converged_runs,
                        d.distinct_fixed_points,
                        d.ties.len(),
                        d.method
                    )?;
                }
            }
            w.flush()?;
        }
        println!(
            "solved {} stages on {} nodes: max iterations {iters}, max residual {resid:e}, {multi} multi-equilibrium stages",
            policy.num_stages(),
            grid.num_nodes()
        );
        Ok(policy)
    }

    fn solve_infinite_policy(&mut self, game: &Game, history: bool) -> Result<PolicyTable> {
        let grid = self.cfg.grid_for(game)?;
        let sol = solve_infinite(game, &grid, &self.cfg.fixed_point, &self.cfg.infinite)?;
        self.residual("value_residual", sol.value_residual);
        self.residual("prescription_residual", sol.prescription_residual);
        self.residual("sweeps", sol.sweeps as f64);
        self.residual("outer_iterations", sol.outer_iterations as f64);
        self.residual("contraction_ratio", sol.contraction_ratio);
        if history {
            let mut w = self.create("history.csv")?;
            writeln!(w, "iteration,value_residual,prescription_residual")?;
            for (k, (v, p)) in sol.history.iter().enumerate() {
                writeln!(w, "{k},{v},{p}")?;
            }
            w.flush()?;
        }
        println!(
            "stationary policy after {} sweeps: value residual {:e}, prescription residual {:e}",
            sol.sweeps, sol.value_residual, sol.prescription_residual
        );
        Ok(sol.policy)
    }

    fn solve(&mut self, game: &Game) -> Result<PolicyTable> {
        match game.model().horizon() {
            Horizon::Finite(_) => self.solve_finite_policy(game, false),
            Horizon::Infinite => self.solve_infinite_policy(game, false),
        }
    }

    fn policy(&mut self, game: &Game) -> Result<PolicyTable> {
        let policy = match &self.args.policy_in {
            Some(p) => PolicyTable::read(File::open(p)?, game)?,
            None => self.solve(game)?,
        };
        self.write_policy(&policy, game, None)?;
        Ok(policy)
    }

    fn steps(&self, game: &Game) -> usize {
        match game.model().horizon() {
            Horizon::Finite(t) => t,
            Horizon::Infinite => self.cfg.report_steps,
        }
    }
}

pub fn run(command: &str, args: &Common) -> Result<bool> {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&args.config)?;
    let threads = match args.threads.or(cfg.threads) {
        Some(0) => return Err(config_error("threads", "must be positive")),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| config_error("threads", &e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    let mut run = Run {
        args,
        cfg,
        artifacts: Vec::new(),
        residuals: BTreeMap::new(),
        graphons: Vec::new(),
    };
    let passed = pool.install(|| dispatch(command, &mut run))?;
    Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: args.config.display().to_string(),
        config_hash: run.cfg.hash().to_string(),
        seed: run.cfg.seed,
        threads,
        graphons: run.graphons,
        artifacts: run.artifacts,
        residuals: run.residuals,
        passed,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
    .write(&args.out)?;
    Ok(passed.unwrap_or(true))
}

fn dispatch(command: &str, run: &mut Run) -> Result<Option<bool>> {
    if command == "figures" {
        return figures(run).map(|_| None);
    }
    let game = match command {
        "solve-infinite" => Game::new(
            run.cfg.model_with(Horizon::Infinite)?,
            run.cfg.graphon()?,
            run.cfg.reduction,
        )?,
        _ => run.cfg.game()?,
    };
    run.graphons.push(game.graphon().label());
    match command {
        "solve-finite" => {
            if game.model().horizon() == Horizon::Infinite {
                return Err(config_error("horizon", "solve-finite needs a finite horizon"));
            }
            let policy = run.solve_finite_policy(&game, true)?;
            run.write_policy(&policy, &game, Some("policy.csv"))?;
            Ok(None)
        }
        "solve-infinite" => {
            let policy = run.solve_infinite_policy(&game, true)?;
            run.write_policy(&policy, &game, Some("policy.csv"))?;
            Ok(None)
        }
        "verify" => verify(run, &game).map(Some),
        "trajectory" => {
            let policy = run.policy(&game)?;
            let mu0 = run.cfg.initial_state(&game)?;
            let path = trajectory(&game, &mu0, &policy, run.steps(&game))?;
            let mut w = run.create("trajectory.csv")?;
            write_trajectory_csv(&mut w, &game, &path)?;
            w.flush()?;
            Ok(None)
        }
        "nsim" => nsim(run, &game).map(|_| None),
        other => unreachable!("unknown command {other}"),
    }
}

fn kind_name(k: ViolationKind) -> &'static str {
    match k {
        ViolationKind::Prescription => "prescription",
        ViolationKind::Value => "value",
    }
}

fn verify(run: &mut Run, game: &Game) -> Result<bool> {
    let policy = run.policy(game)?;
    let mu0 = run.cfg.initial_state(game)?;
    let report_steps = matches!(game.model().horizon(), Horizon::Infinite).then_some(run.cfg.report_steps);
    let gap = equilibrium_gap(game, &policy, &mu0, 0, report_steps)?;
    let mut w = run.create("gap.csv")?;
    gap.write_csv(&mut w, game)?;
    w.flush()?;
    let scan = converse_scan(game, &policy, policy.config().tol)?;
    let states = game.model().states();
    let mut w = run.create("violations.csv")?;
    writeln!(w, "t,node,class,state,kind,magnitude")?;
    for v in &scan.violations {
        writeln!(w, "{},{},{},{},{},{}", v.t, v.node, v.class, states[v.state], kind_name(v.kind), v.magnitude)?;
    }
    w.flush()?;
    run.residual("max_gap", gap.max_gap);
    run.residual("interpolation_error", gap.interpolation_error);
    run.residual("tail_bound", gap.tail_bound);
    run.residual("max_prescription_residual", scan.max_prescription_residual);
    run.residual("max_value_residual", scan.max_value_residual);
    run.residual("violations", scan.violations.len() as f64);
    println!("{}", gap.summary_line());
    println!(
        "scan_status={} checked={} violations={} ties={}",
        if scan.passes() { "pass" } else { "fail" },
        scan.checked,
        scan.violations.len(),
        scan.ties.len()
    );
    Ok(gap.passes() && scan.passes())
}

fn nsim(run: &mut Run, game: &Game) -> Result<()> {
    let settings = run.cfg.nsim.clone();
    let steps = settings.steps;
    if let Horizon::Finite(t) = game.model().horizon() {
        if steps > t {
            return Err(config_error("nsim.steps", "exceeds the horizon"));
        }
    }
    let policy = run.policy(game)?;
    let mu0 = run.cfg.initial_state(game)?;
    let seed = run.cfg.seed;
    let net = sample_network(game.graphon(), settings.agents, seed, settings.placement)?;
    let out = simulate(game, &net, &policy, &mu0, settings.assignment, steps, seed)?;
    let mf = trajectory(game, &mu0, &policy, steps)?;
    let gap = mf_gap(&out.empirical, &mf)?;
    match settings.output {
        NsimOutput::Agents => {
            let mut w = run.create("agents.csv")?;
            write_agents_csv(&mut w, game, &out)?;
            w.flush()?;
        }
        NsimOutput::Aggregate => {
            let mut w = run.create("aggregate.csv")?;
            write_aggregate_csv(&mut w, game, &out)?;
            w.flush()?;
        }
    }
    let mut w = run.create("mf_gap.csv")?;
    writeln!(w, "t,gap")?;
    for (t, g) in gap.per_t.iter().enumerate() {
        writeln!(w, "{t},{g}")?;
    }
    w.flush()?;
    run.residual("max_mf_gap", gap.max);
    run.residual("edge_density", net.density());
    println!("simulated {} agents for {steps} steps: max mean-field gap {:e}", net.len(), gap.max);
    Ok(())
}

fn population_mass(game: &Game, mu: &PopulationState, x: usize) -> f64 {
    game.groups().iter().enumerate().map(|(i, g)| g.weight * mu.class(i)[x]).sum()
}

fn with_mass(game: &Game, x: usize, m: f64) -> Result<PopulationState> {
    let mut dist = vec![0.0; 2];
    dist[x] = m;
    dist[1 - x] = 1.0 - m;
    PopulationState::uniform_classes(game.num_classes(), dist)
}

fn figures(run: &mut Run) -> Result<()> {
    let cfg = &run.cfg;
    if cfg.states.len() != 2 {
        return Err(config_error("states", "figures need a two-state model"));
    }
    let state = match &cfg.figures.state {
        Some(s) => cfg.state_index(s).ok_or_else(|| config_error("figures.state", "unknown state"))?,
        None => cfg.state_index("infected").unwrap_or(1),
    };
    let action = match &cfg.figures.action {
        Some(a) => cfg.action_index(a).ok_or_else(|| config_error("figures.action", "unknown action"))?,
        None => cfg.action_index("repair").unwrap_or(cfg.actions.len() - 1),
    };
    let horizon = cfg.horizon;
    let steps = cfg.figures.steps.unwrap_or(match horizon {
        Horizon::Finite(t) => t,
        Horizon::Infinite => 50,
    });
    if let Horizon::Finite(t) = horizon {
        if steps > t {
            return Err(config_error("figures.steps", "exceeds the horizon"));
        }
    }
    let graphons: Vec<Graphon> = cfg.figure_graphons()?;
    let resolution = cfg.resolution;
    let (mut policy_rows, mut map_rows, mut path_rows) = (Vec::new(), Vec::new(), Vec::new());
    for g in graphons {
        let label = g.label();
        let game = Game::new(run.cfg.model()?, g, run.cfg.reduction)?;
        let policy = run.solve(&game)?;
        for k in 0..resolution {
            let m = k as f64 / (resolution - 1) as f64;
            let mu = with_mass(&game, state, m)?;
            let gamma = policy.prescription(&game, 0, &mu)?;
            let p: f64 = game
                .groups()
                .iter()
                .enumerate()
                .map(|(i, grp)| grp.weight * gamma.prob(i, state, action))
                .sum();
            policy_rows.push(format!("{m},{label},{p}"));
            let next = propagate(&game, &mu, &gamma)?;
            map_rows.push(format!("{m},{label},{}", population_mass(&game, &next, state)));
        }
        let path = trajectory(&game, &with_mass(&game, state, 0.5)?, &policy, steps)?;
        for (t, mu) in path.iter().enumerate() {
            path_rows.push(format!("{t},{label},{}", population_mass(&game, mu, state)));
        }
        run.graphons.push(label);
    }
    let state_name = run.cfg.states[state].clone();
    for (file, header, rows) in [
        ("figure_policy.csv", format!("mu_{state_name},graphon,action_prob"), policy_rows),
        ("figure_evolution.csv", "mu_t,graphon,mu_t1".to_string(), map_rows),
        ("figure_paths.csv", format!("t,graphon,mu_{state_name}"), path_rows),
    ] {
        let mut w = run.create(file)?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
    }
    Ok(())
}
