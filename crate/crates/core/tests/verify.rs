mod common;

use gmfe::dynamics::{PopulationState, Prescription};
use gmfe::finite::{solve_finite, FixedPointConfig};
use gmfe::graphon::Graphon;
use gmfe::infinite::{solve_infinite, InfiniteConfig};
use gmfe::malware::{study_graphons, HEALTHY, INFECTED, NO_REPAIR, REPAIR};
use gmfe::policy::PolicyTable;
use gmfe::verify::{
    best_response_value, converse_scan, equilibrium_gap, policy_value, truncation_length, ViolationKind, TAIL_TOLERANCE,
};
use gmfe::{Game, Horizon, KernelRule, ModelBuilder, Reduction, RewardRule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{grid_for, infected, malware_game, random_distribution, random_model, random_prescription, DELTA};

fn absorbing(horizon: usize) -> Game {
    let model = ModelBuilder::new(["healthy", "infected"], ["no_repair"])
        .interaction(vec![vec![vec![0.0, 0.9]], vec![vec![0.0, 0.9]]])
        .kernel(KernelRule::BernoulliJump {
            stay: vec![vec![0], vec![1]],
            jump: vec![vec![1], vec![1]],
        })
        .reward(RewardRule::Table(vec![vec![0.0], vec![-0.3]]))
        .discount(DELTA)
        .horizon(Horizon::Finite(horizon))
        .build()
        .unwrap();
    Game::new(model, Graphon::complete(64).unwrap(), Reduction::Auto).unwrap()
}

fn solved(g: &Graphon, horizon: usize, resolution: usize, cfg: &FixedPointConfig) -> (Game, PolicyTable) {
    let game = malware_game(g, Horizon::Finite(horizon));
    let grid = grid_for(&game, resolution);
    let policy = solve_finite(&game, &grid, cfg, None).unwrap();
    (game, policy)
}

fn rewrite_row(game: &Game, policy: &PolicyTable, edit: impl Fn(&[&str]) -> Option<String>) -> PolicyTable {
    let mut buf = Vec::new();
    policy.write(&mut buf, game).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with('#') || l.starts_with("t,") {
                return l.to_string();
            }
            let cols: Vec<&str> = l.split(',').collect();
            edit(&cols).unwrap_or_else(|| l.to_string())
        })
        .collect();
    PolicyTable::read(lines.join("\n").as_bytes(), game).unwrap()
}

#[test]
fn one_period_best_response_is_the_reward_maximum() {
    let game = malware_game(&Graphon::complete(64).unwrap(), Horizon::Finite(1));
    for m in [0.0, 0.4, 1.0] {
        let mu = infected(m);
        let path = vec![mu.clone(), mu];
        let w = best_response_value(&game, &path, &[0.0, 0.0]).unwrap();
        assert_eq!(w[0][INFECTED], -0.3);
        assert_eq!(w[0][HEALTHY], 0.0);
    }
}

#[test]
fn absorbing_chain_has_geometric_value() {
    for horizon in [1, 5, 20] {
        let game = absorbing(horizon);
        let path = vec![infected(1.0); horizon + 1];
        let w = best_response_value(&game, &path, &[0.0, 0.0]).unwrap();
        let want = -0.3 * (1.0 - DELTA.powi(horizon as i32)) / (1.0 - DELTA);
        assert!((w[0][INFECTED] - want).abs() < 1e-12);
    }
}

#[test]
fn single_action_game_has_zero_gap() {
    let game = absorbing(6);
    let grid = grid_for(&game, 21);
    let policy = solve_finite(&game, &grid, &FixedPointConfig::default(), None).unwrap();
    let report = equilibrium_gap(&game, &policy, &infected(0.3), 0, None).unwrap();
    assert_eq!(report.max_gap, 0.0);
}

#[test]
fn short_horizon_gap_is_tiny() {
    let (game, policy) = solved(&Graphon::complete(64).unwrap(), 3, 101, &FixedPointConfig::default());
    let report = equilibrium_gap(&game, &policy, &infected(0.5), 0, None).unwrap();
    assert!(report.max_gap <= 1e-6 + report.interpolation_error);
}

#[test]
fn builtin_graphons_have_gaps_within_solver_tolerance() {
    let cfg = FixedPointConfig::default();
    for g in study_graphons(64) {
        let (game, policy) = solved(&g, 10, 51, &cfg);
        for m in [0.1, 0.5, 0.9] {
            let report = equilibrium_gap(&game, &policy, &infected(m), 0, None).unwrap();
            assert!(
                report.max_gap <= 10.0 * cfg.tol + report.interpolation_error,
                "{} from {m}: {:e}",
                g.label(),
                report.max_gap
            );
        }
    }
}

#[test]
fn stored_values_match_exact_policy_evaluation() {
    let (game, policy) = solved(&Graphon::erdos_renyi(0.8, 64).unwrap(), 10, 101, &FixedPointConfig::default());
    let grid = policy.grid();
    let mu0 = infected(0.5);
    let node = grid.node_of(&mu0).unwrap();
    let report = equilibrium_gap(&game, &policy, &mu0, 0, None).unwrap();
    let prescriptions: Vec<Prescription> = (0..10)
        .map(|t| policy.prescription_at(&game, t, &report.path[t]).unwrap())
        .collect();
    let exact = policy_value(&game, &report.path, &prescriptions, &[0.0, 0.0]).unwrap();
    for x in 0..2 {
        let stored = policy.stage(0).values.get(node, 0, x);
        assert!((exact[0][x] - stored).abs() <= report.interpolation_error + 1e-12);
    }
    assert!(report.interpolation_error < 1e-3);
}

#[test]
fn flipping_a_strict_prescription_gives_a_positive_gap() {
    let (game, policy) = solved(&Graphon::complete(64).unwrap(), 10, 21, &FixedPointConfig::default());
    let mu0 = infected(0.2);
    let node = policy.grid().node_of(&mu0).unwrap().to_string();
    assert_eq!(policy.stage(0).prescriptions[node.parse::<usize>().unwrap()].prob(0, INFECTED, REPAIR), 1.0);
    let corrupted = rewrite_row(&game, &policy, |c| {
        (c[0] == "0" && c[1] == node && c[3] == "infected")
            .then(|| format!("{},{},{},{},{},1,0", c[0], c[1], c[2], c[3], c[4]))
    });
    let report = equilibrium_gap(&game, &corrupted, &mu0, 0, None).unwrap();
    let cell = report.rows.iter().find(|r| r.t == 0 && r.state == INFECTED).unwrap();
    assert!(cell.gap > 0.0);
    assert_eq!(corrupted.stage(0).prescriptions[node.parse::<usize>().unwrap()].prob(0, INFECTED, NO_REPAIR), 1.0);
}

#[test]
fn fresh_policy_passes_the_audit() {
    for g in study_graphons(64) {
        let (game, policy) = solved(&g, 10, 51, &FixedPointConfig::default());
        let scan = converse_scan(&game, &policy, 1e-8).unwrap();
        assert!(scan.passes(), "{}: {:?}", g.label(), &scan.violations[..scan.violations.len().min(3)]);
        assert_eq!(scan.checked, 10 * 51);
    }
}

#[test]
fn loose_solve_fails_a_tight_audit() {
    let cfg = FixedPointConfig {
        tol: 1e-4,
        ..FixedPointConfig::default()
    };
    let (game, policy) = solved(&Graphon::complete(64).unwrap(), 10, 51, &cfg);
    assert!(!converse_scan(&game, &policy, 1e-8).unwrap().violations.is_empty());
    assert!(converse_scan(&game, &policy, 1e-3).unwrap().violations.is_empty());
}

#[test]
fn perturbed_values_are_reported_where_perturbed() {
    let (game, policy) = solved(&Graphon::erdos_renyi(0.8, 64).unwrap(), 5, 21, &FixedPointConfig::default());
    let corrupted = rewrite_row(&game, &policy, |c| {
        (c[0] == "2" && c[1] == "7" && c[3] == "healthy").then(|| {
            let v: f64 = c[4].parse().unwrap();
            format!("{},{},{},{},{},{},{}", c[0], c[1], c[2], c[3], v + 1e-4, c[5], c[6])
        })
    });
    let scan = converse_scan(&game, &corrupted, 1e-8).unwrap();
    assert!(scan
        .violations
        .iter()
        .any(|v| v.t == 2 && v.node == 7 && v.state == HEALTHY && v.kind == ViolationKind::Value));
    assert!(scan.violations.iter().all(|v| v.t <= 2));
}

#[test]
fn audit_rejects_a_policy_for_another_game() {
    let (_, policy) = solved(&Graphon::complete(64).unwrap(), 3, 11, &FixedPointConfig::default());
    let other = malware_game(&Graphon::erdos_renyi(0.5, 64).unwrap(), Horizon::Finite(3));
    assert!(converse_scan(&other, &policy, 1e-8).is_err());
}

#[test]
fn infinite_horizon_gap_uses_a_short_tail() {
    let game = malware_game(&Graphon::complete(64).unwrap(), Horizon::Infinite);
    let grid = grid_for(&game, 51);
    let sol = solve_infinite(&game, &grid, &FixedPointConfig::default(), &InfiniteConfig::default()).unwrap();
    let report = equilibrium_gap(&game, &sol.policy, &infected(0.5), 0, Some(20)).unwrap();
    assert!(report.tail_bound < TAIL_TOLERANCE);
    let r = game.model().max_abs_reward();
    let t = truncation_length(DELTA, r, TAIL_TOLERANCE);
    assert!(2.0 * DELTA.powi(t as i32) * r / (1.0 - DELTA) < TAIL_TOLERANCE);
    assert!(2.0 * DELTA.powi(t as i32 - 1) * r / (1.0 - DELTA) >= TAIL_TOLERANCE);
    assert!(report.passes());
    assert_eq!(report.rows.iter().map(|row| row.t).max(), Some(20));
}

#[test]
fn gap_report_csv_and_summary() {
    let (game, policy) = solved(&Graphon::complete(64).unwrap(), 2, 11, &FixedPointConfig::default());
    let report = equilibrium_gap(&game, &policy, &infected(0.5), 0, None).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf, &game).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,class,state,V_policy,V_star,gap"));
    assert_eq!(lines.count(), report.rows.len());
    let summary = report.summary_line();
    assert!(summary.starts_with("gap_status=pass max_gap="));
    assert!(!summary.contains('\n'));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_response_dominates_any_markov_policy(seed in any::<u64>(), horizon in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nx, na) = (3, 3);
        let model = random_model(&mut rng, nx, na, Horizon::Finite(horizon), 0.9);
        let game = Game::new(model, Graphon::erdos_renyi(0.7, 4).unwrap(), Reduction::Auto).unwrap();
        let path: Vec<PopulationState> = (0..=horizon)
            .map(|_| PopulationState::new(vec![random_distribution(&mut rng, nx)]).unwrap())
            .collect();
        let prescriptions: Vec<Prescription> = (0..horizon)
            .map(|_| Prescription::new(random_prescription(&mut rng, 1, nx, na)).unwrap())
            .collect();
        let terminal = vec![0.0; nx];
        let w = best_response_value(&game, &path, &terminal).unwrap();
        let v = policy_value(&game, &path, &prescriptions, &terminal).unwrap();
        for t in 0..=horizon {
            for x in 0..nx {
                prop_assert!(w[t][x] >= v[t][x] - 1e-12);
            }
        }
    }
}

#[test]
fn never_repair_everywhere_is_not_an_equilibrium_from_half_infected() {
    let game = malware_game(&Graphon::complete(64).unwrap(), Horizon::Finite(4));
    let path: Vec<PopulationState> = {
        let never = gmfe::ConstantPolicy(Prescription::pure(1, 2, 2, NO_REPAIR));
        gmfe::trajectory(&game, &infected(0.5), &never, 4).unwrap()
    };
    let w = best_response_value(&game, &path, &[0.0, 0.0]).unwrap();
    let v = policy_value(&game, &path, &vec![Prescription::pure(1, 2, 2, NO_REPAIR); 4], &[0.0, 0.0]).unwrap();
    assert!(w[0][INFECTED] > v[0][INFECTED]);
}
