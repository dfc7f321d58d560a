mod common;

use gmfe::dynamics::{propagate, trajectory, ConstantPolicy, PopulationState, Prescription};
use gmfe::graphon::{Graphon, GraphonKind};
use gmfe::malware::{HEALTHY, INFECTED, NO_REPAIR, REPAIR};
use gmfe::model::{check_assumptions, CheckStatus};
use gmfe::{Game, Horizon, ModelBuilder, Reduction, RewardRule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{infected, malware_game, random_distribution, random_model, random_prescription};

fn complete() -> Game {
    malware_game(&Graphon::complete(64).unwrap(), Horizon::Finite(10))
}

#[test]
fn aggregate_examples() {
    let game = complete();
    assert!((game.aggregate(&infected(1.0), 0, HEALTHY, NO_REPAIR).unwrap() - 0.9).abs() < 1e-15);
    assert!((game.aggregate(&infected(0.5), 0, HEALTHY, NO_REPAIR).unwrap() - 0.45).abs() < 1e-15);
    let brute: f64 = [(0.5, 0.0), (0.5, 0.9)].iter().map(|(mass, f)| mass * f).sum();
    assert!((game.aggregate(&infected(0.5), 0, HEALTHY, NO_REPAIR).unwrap() - brute).abs() < 1e-15);
}

#[test]
fn zero_interaction_has_zero_aggregate() {
    let model = ModelBuilder::new(["a", "b"], ["stay"])
        .local(vec![vec![0.3], vec![0.0]])
        .kernel(gmfe::KernelRule::BernoulliJump {
            stay: vec![vec![0], vec![1]],
            jump: vec![vec![1], vec![1]],
        })
        .reward(RewardRule::Table(vec![vec![0.0], vec![1.0]]))
        .discount(0.9)
        .horizon(Horizon::Finite(2))
        .build()
        .unwrap();
    let game = Game::new(model, Graphon::complete(8).unwrap(), Reduction::Auto).unwrap();
    for m in [0.0, 0.3, 1.0] {
        assert_eq!(game.aggregate(&infected(m), 0, 0, 0).unwrap(), 0.0);
        assert_eq!(game.kernel(&infected(m), 0, 0, 0).unwrap(), vec![0.7, 0.3]);
    }
}

#[test]
fn kernel_examples() {
    let game = complete();
    for m in [0.0, 0.25, 0.5, 1.0] {
        let mu = infected(m);
        assert_eq!(game.kernel(&mu, 0, HEALTHY, REPAIR).unwrap(), vec![1.0, 0.0]);
        assert_eq!(game.kernel(&mu, 0, INFECTED, REPAIR).unwrap(), vec![1.0, 0.0]);
        assert_eq!(game.kernel(&mu, 0, INFECTED, NO_REPAIR).unwrap(), vec![0.0, 1.0]);
    }
    let q = game.kernel(&infected(0.5), 0, HEALTHY, NO_REPAIR).unwrap();
    assert!((q[0] - 0.55).abs() < 1e-15 && (q[1] - 0.45).abs() < 1e-15);
}

#[test]
fn malware_assumption_report() {
    let report = check_assumptions(&complete().model().clone());
    assert_eq!(report.get("A1").unwrap().status, CheckStatus::Pass);
}

#[test]
fn unbounded_reward_is_rejected() {
    let built = ModelBuilder::new(["a", "b"], ["x"])
        .interaction(vec![vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]])
        .kernel(gmfe::KernelRule::Affine {
            base: vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            slope: vec![vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]],
        })
        .reward(RewardRule::Custom(std::sync::Arc::new(|_, _, d: f64| 1.0 / d)))
        .discount(0.9)
        .horizon(Horizon::Finite(2))
        .build();
    assert!(built.is_err());
}

#[test]
fn propagate_examples() {
    let game = complete();
    let always = Prescription::pure(1, 2, 2, REPAIR);
    let never = Prescription::pure(1, 2, 2, NO_REPAIR);
    for m in [0.0, 0.3, 0.5, 1.0] {
        assert_eq!(propagate(&game, &infected(m), &always).unwrap().class(0)[HEALTHY], 1.0);
    }
    let next = propagate(&game, &infected(0.5), &never).unwrap();
    assert!((next.class(0)[INFECTED] - 0.725).abs() < 1e-15);
    let point = PopulationState::point_mass(1, 2, HEALTHY);
    let next = propagate(&game, &point, &never).unwrap();
    assert_eq!(next.class(0), game.kernel(&point, 0, HEALTHY, NO_REPAIR).unwrap().as_slice());
}

#[test]
fn trajectory_examples() {
    let game = complete();
    let never = ConstantPolicy(Prescription::pure(1, 2, 2, NO_REPAIR));
    let always = ConstantPolicy(Prescription::pure(1, 2, 2, REPAIR));
    let mu0 = infected(0.5);
    assert_eq!(trajectory(&game, &mu0, &never, 0).unwrap().len(), 1);
    let path = trajectory(&game, &mu0, &never, 2).unwrap();
    assert!((path[1].class(0)[INFECTED] - 0.725).abs() < 1e-15);
    assert!((path[2].class(0)[INFECTED] - 0.9044375).abs() < 1e-14);
    let healed = trajectory(&game, &mu0, &always, 4).unwrap();
    assert!(healed[1..].iter().all(|mu| mu.class(0) == [1.0, 0.0]));
}

#[test]
fn never_repair_matches_single_node_monte_carlo() {
    let game = complete();
    let never = Prescription::pure(1, 2, 2, NO_REPAIR);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1_000_000;
    let infected_next = (0..n)
        .filter(|_| {
            let x = if rng.gen_bool(0.5) { INFECTED } else { HEALTHY };
            x == INFECTED || rng.gen_bool(0.45)
        })
        .count() as f64
        / n as f64;
    let exact = propagate(&game, &infected(0.5), &never).unwrap().class(0)[INFECTED];
    assert!((infected_next - exact).abs() <= 3.0 * (exact * (1.0 - exact) / n as f64).sqrt());
}

#[test]
fn frozen_flow_monte_carlo_agrees_with_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = random_model(&mut rng, 3, 2, Horizon::Finite(5), 0.9);
    let game = Game::new(model, Graphon::erdos_renyi(0.6, 8).unwrap(), Reduction::Auto).unwrap();
    let gamma = Prescription::new(random_prescription(&mut rng, 1, 3, 2)).unwrap();
    let mut mu = PopulationState::new(vec![vec![0.5, 0.3, 0.2]]).unwrap();
    let agents = 100_000;
    let mut states: Vec<usize> = (0..agents)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < 0.5 {
                0
            } else if u < 0.8 {
                1
            } else {
                2
            }
        })
        .collect();
    for _ in 0..5 {
        let kernels: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|x| (0..2).map(|a| game.kernel(&mu, 0, x, a).unwrap()).collect())
            .collect();
        for s in states.iter_mut() {
            let a = usize::from(rng.gen::<f64>() >= gamma.prob(0, *s, 0));
            let u: f64 = rng.gen();
            let row = &kernels[*s][a];
            *s = (0..3).find(|&y| u < row[..=y].iter().sum::<f64>()).unwrap_or(2);
        }
        mu = propagate(&game, &mu, &gamma).unwrap();
        for y in 0..3 {
            let p = mu.class(0)[y];
            let freq = states.iter().filter(|&&s| s == y).count() as f64 / agents as f64;
            let band = 3.0 * (p * (1.0 - p) / agents as f64).sqrt();
            assert!((freq - p).abs() <= band.max(1e-12), "state {y}: {freq} vs {p}");
        }
    }
}

#[test]
fn full_ensembles_of_equivalent_graphons_stay_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for g in [
        Graphon::complete(6).unwrap(),
        Graphon::erdos_renyi(0.8, 6).unwrap(),
        Graphon::stochastic_block(0.9, 0.4, 0.5, 6).unwrap(),
        Graphon::random_geometric(1.0, 6).unwrap(),
    ] {
        let model = random_model(&mut rng, 3, 2, Horizon::Finite(5), 0.9);
        let game = Game::new(model, g, Reduction::Full).unwrap();
        let row = random_prescription(&mut rng, 1, 3, 2).remove(0);
        let gamma = Prescription::new(vec![row; 6]).unwrap();
        let mut mu = PopulationState::uniform_classes(6, random_distribution(&mut rng, 3)).unwrap();
        for _ in 0..10 {
            mu = propagate(&game, &mu, &gamma).unwrap();
            for i in 1..6 {
                for x in 0..3 {
                    assert!((mu.class(i)[x] - mu.class(0)[x]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn kernel_sweep_gives_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tuples = 0;
    while tuples < 10_000 {
        let nx = rng.gen_range(1..=4);
        let na = rng.gen_range(1..=3);
        let model = random_model(&mut rng, nx, na, Horizon::Finite(3), 0.9);
        let m = rng.gen_range(1..=6);
        let g = Graphon::new(GraphonKind::ErdosRenyi { p: rng.gen() }, m).unwrap();
        let game = Game::new(model, g, Reduction::Full).unwrap();
        for _ in 0..20 {
            let dists = (0..m).map(|_| random_distribution(&mut rng, nx)).collect();
            let mu = PopulationState::new(dists).unwrap();
            let i = rng.gen_range(0..m);
            let (x, a) = (rng.gen_range(0..nx), rng.gen_range(0..na));
            let q = game.kernel(&mu, i, x, a).unwrap();
            assert!(q.iter().all(|&p| p >= 0.0));
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            tuples += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_preserves_the_simplex(seed in any::<u64>(), m in 1usize..6, nx in 1usize..4, na in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, nx, na, Horizon::Finite(3), 0.9);
        let g = Graphon::new(GraphonKind::StochasticBlock { p_in: rng.gen(), q_out: rng.gen(), cut: rng.gen() }, m).unwrap();
        let game = Game::new(model, g, Reduction::Full).unwrap();
        let mut mu = PopulationState::new((0..m).map(|_| random_distribution(&mut rng, nx)).collect()).unwrap();
        for _ in 0..5 {
            let gamma = Prescription::new(random_prescription(&mut rng, m, nx, na)).unwrap();
            mu = propagate(&game, &mu, &gamma).unwrap();
            for i in 0..m {
                prop_assert!(mu.class(i).iter().all(|&p| p >= 0.0));
                prop_assert!((mu.class(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_is_linear_in_the_population(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, nx, na) = (4, 3, 2);
        let model = random_model(&mut rng, nx, na, Horizon::Finite(3), 0.9);
        let game = Game::new(model, Graphon::random_geometric(1.0, m).unwrap(), Reduction::Full).unwrap();
        let a: Vec<Vec<f64>> = (0..m).map(|_| random_distribution(&mut rng, nx)).collect();
        let b: Vec<Vec<f64>> = (0..m).map(|_| random_distribution(&mut rng, nx)).collect();
        let mix: Vec<Vec<f64>> = a.iter().zip(&b)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect())
            .collect();
        let (a, b, mix) = (
            PopulationState::new(a).unwrap(),
            PopulationState::new(b).unwrap(),
            PopulationState::new(mix).unwrap(),
        );
        for i in 0..m {
            for x in 0..nx {
                for act in 0..na {
                    let lhs = game.aggregate(&mix, i, x, act).unwrap();
                    let rhs = lambda * game.aggregate(&a, i, x, act).unwrap()
                        + (1.0 - lambda) * game.aggregate(&b, i, x, act).unwrap();
                    prop_assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_graphon_kernel_ignores_the_population(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nx, na) = (3, 2);
        let model = random_model(&mut rng, nx, na, Horizon::Finite(3), 0.9);
        let game = Game::new(model, Graphon::erdos_renyi(0.0, 4).unwrap(), Reduction::Full).unwrap();
        let m1 = PopulationState::new((0..4).map(|_| random_distribution(&mut rng, nx)).collect()).unwrap();
        let m2 = PopulationState::new((0..4).map(|_| random_distribution(&mut rng, nx)).collect()).unwrap();
        for i in 0..4 {
            for x in 0..nx {
                for a in 0..na {
                    prop_assert_eq!(game.kernel(&m1, i, x, a).unwrap(), game.kernel(&m2, i, x, a).unwrap());
                }
            }
        }
    }
}
