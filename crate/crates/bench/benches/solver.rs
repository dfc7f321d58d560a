use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmfe::dynamics::{propagate, PopulationState, Prescription};
use gmfe::malware::{MalwareParams, NO_REPAIR};
use gmfe::mfgrid::{ValueTable, DEFAULT_NODE_BUDGET};
use gmfe::nsim::{InitialAssignment, Placement};
use gmfe::{
    equilibrium_gap, sample_network, simulate, solve_finite, stage_fixed_point, ConstantPolicy, FixedPointConfig,
    Game, Graphon, Horizon, MeanFieldGrid, Reduction,
};

fn game(g: Graphon, horizon: usize, reduction: Reduction) -> Game {
    let model = MalwareParams::default().build(Horizon::Finite(horizon), 0.9).unwrap();
    Game::new(model, g, reduction).unwrap()
}

fn grid(game: &Game, resolution: usize) -> MeanFieldGrid {
    MeanFieldGrid::new(game.num_classes(), game.num_states(), resolution, DEFAULT_NODE_BUDGET).unwrap()
}

fn bench_propagate(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagate");
    for m in [1usize, 4, 16] {
        let g = game(Graphon::stochastic_block(0.9, 0.4, 0.3, m).unwrap(), 1, Reduction::Full);
        let mu = PopulationState::uniform_classes(g.num_classes(), vec![0.6, 0.4]).unwrap();
        let gamma = Prescription::uniform(g.num_classes(), 2, 2);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| propagate(&g, black_box(&mu), &gamma).unwrap())
        });
    }
    group.finish();
}

fn bench_stage(c: &mut Criterion) {
    let g = game(Graphon::erdos_renyi(0.8, 64).unwrap(), 10, Reduction::Auto);
    let grid = grid(&g, 101);
    let v_next = ValueTable::from_fn(&grid, |node, _, x| -(x as f64) * (1.0 + node as f64 / 100.0));
    let mu = PopulationState::uniform_classes(1, vec![0.5, 0.5]).unwrap();
    let cfg = FixedPointConfig::default();
    c.bench_function("stage_fixed_point", |b| {
        b.iter(|| stage_fixed_point(&g, &grid, black_box(&mu), &v_next, &cfg, None, 0).unwrap())
    });
}

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_finite");
    group.sample_size(10);
    for resolution in [21usize, 101] {
        let g = game(Graphon::complete(64).unwrap(), 5, Reduction::Auto);
        let grid = grid(&g, resolution);
        let cfg = FixedPointConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(resolution), &resolution, |b, _| {
            b.iter(|| solve_finite(&g, &grid, &cfg, None).unwrap())
        });
    }
    group.finish();
}

fn bench_gap(c: &mut Criterion) {
    let g = game(Graphon::random_geometric(1.0, 64).unwrap(), 10, Reduction::Auto);
    let grid = grid(&g, 101);
    let policy = solve_finite(&g, &grid, &FixedPointConfig::default(), None).unwrap();
    let mu = PopulationState::uniform_classes(1, vec![0.5, 0.5]).unwrap();
    c.bench_function("equilibrium_gap", |b| {
        b.iter(|| equilibrium_gap(&g, &policy, black_box(&mu), 0, None).unwrap())
    });
}

fn bench_nsim(c: &mut Criterion) {
    let mut group = c.benchmark_group("nsim");
    group.sample_size(10);
    let g = game(Graphon::erdos_renyi(0.8, 64).unwrap(), 5, Reduction::Auto);
    let never = ConstantPolicy(Prescription::pure(1, 2, 2, NO_REPAIR));
    let mu = PopulationState::uniform_classes(1, vec![0.5, 0.5]).unwrap();
    for n in [1000usize, 4000] {
        group.bench_with_input(BenchmarkId::new("sample_network", n), &n, |b, &n| {
            b.iter(|| sample_network(g.graphon(), n, 1, Placement::Uniform).unwrap())
        });
        let net = sample_network(g.graphon(), n, 1, Placement::Uniform).unwrap();
        group.bench_with_input(BenchmarkId::new("simulate", n), &n, |b, _| {
            b.iter(|| simulate(&g, &net, &never, &mu, InitialAssignment::Exact, 5, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_propagate, bench_stage, bench_solve, bench_gap, bench_nsim);
criterion_main!(benches);
