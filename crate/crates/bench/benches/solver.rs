use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fracflow::constitutive::{ConstitutiveModel, VanGenuchtenParams};
use fracflow::linalg::{LinearSolverKind, SparseSolver};
use fracflow::timestep::{picard_solve, ImplicitProblem};
use fracflow_bench::{effective_fixture, epsilon_fixture};

fn kirchhoff(c: &mut Criterion) {
    let model = ConstitutiveModel::van_genuchten(VanGenuchtenParams::silt_loam()).unwrap();
    let heads: Vec<f64> = (0..1000).map(|i| -40.0 + 45.0 * i as f64 / 999.0).collect();
    let potentials: Vec<_> = heads.iter().map(|&p| model.kirchhoff(p).unwrap()).collect();
    c.bench_function("kirchhoff forward x1000", |b| {
        b.iter(|| heads.iter().map(|&p| model.kirchhoff(black_box(p)).unwrap().value()).sum::<f64>())
    });
    c.bench_function("kirchhoff inverse x1000", |b| {
        b.iter(|| potentials.iter().map(|&u| model.kirchhoff_inv(black_box(u)).unwrap()).sum::<f64>())
    });
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble epsilon-model");
    for n in [40, 80, 160] {
        let (config, problem, x0) = epsilon_fixture(0.01, n, n / 4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| problem.assemble(black_box(&x0), black_box(&x0), config.dt).unwrap())
        });
    }
    group.finish();
}

fn linear_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("direct solve");
    group.sample_size(20);
    for n in [40, 80, 160] {
        let (config, problem, x0) = epsilon_fixture(0.01, n, n / 4).unwrap();
        let sys = problem.assemble(&x0, &x0, config.dt).unwrap();
        let mut solver = SparseSolver::new(LinearSolverKind::Direct);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| solver.solve(black_box(&sys)).unwrap()));
    }
    group.finish();
}

fn time_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("first time step");
    group.sample_size(10);
    let (config, problem, x0) = epsilon_fixture(0.01, 80, 20).unwrap();
    group.bench_function("epsilon-model 80", |b| {
        b.iter(|| {
            let mut solver = SparseSolver::new(config.picard.linear_solver);
            picard_solve(&problem, &x0, config.dt, 1, &config.picard, &mut solver).unwrap()
        })
    });
    let (config, problem, x0) = effective_fixture(80).unwrap();
    group.bench_function("effective model I 80", |b| {
        b.iter(|| {
            let mut solver = SparseSolver::new(config.picard.linear_solver);
            picard_solve(&problem, &x0, config.dt, 1, &config.picard, &mut solver).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, kirchhoff, assembly, linear_solve, time_step);
criterion_main!(benches);
