use criterion::{criterion_group, criterion_main, Criterion};

use mfgc_core::drift::{solve_fv_level, Kernel, KernelShape, KernelVariant};
use mfgc_core::fp::assemble_fp;
use mfgc_core::hjb::{assemble_jacobian, hjb_step};
use mfgc_core::linalg::BandedLu;
use mfgc_core::outer::{apply_a, residual_g, OuterState};
use mfgc_core::scenarios::example1;
use mfgc_core::{ScalarField, VectorField};

fn bench_pipeline(cr: &mut Criterion) {
    let mut cfg = example1();
    cfg.nu = 0.3;
    let p = cfg.build().unwrap();
    let g = p.grid.clone();
    let st = OuterState::initial_guess(&p);

    let u = ScalarField::from_fn(&g, |i, j| {
        let [x1, x2] = g.x(i, j);
        (2.0 * x1).sin() + 0.5 * x1 * x2
    });
    let v = VectorField::from_fn(&g, |i, j| {
        let [x1, x2] = g.x(i, j);
        [0.3 * x2.cos(), 0.2 * (3.0 * x1).sin()]
    });
    let m = ScalarField::from_fn(&g, |i, j| {
        let [x1, x2] = g.x(i, j);
        (-(x1 * x1 + x2 * x2) / 0.1).exp() + 1e-3
    });

    cr.bench_function("hjb jacobian assembly 26x26", |b| {
        b.iter(|| assemble_jacobian(&g, &u, &v, &p.ham, p.nu, &p.ubc))
    });
    cr.bench_function("banded lu factor+solve 26x26", |b| {
        let jac = assemble_jacobian(&g, &u, &v, &p.ham, p.nu, &p.ubc);
        b.iter(|| BandedLu::factor(&jac).unwrap().solve(&m.data))
    });
    cr.bench_function("hjb newton step 26x26", |b| {
        b.iter(|| hjb_step(&g, &u, &p.f0, &v, &p.ham, p.nu, &p.ubc, &p.hjb_cfg).unwrap())
    });
    cr.bench_function("fp assembly 26x26", |b| {
        b.iter(|| assemble_fp(&g, &u, &v, &p.ham, p.nu, &p.mbc))
    });
    cr.bench_function("kernel build rho=0.2 26x26", |b| {
        b.iter(|| {
            Kernel::build(
                &g,
                KernelShape { variant: KernelVariant::Radial, rho: 0.2, omega0: 0.0 },
            )
        })
    });
    cr.bench_function("drift sweep 26x26", |b| {
        b.iter(|| solve_fv_level(&g, &u, &m, &v, &p.kernel, &p.ham, &p.drift))
    });
    cr.bench_function("outer residual 26x26x26", |b| {
        b.iter(|| residual_g(&p, &st).unwrap())
    });
    cr.bench_function("outer jacobian apply 26x26x26", |b| {
        let (_, base) = residual_g(&p, &st).unwrap();
        let n = OuterState::dof(&g);
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 101.0 - 0.5).collect();
        let mut y = vec![0.0; n];
        b.iter(|| apply_a(&p, &st, &base, &x, &mut y))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_pipeline
}
criterion_main!(benches);
