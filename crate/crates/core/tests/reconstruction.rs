use mreit::fem::NodalField;
use mreit::forward::{Drive, ElectrodeNodes, ForwardSolver};
use mreit::harmonic_bz::{reconstruct_bz, BzConfig, HarmonicBz, ReconstructionResult};
use mreit::mesh::{region_masks, standard_mesh, Mesh, RegionMasks};
use mreit::phantom::SmoothBumps;
use mreit::rbz::{reconstruct_rbz, relative_error, RbzConfig};
use mreit::reduced_basis::{error_estimate, init_space, solve_reduced, ReducedContext, DEFAULT_DROP_TOL};
use mreit::sparse::SolverOptions;
use mreit::synth::{synthesize_refined, LaplacianBzData};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk(n: usize) -> (Mesh, RegionMasks, LaplacianBzData) {
    let m = standard_mesh(n).unwrap();
    let masks = region_masks(&m, 0.95, 0.9).unwrap();
    let data = synthesize_refined(&m, &SmoothBumps::low_contrast(), 1, 1.0).unwrap();
    (m, masks, data)
}

fn random_sigma(rng: &mut ChaCha8Rng, len: usize) -> NodalField {
    NodalField((0..len).map(|_| rng.random_range(0.5..=2.0)).collect())
}

fn same_run(a: &ReconstructionResult, b: &ReconstructionResult) -> bool {
    a.sigma == b.sigma && a.history == b.history && a.iterations == b.iterations && a.forward_solves == b.forward_solves
}

#[test]
fn vector_field_is_masked_and_iterates_stay_positive() {
    let (m, masks, data) = desk(32);
    let bz = HarmonicBz::new(&m, &masks, &data, BzConfig::default()).unwrap();
    let mut sigma = NodalField::constant(m.num_nodes(), 1.0);
    for _ in 0..4 {
        let step = bz.step(&sigma).unwrap();
        for (t, v) in step.field.0.iter().enumerate() {
            if !masks.inner[t] {
                assert_eq!(*v, [0.0, 0.0]);
            }
        }
        sigma = step.log_sigma.map(f64::exp);
        assert!(sigma.0.iter().all(|&s| s > 0.0 && s.is_finite()));
    }
}

#[test]
fn runs_are_deterministic_and_thread_independent() {
    let (m, masks, data) = desk(32);
    let cfg = BzConfig::default();
    let a = reconstruct_bz(&m, &masks, &data, &cfg).unwrap();
    let b = reconstruct_bz(&m, &masks, &data, &cfg).unwrap();
    assert!(same_run(&a, &b));
    let par = BzConfig {
        parallel_drives: true,
        ..cfg
    };
    assert!(same_run(&a, &reconstruct_bz(&m, &masks, &data, &par).unwrap()));

    let rcfg = RbzConfig::default();
    let r1 = reconstruct_rbz(&m, &masks, &data, &rcfg).unwrap();
    let r2 = reconstruct_rbz(&m, &masks, &data, &RbzConfig { bz: par, ..rcfg }).unwrap();
    assert!(same_run(&r1.result, &r2.result));
    assert_eq!(r1.estimates, r2.estimates);
}

#[test]
fn rbz_with_zero_threshold_tracks_harmonic_bz() {
    let (m, masks, data) = desk(32);
    let bz = reconstruct_bz(&m, &masks, &data, &BzConfig::default()).unwrap();
    let cfg = RbzConfig {
        epsilon2: 0.0,
        ..RbzConfig::default()
    };
    let rbz = reconstruct_rbz(&m, &masks, &data, &cfg).unwrap();
    assert_eq!(rbz.result.iterations, bz.iterations);
    assert_eq!(rbz.basis_updates, bz.iterations);
    assert_eq!(rbz.full_solves, 2 * rbz.basis_updates);
    for (a, b) in rbz.result.history.iter().zip(&bz.history) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
    assert!(relative_error(&rbz.result.sigma, &bz.sigma) <= 1e-8);
}

#[test]
fn rbz_with_infinite_threshold_keeps_the_first_spaces() {
    let (m, masks, data) = desk(32);
    let cfg = RbzConfig {
        epsilon2: f64::INFINITY,
        ..RbzConfig::default()
    };
    let rbz = reconstruct_rbz(&m, &masks, &data, &cfg).unwrap();
    assert_eq!(rbz.basis_updates, 1);
    assert_eq!(rbz.full_solves, 2);
    // The snapshot at σ_b ≡ 1 coincides with the lifting, so nothing is added.
    assert_eq!(rbz.dims, [0, 0]);
    assert_eq!(rbz.result.forward_solves, 2);
}

#[test]
fn first_rbz_iteration_matches_harmonic_bz() {
    let (m, masks, data) = desk(32);
    let bz = reconstruct_bz(&m, &masks, &data, &BzConfig::default()).unwrap();
    let rbz = reconstruct_rbz(&m, &masks, &data, &RbzConfig::default()).unwrap();
    assert!((rbz.result.history[0] - bz.history[0]).abs() <= 1e-9);
    assert_eq!(rbz.full_solves, 2 * rbz.basis_updates);
    assert_eq!(rbz.update_iterations[0], 1);
}

#[test]
fn smallest_eigenvalue_matches_dense_pencil() {
    let m = standard_mesh(20).unwrap();
    let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
    let k = ctx.assembler().unit_stiffness().to_dense();
    let g = ctx.gram().to_dense();
    for drive in [Drive::One, Drive::Two] {
        let fixed: Vec<usize> = ElectrodeNodes::of(&m, drive).unwrap().all().collect();
        let free: Vec<usize> = (0..m.num_nodes()).filter(|i| !fixed.contains(i)).collect();
        let kf = DMatrix::from_fn(free.len(), free.len(), |a, b| k[(free[a], free[b])]);
        let gf = DMatrix::from_fn(free.len(), free.len(), |a, b| g[(free[a], free[b])]);
        let l = gf.cholesky().unwrap().l();
        let l_inv = l.clone().try_inverse().unwrap();
        let c = &l_inv * kf * l_inv.transpose();
        let lambda = c.symmetric_eigenvalues().min();
        let est = ctx.estimator(drive).lambda_min();
        assert!(est <= lambda && est >= lambda * (1.0 - 1e-5), "{est} vs {lambda}");
        assert!(ctx.estimator(drive).eigen_residual() < 1e-10);
    }
}

fn energy_error(m: &Mesh, sigma: &NodalField, exact: &NodalField, approx: &NodalField) -> f64 {
    let k = mreit::fem::assemble_stiffness(m, sigma).unwrap();
    let e: Vec<f64> = exact.0.iter().zip(&approx.0).map(|(a, b)| a - b).collect();
    k.bilinear(&e, &e).max(0.0).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn enrichment_is_nested_and_bounded(seed in any::<u64>()) {
        let m = standard_mesh(20).unwrap();
        let opts = SolverOptions::default();
        let ctx = ReducedContext::new(&m, opts).unwrap();
        let solver = ForwardSolver::new(&m, opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drive = if seed % 2 == 0 { Drive::One } else { Drive::Two };
        let target = random_sigma(&mut rng, m.num_nodes());
        let exact = solver.solve(&target, drive).unwrap();
        let lambda = ctx.estimator(drive).lambda_min();
        let bound = target.max() / target.min() / lambda;

        let mut space = init_space(&ctx, drive).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            let reduced = solve_reduced(&space, &ctx, &target).unwrap();
            let err = energy_error(&m, &target, &exact, &reduced.u);
            prop_assert!(err <= last * (1.0 + 1e-9) + 1e-12, "{} > {}", err, last);
            prop_assert!(reduced.condition <= bound, "cond {} > {}", reduced.condition, bound);
            let est = error_estimate(&space, &ctx, &target, &reduced.u).unwrap();
            prop_assert!(est >= mreit::fem::h1_norm(&m, &NodalField(exact.0.iter().zip(&reduced.u.0).map(|(a, b)| a - b).collect())) * (1.0 - 1e-9));
            last = err;
            let snapshot_sigma = random_sigma(&mut rng, m.num_nodes());
            space.enrich(&ctx, &solver.solve(&snapshot_sigma, drive).unwrap(), DEFAULT_DROP_TOL).unwrap();
        }

        // At a snapshot parameter the bound collapses to numerical zero.
        space.enrich(&ctx, &exact, DEFAULT_DROP_TOL).unwrap();
        let reduced = solve_reduced(&space, &ctx, &target).unwrap();
        prop_assert!(error_estimate(&space, &ctx, &target, &reduced.u).unwrap() <= 1e-8);
    }
}
