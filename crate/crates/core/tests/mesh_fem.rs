use std::collections::HashMap;

use mreit::fem::{element_gradients, weak_divergence_rhs, Assembler, NodalField};
use mreit::forward::{electrode_flux, total_boundary_flux, Drive, ForwardSolver};
use mreit::mesh::{region_masks, standard_mesh, BoundaryTag, Mesh};
use mreit::sparse::{solve_spd, CsrMatrix, SolverOptions, SparseSystem, SpdFactor};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + c
}

fn grid_index(mesh: &Mesh, n: usize, p: [f64; 2]) -> usize {
    let i = ((p[0] + 1.0) * n as f64 / 2.0).round() as usize;
    let j = ((p[1] + 1.0) * n as f64 / 2.0).round() as usize;
    let k = j * (n + 1) + i;
    assert!((mesh.nodes()[k][0] - p[0]).abs() < 1e-12 && (mesh.nodes()[k][1] - p[1]).abs() < 1e-12);
    k
}

/// Drive partner under a reflection that swaps the two electrodes of a drive.
fn reflected_tag(tag: BoundaryTag, flip_x: bool) -> BoundaryTag {
    use BoundaryTag::*;
    match (tag, flip_x) {
        (E1plus, true) => E1minus,
        (E1minus, true) => E1plus,
        (E2plus, false) => E2minus,
        (E2minus, false) => E2plus,
        (t, _) => t,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn areas_sum_to_four(n in 1usize..120) {
        let m = mreit::mesh::build_structured_mesh(n).unwrap();
        prop_assert!((compensated_sum(m.areas()) - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn electrode_tags_are_reflection_symmetric(half in 10usize..60) {
        let n = 2 * half;
        let m = standard_mesh(n).unwrap();
        let tags: HashMap<[usize; 2], BoundaryTag> = m
            .boundary()
            .iter()
            .map(|e| {
                let mut k = e.nodes;
                k.sort();
                (k, e.tag)
            })
            .collect();
        prop_assert_eq!(tags.len(), m.boundary().len());
        for flip_x in [true, false] {
            for e in m.boundary() {
                let mirrored = e.nodes.map(|v| {
                    let [x, y] = m.nodes()[v];
                    grid_index(&m, n, if flip_x { [-x, y] } else { [x, -y] })
                });
                let mut key = mirrored;
                key.sort();
                prop_assert_eq!(tags[&key], reflected_tag(e.tag, flip_x));
            }
        }
    }

    #[test]
    fn shrinking_inner_radius_never_adds_triangles(n in 4usize..40, r1 in 0.05f64..0.95, r2 in 0.05f64..0.95) {
        let m = mreit::mesh::build_structured_mesh(n).unwrap();
        let (small, large) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        let a = region_masks(&m, small, small / 2.0).unwrap();
        let b = region_masks(&m, large, large / 2.0).unwrap();
        prop_assert!(a.inner.iter().zip(&b.inner).all(|(&s, &l)| !s || l));
        prop_assert!(a.inner.iter().zip(&a.contrast).all(|(&i, &c)| !c || i));
        for t in 0..m.num_triangles() {
            let [x, y] = m.centroid(t);
            prop_assert_eq!(a.inner[t], x.hypot(y) < small);
        }
    }

    #[test]
    fn weak_divergence_of_gradient_is_unit_stiffness(seed in any::<u64>(), n in 2usize..24) {
        let m = mreit::mesh::build_structured_mesh(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = NodalField((0..m.num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let lhs = weak_divergence_rhs(&m, &element_gradients(&m, &w)).unwrap();
        let rhs = Assembler::new(&m).unit_stiffness().mul_vec(&w.0);
        for (a, b) in lhs.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * n as f64 * 0.1
}

fn to_csr(a: &DMatrix<f64>) -> CsrMatrix {
    let mut triplets = Vec::new();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            triplets.push((i, j, a[(i, j)]));
        }
    }
    CsrMatrix::from_triplets(a.nrows(), &triplets).unwrap()
}

#[test]
fn sparse_solvers_match_dense_cholesky() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let a = random_spd(&mut rng, 50);
    let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let oracle = a
        .clone()
        .cholesky()
        .unwrap()
        .solve(&nalgebra::DVector::from_vec(b.clone()));
    let csr = to_csr(&a);
    let pcg = solve_spd(
        &SparseSystem::new(csr.clone(), b.clone()).unwrap(),
        SolverOptions::default(),
    )
    .unwrap();
    let direct = SpdFactor::new(&csr).unwrap().solve(&b).unwrap();
    let scale = oracle.amax();
    for i in 0..50 {
        assert!((pcg[i] - oracle[i]).abs() <= 1e-8 * scale, "pcg {i}");
        assert!((direct[i] - oracle[i]).abs() <= 1e-12 * scale, "direct {i}");
    }
}

#[test]
fn constant_field_load_vanishes_at_interior_nodes() {
    let m = mreit::mesh::build_structured_mesh(2).unwrap();
    let field = mreit::fem::TriVec2(vec![[1.0, 0.0]; m.num_triangles()]);
    let load = weak_divergence_rhs(&m, &field).unwrap();
    // Direct quadrature: ∫ ∂φ_i/∂x over the support of φ_i.
    for (i, &l) in load.iter().enumerate() {
        let direct: f64 = (0..m.num_triangles())
            .filter_map(|t| {
                m.triangles()[t]
                    .iter()
                    .position(|&v| v == i)
                    .map(|k| m.area(t) * m.shape_grads(t)[k][0])
            })
            .sum();
        assert!((l - direct).abs() < 1e-15);
    }
    assert!(load[4].abs() < 1e-15);
}

#[test]
fn unit_conductivity_flux_golden_value() {
    let m = standard_mesh(64).unwrap();
    let solver = ForwardSolver::new(&m, SolverOptions::default()).unwrap();
    let sigma = NodalField::constant(m.num_nodes(), 1.0);
    let u = solver.solve(&sigma, Drive::One).unwrap();
    let plus = electrode_flux(&m, &sigma, &u, BoundaryTag::E1plus).unwrap();
    let minus = electrode_flux(&m, &sigma, &u, BoundaryTag::E1minus).unwrap();
    assert!(plus > 0.0);
    assert!((plus + minus).abs() <= 1e-9 * plus);
    assert!(total_boundary_flux(&m, &sigma, &u).unwrap().abs() <= 1e-9 * plus);
    assert!((plus - GOLDEN_FLUX).abs() <= 1e-8 * GOLDEN_FLUX, "flux {plus:?}");

    let doubled = NodalField::constant(m.num_nodes(), 2.0);
    let u2 = solver.solve(&doubled, Drive::One).unwrap();
    assert!(u2.max_diff(&u) <= 1e-9);
    let plus2 = electrode_flux(&m, &doubled, &u2, BoundaryTag::E1plus).unwrap();
    assert!((plus2 - 2.0 * plus).abs() <= 1e-9 * plus);
}

/// Regression value recorded from this implementation.
const GOLDEN_FLUX: f64 = 0.4654453871881128;
