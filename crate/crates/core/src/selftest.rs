//! End-to-end property checks, runnable from the command line.

use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fem::{element_gradients, weak_divergence_rhs, Assembler, NodalField};
use crate::forward::{electrode_flux, total_boundary_flux, Drive, DriveConfig, ForwardSolver};
use crate::io;
use crate::mesh::{build_structured_mesh, standard_mesh, BoundaryTag, Mesh};
use crate::phantom::{Phantom, SmoothBumps};
use crate::sparse::{apply_dirichlet, solve_spd, SolverOptions, SparseSystem};
use crate::synth::{add_relative_noise, synthesize_laplacian_bz, LaplacianBzData};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 6] = [
    ("mesh_area_and_tags", mesh_area_and_tags),
    ("patch_test", patch_test),
    ("weak_divergence_adjoint", weak_divergence_adjoint),
    ("flux_antisymmetry", flux_antisymmetry),
    ("noise_determinism", noise_determinism),
    ("file_round_trips", file_round_trips),
];

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|(n, _)| *n)
}

/// Runs every check; errors count as failures.
pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult {
                name,
                passed,
                detail,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            }
        })
        .collect()
}

fn uniform_field(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> NodalField {
    NodalField(
        (0..len)
            .map(|_| lo + (hi - lo) * (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
            .collect(),
    )
}

/// Neumaier summation.
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

fn reflect_x(p: [f64; 2]) -> [f64; 2] {
    [-p[0], p[1]]
}

fn transpose(p: [f64; 2]) -> [f64; 2] {
    [p[1], p[0]]
}

fn tagged_points(mesh: &Mesh, tag: BoundaryTag, map: fn([f64; 2]) -> [f64; 2]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = mesh
        .tagged_nodes(tag)
        .into_iter()
        .map(|i| map(mesh.nodes()[i]))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts
}

fn mesh_area_and_tags() -> Result<(bool, String)> {
    let mut worst_area = 0.0f64;
    for n in [1, 2, 3, 7, 20, 64, 260] {
        let m = build_structured_mesh(n)?;
        let area = compensated_sum(m.areas());
        worst_area = worst_area.max((area - 4.0).abs());
        if m.areas().iter().any(|&a| !(a > 0.0)) {
            return Ok((false, format!("non-positive area at n={n}")));
        }
    }
    for n in [20, 64, 260] {
        let m = standard_mesh(n)?;
        let length: f64 = m
            .boundary()
            .iter()
            .map(|e| {
                let [a, b] = e.nodes.map(|i| m.nodes()[i]);
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .sum();
        if (length - 8.0).abs() > 1e-12 {
            return Ok((false, format!("n={n}: boundary length {length}")));
        }
        let sets = BoundaryTag::ELECTRODES.map(|t| m.tagged_nodes(t));
        for a in 0..4 {
            for b in a + 1..4 {
                if sets[a].iter().any(|i| sets[b].contains(i)) {
                    return Ok((false, format!("n={n}: electrodes {a} and {b} share a node")));
                }
            }
        }
        let id = |p| p;
        let symmetric = tagged_points(&m, BoundaryTag::E1plus, reflect_x)
            == tagged_points(&m, BoundaryTag::E1minus, id)
            && tagged_points(&m, BoundaryTag::E1plus, transpose) == tagged_points(&m, BoundaryTag::E2plus, id)
            && tagged_points(&m, BoundaryTag::E1minus, transpose) == tagged_points(&m, BoundaryTag::E2minus, id);
        if !symmetric {
            return Ok((false, format!("n={n}: electrodes not symmetric")));
        }
    }
    Ok((worst_area <= 1e-12, format!("max |area - 4| = {worst_area:e}")))
}

fn patch_test() -> Result<(bool, String)> {
    let m = standard_mesh(20)?;
    let asm = Assembler::new(&m);
    let k = asm.stiffness(&NodalField::constant(m.num_nodes(), 2.5))?;
    let boundary = m.boundary_nodes();
    let linear = |x: f64, y: f64| 0.7 * x - 1.3 * y + 0.2;
    let w = NodalField::interpolate(&m, linear);
    let kw = k.mul_vec(&w);
    let scale = k.diagonal().iter().fold(0.0f64, |a, &d| a.max(d));
    let interior = (0..m.num_nodes())
        .filter(|i| boundary.binary_search(i).is_err())
        .fold(0.0f64, |a, i| a.max(kw[i].abs()))
        / scale;

    let constraints: Vec<(usize, f64)> = boundary.iter().map(|&i| (i, w[i])).collect();
    let system = apply_dirichlet(
        SparseSystem::new(asm.unit_stiffness(), vec![0.0; m.num_nodes()])?,
        &constraints,
    )?;
    let u = NodalField(solve_spd(&system, SolverOptions::default())?);
    let solve_err = u.max_diff(&w);
    let grad_err = element_gradients(&m, &u)
        .iter()
        .fold(0.0f64, |a, g| a.max((g[0] - 0.7).abs()).max((g[1] + 1.3).abs()));
    Ok((
        interior <= 1e-12 && solve_err <= 1e-8 && grad_err <= 1e-7,
        format!("interior residual {interior:e}, solution error {solve_err:e}, gradient error {grad_err:e}"),
    ))
}

fn weak_divergence_adjoint() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for n in [3, 20] {
        let m = build_structured_mesh(n)?;
        let k1 = Assembler::new(&m).unit_stiffness();
        for _ in 0..5 {
            let w = uniform_field(&mut rng, m.num_nodes(), -1.0, 1.0);
            let lhs = weak_divergence_rhs(&m, &element_gradients(&m, &w))?;
            let rhs = k1.mul_vec(&w);
            let scale = rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            worst = worst.max(lhs.iter().zip(&rhs).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale);
        }
    }
    Ok((worst <= 1e-12, format!("max relative deviation {worst:e}")))
}

fn flux_antisymmetry() -> Result<(bool, String)> {
    let m = standard_mesh(32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut worst_total = 0.0f64;
    for sigma in [
        SmoothBumps::low_contrast().nodal(&m),
        uniform_field(&mut rng, m.num_nodes(), 0.5, 2.0),
    ] {
        for drive in Drive::BOTH {
            let cfg = DriveConfig {
                drive,
                current: 1.0,
                apply_scaling: true,
            };
            let u = ForwardSolver::new(&m, SolverOptions::default())?.solve_config(&sigma, cfg)?;
            let plus = electrode_flux(&m, &sigma, &u, drive.plus())?;
            let minus = electrode_flux(&m, &sigma, &u, drive.minus())?;
            worst = worst.max((plus + minus).abs() / plus.abs()).max((plus - 1.0).abs());
            worst_total = worst_total.max(total_boundary_flux(&m, &sigma, &u)?.abs());
        }
    }
    Ok((
        worst <= 1e-8 && worst_total <= 1e-8,
        format!("max |I+ + I-| / I+ and |I+ - I| = {worst:e}, total flux {worst_total:e}"),
    ))
}

fn noise_determinism() -> Result<(bool, String)> {
    let m = standard_mesh(20)?;
    let data = synthesize_laplacian_bz(&m, &SmoothBumps::low_contrast().nodal(&m), 1.0)?;
    let a = add_relative_noise(&data, 0.1, 7)?;
    let b = add_relative_noise(&data, 0.1, 7)?;
    let c = add_relative_noise(&data, 0.1, 8)?;
    let zero = add_relative_noise(&data, 0.0, 7)?;
    let ok = a == b && a.lap1 != c.lap1 && zero.lap1 == data.lap1 && zero.lap2 == data.lap2 && a.lap1 != a.lap2;
    Ok((
        ok,
        "same seed identical, different seed differs, level 0 is identity".into(),
    ))
}

fn file_round_trips() -> Result<(bool, String)> {
    let path = std::path::Path::new("<memory>");
    let m = standard_mesh(20)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut buf = Vec::new();
    io::write_mesh_to(&mut buf, &m).map_err(|e| io_error(path, e))?;
    let back = io::read_mesh_from(buf.as_slice(), path)?;
    let mesh_ok = back.nodes() == m.nodes() && back.triangles() == m.triangles() && back.boundary() == m.boundary();

    // values spread over many magnitudes, including subnormals
    let unit = uniform_field(&mut rng, m.num_nodes(), -1.0, 1.0);
    let field = NodalField(
        unit.iter()
            .enumerate()
            .map(|(i, v)| v * 10f64.powi((i % 617) as i32 - 310))
            .collect(),
    );
    let mut buf = Vec::new();
    io::write_field_to(&mut buf, &field).map_err(|e| io_error(path, e))?;
    let field_ok = io::read_field_from(buf.as_slice(), path)? == field;

    let grads = element_gradients(&m, &uniform_field(&mut rng, m.num_nodes(), -1.0, 1.0));
    let mut buf = Vec::new();
    io::write_trivec2_to(&mut buf, &grads).map_err(|e| io_error(path, e))?;
    let vec_ok = io::read_trivec2_from(buf.as_slice(), path)? == grads;

    let data = add_relative_noise(&LaplacianBzData::zeros(m.num_triangles()), 0.1, 99)?;
    let mut buf = Vec::new();
    io::write_data_to(&mut buf, &data).map_err(|e| io_error(path, e))?;
    let data_ok = io::read_data_from(buf.as_slice(), path)? == data;

    Ok((
        mesh_ok && field_ok && vec_ok && data_ok,
        format!("mesh {mesh_ok}, field {field_ok}, trivec2 {vec_ok}, data {data_ok}"),
    ))
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> crate::error::MreitError {
    crate::error::MreitError::Io {
        path: path.to_path_buf(),
        source,
    }
}
