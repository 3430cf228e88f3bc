//! The Harmonic Bz fixed-point iteration.
//!
//! Each iteration solves both drive problems at the current conductivity `σⁿ`, forms
//! the per-triangle matrix `A[σⁿ]` with rows `(∂u_j/∂y, −∂u_j/∂x)`, recovers the
//! vector field `V = (μ₀ σⁿ A)⁻¹ (∇²B_z¹, ∇²B_z²)ᵀ` on the inner region (zero outside),
//! and updates `ln σ` by the Poisson problem `∇² ln σⁿ⁺¹ = ∇·V` with `ln σ_b` on the
//! boundary. Iteration stops once successive log-iterates differ by less than `ε` in
//! the nodal max norm.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MreitError, Result};
use crate::fem::{element_gradients, weak_divergence_rhs, Assembler, NodalField, TriMat2, TriVec2};
use crate::forward::ForwardSolver;
use crate::mesh::{Mesh, RegionMasks};
use crate::sparse::{apply_dirichlet, solve_csr, CsrMatrix, SolverOptions, SparseSystem};
use crate::synth::LaplacianBzData;

/// What to do with an inner triangle whose `A` fails the determinant test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingularMode {
    /// Abort with `SingularCoefficientMatrix`.
    Error,
    /// Set the vector field to zero on that triangle and continue.
    ZeroOut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BzConfig {
    /// Termination tolerance on `‖ln σⁿ − ln σⁿ⁻¹‖_C`.
    pub epsilon: f64,
    pub mu0: f64,
    pub max_iterations: usize,
    /// Relative floor: `|det A_T|` must be at least `det_floor` times the product of
    /// the row norms of `A_T`.
    pub det_floor: f64,
    pub singular_mode: SingularMode,
    /// `ln σ_b`, the known log-conductivity on the boundary and initial guess.
    pub boundary_log_value: f64,
    pub solver: SolverOptions,
    /// Solve the two drive problems on separate threads.
    pub parallel_drives: bool,
}

impl Default for BzConfig {
    fn default() -> Self {
        BzConfig {
            epsilon: 1e-6,
            mu0: 1.0,
            max_iterations: 100,
            det_floor: 1e-12,
            singular_mode: SingularMode::Error,
            boundary_log_value: 0.0,
            solver: SolverOptions::default(),
            parallel_drives: false,
        }
    }
}

impl BzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(MreitError::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.det_floor >= 0.0) {
            return Err(MreitError::InvalidArgument(format!(
                "det_floor must be non-negative, got {}",
                self.det_floor
            )));
        }
        if !(self.mu0 > 0.0) || !self.boundary_log_value.is_finite() {
            return Err(MreitError::InvalidArgument(
                "mu0 must be positive and ln σ_b finite".into(),
            ));
        }
        Ok(())
    }

    pub fn sigma_b(&self) -> f64 {
        self.boundary_log_value.exp()
    }
}

/// Per-triangle `A` with row `j` equal to `(∂u_j/∂y, −∂u_j/∂x)`.
pub fn assemble_a(grad_u1: &TriVec2, grad_u2: &TriVec2) -> Result<TriMat2> {
    if grad_u1.len() != grad_u2.len() {
        return Err(MreitError::SizeMismatch {
            expected: grad_u1.len(),
            actual: grad_u2.len(),
        });
    }
    Ok(TriMat2(
        grad_u1
            .iter()
            .zip(grad_u2.iter())
            .map(|(g1, g2)| [[g1[1], -g1[0]], [g2[1], -g2[0]]])
            .collect(),
    ))
}

pub fn det2(a: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// `V_T = (μ₀ σ̄_T)⁻¹ A_T⁻¹ (lap1_T, lap2_T)ᵀ` on inner triangles, zero elsewhere.
/// `σ̄_T` is the vertex mean of σ.
pub fn vector_field(
    mesh: &Mesh,
    sigma: &NodalField,
    a: &TriMat2,
    data: &LaplacianBzData,
    masks: &RegionMasks,
    cfg: &BzConfig,
) -> Result<TriVec2> {
    data.check_mesh(mesh)?;
    sigma.check_len(mesh)?;
    if a.len() != mesh.num_triangles() || masks.inner.len() != mesh.num_triangles() {
        return Err(MreitError::MeshMismatch(
            "coefficient matrices or masks do not match the mesh".into(),
        ));
    }
    let mut out = vec![[0.0; 2]; mesh.num_triangles()];
    for (t, v) in out.iter_mut().enumerate() {
        if !masks.inner[t] {
            continue;
        }
        let m = &a[t];
        let det = det2(m);
        let scale = m[0][0].hypot(m[0][1]) * m[1][0].hypot(m[1][1]);
        if det == 0.0 || det.abs() < cfg.det_floor * scale {
            match cfg.singular_mode {
                SingularMode::Error => return Err(MreitError::SingularCoefficientMatrix { triangle: t, det }),
                SingularMode::ZeroOut => continue,
            }
        }
        let (l1, l2) = (data.lap1[t], data.lap2[t]);
        let factor = 1.0 / (cfg.mu0 * sigma.triangle_mean(mesh, t) * det);
        *v = [
            factor * (m[1][1] * l1 - m[0][1] * l2),
            factor * (-m[1][0] * l1 + m[0][0] * l2),
        ];
    }
    Ok(TriVec2(out))
}

/// The log-conductivity update: weak Poisson problem with unit coefficient and zero
/// Dirichlet data for `ln σ − ln σ_b` on the whole boundary. The constrained matrix
/// is assembled once.
#[derive(Debug, Clone)]
pub struct LogPoisson<'m> {
    mesh: &'m Mesh,
    matrix: CsrMatrix,
    constraints: Vec<(usize, f64)>,
}

impl<'m> LogPoisson<'m> {
    pub fn new(mesh: &'m Mesh) -> Result<LogPoisson<'m>> {
        Self::with_stiffness(mesh, Assembler::new(mesh).unit_stiffness())
    }

    pub fn with_stiffness(mesh: &'m Mesh, unit_stiffness: CsrMatrix) -> Result<LogPoisson<'m>> {
        let constraints: Vec<(usize, f64)> = mesh.boundary_nodes().into_iter().map(|i| (i, 0.0)).collect();
        let n = unit_stiffness.dim();
        let system = apply_dirichlet(SparseSystem::new(unit_stiffness, vec![0.0; n])?, &constraints)?;
        Ok(LogPoisson {
            mesh,
            matrix: system.matrix,
            constraints: system.constraints,
        })
    }

    /// Returns `ln σ` solving the update for the vector field `field`.
    pub fn solve(&self, field: &TriVec2, boundary_log_value: f64, opts: SolverOptions) -> Result<NodalField> {
        let mut rhs = weak_divergence_rhs(self.mesh, field)?;
        for &(i, _) in &self.constraints {
            rhs[i] = 0.0;
        }
        let (w, _) = solve_csr(&self.matrix, &rhs, &self.constraints, opts, None)?;
        Ok(NodalField(w.into_iter().map(|v| v + boundary_log_value).collect()))
    }
}

/// One-shot log-conductivity update (see [`LogPoisson`] for repeated use).
pub fn update_log_sigma(mesh: &Mesh, field: &TriVec2, cfg: &BzConfig) -> Result<NodalField> {
    LogPoisson::new(mesh)?.solve(field, cfg.boundary_log_value, cfg.solver)
}

/// Termination status of a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max_iterations",
        }
    }
}

/// Wall time spent per phase, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub assembly_ms: f64,
    pub full_solve_ms: f64,
    pub reduced_solve_ms: f64,
    pub estimator_ms: f64,
    pub vector_field_ms: f64,
    pub poisson_ms: f64,
}

pub(crate) fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Outcome of a Harmonic Bz (or reduced-basis) reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub sigma: NodalField,
    pub log_sigma: NodalField,
    /// `‖ln σⁿ − ln σⁿ⁻¹‖_C` after each conductivity update.
    pub history: Vec<f64>,
    /// Number of conductivity updates.
    pub iterations: usize,
    /// Number of full-order forward solves.
    pub forward_solves: usize,
    pub status: Status,
    pub wall_ms: f64,
    pub times: PhaseTimes,
}

impl ReconstructionResult {
    pub fn final_diff(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Result of a single fixed-point step.
#[derive(Debug, Clone)]
pub struct BzStep {
    pub potentials: [NodalField; 2],
    pub field: TriVec2,
    pub log_sigma: NodalField,
}

/// Harmonic Bz reconstruction bound to a mesh, masks and data set.
#[derive(Debug)]
pub struct HarmonicBz<'a> {
    solver: ForwardSolver<'a>,
    poisson: LogPoisson<'a>,
    masks: &'a RegionMasks,
    data: &'a LaplacianBzData,
    cfg: BzConfig,
}

impl<'a> HarmonicBz<'a> {
    pub fn new(
        mesh: &'a Mesh,
        masks: &'a RegionMasks,
        data: &'a LaplacianBzData,
        cfg: BzConfig,
    ) -> Result<HarmonicBz<'a>> {
        cfg.validate()?;
        data.check_mesh(mesh)?;
        let solver = ForwardSolver::new(mesh, cfg.solver)?;
        let poisson = LogPoisson::with_stiffness(mesh, solver.assembler().unit_stiffness())?;
        Ok(HarmonicBz {
            solver,
            poisson,
            masks,
            data,
            cfg,
        })
    }

    pub fn forward_solver(&self) -> &ForwardSolver<'a> {
        &self.solver
    }

    pub fn config(&self) -> &BzConfig {
        &self.cfg
    }

    /// Vector field at `sigma` from the two drive potentials.
    pub fn field_from_potentials(&self, sigma: &NodalField, potentials: &[NodalField; 2]) -> Result<TriVec2> {
        let mesh = self.solver.mesh();
        let a = assemble_a(
            &element_gradients(mesh, &potentials[0]),
            &element_gradients(mesh, &potentials[1]),
        )?;
        vector_field(mesh, sigma, &a, self.data, self.masks, &self.cfg)
    }

    /// Log-conductivity update for a vector field.
    pub fn log_update(&self, field: &TriVec2) -> Result<NodalField> {
        self.poisson.solve(field, self.cfg.boundary_log_value, self.cfg.solver)
    }

    /// Vector field and log-update for given drive potentials at `sigma`.
    pub fn update_from_potentials(
        &self,
        sigma: &NodalField,
        potentials: &[NodalField; 2],
    ) -> Result<(TriVec2, NodalField)> {
        let field = self.field_from_potentials(sigma, potentials)?;
        let log_sigma = self.log_update(&field)?;
        Ok((field, log_sigma))
    }

    /// One iteration with full forward solves at `sigma`.
    pub fn step(&self, sigma: &NodalField) -> Result<BzStep> {
        let potentials = self.solver.solve_both(sigma, self.cfg.parallel_drives)?;
        let (field, log_sigma) = self.update_from_potentials(sigma, &potentials)?;
        Ok(BzStep {
            potentials,
            field,
            log_sigma,
        })
    }

    /// Runs the iteration from `σ⁰ = σ_b` (or `initial`).
    pub fn run(&self, initial: Option<&NodalField>) -> Result<ReconstructionResult> {
        let start = Instant::now();
        let mesh = self.solver.mesh();
        let solves_before = self.solver.solve_count();
        let mut log_sigma = match initial {
            Some(s) => {
                s.check_len(mesh)?;
                s.check_positive()?;
                s.map(f64::ln)
            }
            None => NodalField::constant(mesh.num_nodes(), self.cfg.boundary_log_value),
        };
        let mut sigma = log_sigma.map(f64::exp);
        let mut times = PhaseTimes::default();
        let mut history = Vec::new();
        let mut status = Status::MaxIterations;

        for _ in 0..self.cfg.max_iterations {
            let t = Instant::now();
            let k = self.solver.assembler().stiffness(&sigma)?;
            times.assembly_ms += elapsed_ms(t);

            let t = Instant::now();
            let potentials = self.solver.solve_both_with_matrix(&k, self.cfg.parallel_drives)?;
            times.full_solve_ms += elapsed_ms(t);

            let t = Instant::now();
            let field = self.field_from_potentials(&sigma, &potentials)?;
            times.vector_field_ms += elapsed_ms(t);

            let t = Instant::now();
            let next = self.log_update(&field)?;
            times.poisson_ms += elapsed_ms(t);

            let diff = next.max_diff(&log_sigma);
            history.push(diff);
            log_sigma = next;
            sigma = log_sigma.map(f64::exp);
            if diff < self.cfg.epsilon {
                status = Status::Converged;
                break;
            }
        }

        Ok(ReconstructionResult {
            sigma,
            log_sigma,
            iterations: history.len(),
            history,
            forward_solves: self.solver.solve_count() - solves_before,
            status,
            wall_ms: elapsed_ms(start),
            times,
        })
    }
}

/// Runs the Harmonic Bz algorithm from `σ⁰ = σ_b`.
pub fn reconstruct_bz(
    mesh: &Mesh,
    masks: &RegionMasks,
    data: &LaplacianBzData,
    cfg: &BzConfig,
) -> Result<ReconstructionResult> {
    HarmonicBz::new(mesh, masks, data, *cfg)?.run(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{region_masks, standard_mesh};

    #[test]
    fn a_from_axis_gradients() {
        let a = assemble_a(&TriVec2(vec![[1.0, 0.0]]), &TriVec2(vec![[0.0, 1.0]])).unwrap();
        assert_eq!(a[0], [[0.0, -1.0], [1.0, 0.0]]);
        assert_eq!(det2(&a[0]), 1.0);
        let a = assemble_a(&TriVec2(vec![[2.0, -1.0]]), &TriVec2(vec![[-4.0, 2.0]])).unwrap();
        assert_eq!(det2(&a[0]), 0.0);
    }

    #[test]
    fn det_is_jacobian_of_potentials() {
        let gs = [[0.3, -1.2], [2.5, 0.7], [-0.4, 0.9], [1.1, 1.3]];
        for g1 in gs {
            for g2 in gs {
                let a = assemble_a(&TriVec2(vec![g1]), &TriVec2(vec![g2])).unwrap();
                // Jacobian determinant of (x, y) ↦ (u₁, u₂)
                let jac = nalgebra::Matrix2::new(g1[0], g1[1], g2[0], g2[1]).determinant();
                assert!((det2(&a[0]) - jac).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rotation_field() {
        let m = crate::mesh::build_structured_mesh(1).unwrap();
        let masks = region_masks(&m, 0.95, 0.9).unwrap();
        let a = TriMat2(vec![[[0.0, -1.0], [1.0, 0.0]]; 2]);
        let data = LaplacianBzData {
            lap1: vec![0.7, -1.5].into(),
            lap2: vec![2.0, 0.25].into(),
            noise: None,
        };
        let sigma = NodalField::constant(4, 1.0);
        let v = vector_field(&m, &sigma, &a, &data, &masks, &BzConfig::default()).unwrap();
        assert_eq!(v[0], [2.0, -0.7]);
        assert_eq!(v[1], [0.25, 1.5]);
    }

    #[test]
    fn singular_matrix_modes() {
        let m = crate::mesh::build_structured_mesh(1).unwrap();
        let masks = region_masks(&m, 0.95, 0.9).unwrap();
        let a = TriMat2(vec![[[0.0, -1.0], [1.0, 0.0]], [[1.0, 2.0], [2.0, 4.0]]]);
        let data = LaplacianBzData {
            lap1: vec![1.0, 1.0].into(),
            lap2: vec![1.0, 1.0].into(),
            noise: None,
        };
        let sigma = NodalField::constant(4, 1.0);
        let err = vector_field(&m, &sigma, &a, &data, &masks, &BzConfig::default());
        assert!(matches!(
            err,
            Err(MreitError::SingularCoefficientMatrix { triangle: 1, .. })
        ));
        let cfg = BzConfig {
            singular_mode: SingularMode::ZeroOut,
            ..BzConfig::default()
        };
        let v = vector_field(&m, &sigma, &a, &data, &masks, &cfg).unwrap();
        assert_eq!(v[1], [0.0, 0.0]);
    }

    #[test]
    fn zero_field_gives_boundary_value() {
        let m = standard_mesh(20).unwrap();
        let v = TriVec2(vec![[0.0; 2]; m.num_triangles()]);
        for lb in [0.0, 0.4] {
            let cfg = BzConfig {
                boundary_log_value: lb,
                ..BzConfig::default()
            };
            let ls = update_log_sigma(&m, &v, &cfg).unwrap();
            assert!(ls.iter().all(|&x| x == lb));
        }
    }

    #[test]
    fn gradient_field_is_recovered() {
        let m = standard_mesh(20).unwrap();
        let w = NodalField::interpolate(&m, |x, y| (1.0 - x * x) * (1.0 - y * y) * (x + 0.5 * y).cos());
        let v = element_gradients(&m, &w);
        let ls = update_log_sigma(&m, &v, &BzConfig::default()).unwrap();
        assert!(ls.max_diff(&w) < 1e-8);
        for i in m.boundary_nodes() {
            assert_eq!(ls[i], 0.0);
        }
    }

    #[test]
    fn zero_data_terminates_immediately() {
        let m = standard_mesh(20).unwrap();
        let masks = region_masks(&m, 0.95, 0.9).unwrap();
        let data = LaplacianBzData::zeros(m.num_triangles());
        let r = reconstruct_bz(&m, &masks, &data, &BzConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.forward_solves, 2);
        assert_eq!(r.status, Status::Converged);
        assert!(r.sigma.iter().all(|&s| s == 1.0));
    }
}
