//! Snapshot reduced spaces for the two drive problems.
//!
//! A reduced solution is `lifting + Σ cᵢ ψᵢ` where the lifting carries the electrode
//! Dirichlet data and the `ψᵢ` are H1-orthonormal fields vanishing on the drive's
//! electrode nodes. The coefficients solve the Galerkin system `B c = f` with
//! `B = Ψᵀ K(σ) Ψ` and `f = −Ψᵀ K(σ) lifting`. The a posteriori bound is
//! `Δ = ‖v_r‖_{H1} / α(σ)`, where `v_r` is the Riesz representative of the residual
//! on the zero-trace test space and `α(σ) = min σ · λ_min`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MreitError, Result};
use crate::fem::{Assembler, NodalField};
use crate::forward::{Drive, ElectrodeNodes};
use crate::mesh::Mesh;
use crate::sparse::{apply_dirichlet, dot, norm, solve_csr, CsrMatrix, SolverOptions, SparseSystem, SpdFactor};

/// Relative H1 norm below which an orthogonalized snapshot is discarded.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;
/// Largest allowed deviation of a snapshot from the electrode data.
pub const TRACE_TOL: f64 = 1e-12;
/// Condition number above which a reduced system is rejected.
pub const MAX_REDUCED_CONDITION: f64 = 1e12;
/// Relative safety margin applied to the computed eigenvalue bound.
const EIGEN_MARGIN: f64 = 1e-6;
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 1000;

/// Per-drive data that does not depend on σ: the factorized constrained H1 Gram
/// matrix used for Riesz solves and the coercivity reference `λ_min`.
#[derive(Debug)]
pub struct EstimatorContext {
    drive: Drive,
    constraints: Vec<(usize, f64)>,
    riesz: SpdFactor,
    lambda_min: f64,
    eigen_residual: f64,
}

impl EstimatorContext {
    /// Computes `λ_min`, the smallest eigenvalue of the unit stiffness against the H1
    /// Gram matrix on fields vanishing at the drive's electrode nodes, by inverse
    /// iteration.
    pub fn new(assembler: &Assembler<'_>, drive: Drive) -> Result<EstimatorContext> {
        let mesh = assembler.mesh();
        let electrodes = ElectrodeNodes::of(mesh, drive)?;
        let constraints: Vec<(usize, f64)> = electrodes.all().map(|i| (i, 0.0)).collect();
        let n = mesh.num_nodes();
        let k1 = assembler.unit_stiffness();
        let gram = assembler.h1_gram();
        let k1c = apply_dirichlet(SparseSystem::new(k1.clone(), vec![0.0; n])?, &constraints)?;
        let riesz = apply_dirichlet(SparseSystem::new(gram.clone(), vec![0.0; n])?, &constraints)?;
        let constraints = riesz.constraints;
        let (lambda_min, eigen_residual) =
            smallest_eigenvalue(&k1, &gram, &SpdFactor::new(&k1c.matrix)?, &constraints)?;
        Ok(EstimatorContext {
            drive,
            constraints,
            riesz: SpdFactor::new(&riesz.matrix)?,
            lambda_min: lambda_min * (1.0 - EIGEN_MARGIN),
            eigen_residual,
        })
    }

    pub fn drive(&self) -> Drive {
        self.drive
    }

    /// Lower bound for the smallest eigenvalue of the constrained pencil.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Relative residual `‖K₁x − λGx‖ / ‖K₁x‖` reached by the eigensolver.
    pub fn eigen_residual(&self) -> f64 {
        self.eigen_residual
    }

    /// Coercivity lower bound `α(σ) = min σ · λ_min`.
    pub fn alpha(&self, sigma: &NodalField) -> f64 {
        sigma.min() * self.lambda_min
    }

    /// H1 norm of the Riesz representative of `v ↦ −b(u, v; σ)` on the zero-trace
    /// test space, given the stiffness `k` of σ.
    pub fn residual_norm(&self, k: &CsrMatrix, u: &NodalField) -> Result<f64> {
        let mut r = k.mul_vec(u);
        r.iter_mut().for_each(|v| *v = -*v);
        for &(i, _) in &self.constraints {
            r[i] = 0.0;
        }
        let v = self.riesz.solve(&r)?;
        Ok(dot(&r, &v).max(0.0).sqrt())
    }
}

/// Inverse iteration for the smallest eigenvalue of `K₁ x = λ G x` restricted to the
/// free nodes. Returns the Rayleigh quotient and the final relative residual.
fn smallest_eigenvalue(
    k1: &CsrMatrix,
    gram: &CsrMatrix,
    k1_constrained: &SpdFactor,
    constraints: &[(usize, f64)],
) -> Result<(f64, f64)> {
    let n = k1.dim();
    let fixed: Vec<usize> = constraints.iter().map(|&(i, _)| i).collect();
    let restrict = |v: &mut Vec<f64>| fixed.iter().for_each(|&i| v[i] = 0.0);

    let mut x = vec![1.0; n];
    restrict(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..EIGEN_MAX_ITER {
        let gx = gram.mul_vec(&x);
        let g_norm = dot(&x, &gx).sqrt();
        x.iter_mut().for_each(|v| *v /= g_norm);
        let mut gx: Vec<f64> = gx.into_iter().map(|v| v / g_norm).collect();
        restrict(&mut gx);
        let mut kx = k1.mul_vec(&x);
        restrict(&mut kx);
        let lambda = dot(&x, &kx);
        let r: Vec<f64> = kx.iter().zip(&gx).map(|(a, b)| a - lambda * b).collect();
        residual = norm(&r) / norm(&kx);
        if residual < EIGEN_RESIDUAL_TOL {
            return Ok((lambda, residual));
        }
        x = k1_constrained.solve(&gx)?;
    }
    Err(MreitError::NoConvergence {
        iterations: EIGEN_MAX_ITER,
        residual,
    })
}

/// Reduced space of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSpace {
    drive: Drive,
    electrodes: ElectrodeNodes,
    lifting: NodalField,
    basis: Vec<NodalField>,
    /// `G ψᵢ` for each basis field, so H1 products against the basis are dot products.
    gram_basis: Vec<Vec<f64>>,
}

/// Result of a reduced solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution {
    pub u: NodalField,
    pub coefficients: Vec<f64>,
    /// Spectral condition number of the reduced matrix (1 for an empty space).
    pub condition: f64,
}

/// Shared, σ-independent data for the reduced spaces of one mesh.
#[derive(Debug)]
pub struct ReducedContext<'m> {
    assembler: Assembler<'m>,
    gram: CsrMatrix,
    estimators: [EstimatorContext; 2],
    opts: SolverOptions,
}

impl<'m> ReducedContext<'m> {
    pub fn new(mesh: &'m Mesh, opts: SolverOptions) -> Result<ReducedContext<'m>> {
        let assembler = Assembler::new(mesh);
        let gram = assembler.h1_gram();
        let estimators = [
            EstimatorContext::new(&assembler, Drive::One)?,
            EstimatorContext::new(&assembler, Drive::Two)?,
        ];
        Ok(ReducedContext {
            assembler,
            gram,
            estimators,
            opts,
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.assembler.mesh()
    }

    pub fn assembler(&self) -> &Assembler<'m> {
        &self.assembler
    }

    pub fn gram(&self) -> &CsrMatrix {
        &self.gram
    }

    pub fn estimator(&self, drive: Drive) -> &EstimatorContext {
        &self.estimators[drive.index()]
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    fn h1(&self, u: &[f64], v: &[f64]) -> f64 {
        self.gram.bilinear(u, v)
    }
}

/// Empty space for `drive` whose lifting is the σ ≡ 1 forward solution.
pub fn init_space(ctx: &ReducedContext<'_>, drive: Drive) -> Result<ReducedSpace> {
    let mesh = ctx.mesh();
    let electrodes = ElectrodeNodes::of(mesh, drive)?;
    let k1 = ctx.assembler.unit_stiffness();
    let system = apply_dirichlet(
        SparseSystem::new(k1, vec![0.0; mesh.num_nodes()])?,
        &electrodes.constraints(),
    )?;
    let (lifting, _) = solve_csr(&system.matrix, &system.rhs, &system.constraints, ctx.opts, None)?;
    Ok(ReducedSpace {
        drive,
        electrodes,
        lifting: NodalField(lifting),
        basis: Vec::new(),
        gram_basis: Vec::new(),
    })
}

impl ReducedSpace {
    pub fn drive(&self) -> Drive {
        self.drive
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn lifting(&self) -> &NodalField {
        &self.lifting
    }

    pub fn basis(&self) -> &[NodalField] {
        &self.basis
    }

    pub fn electrodes(&self) -> &ElectrodeNodes {
        &self.electrodes
    }

    /// Rebuilds a space from stored parts, checking the trace conditions.
    pub fn from_parts(
        ctx: &ReducedContext<'_>,
        drive: Drive,
        lifting: NodalField,
        basis: Vec<NodalField>,
    ) -> Result<ReducedSpace> {
        let mesh = ctx.mesh();
        let electrodes = ElectrodeNodes::of(mesh, drive)?;
        lifting.check_len(mesh)?;
        for &(i, g) in &electrodes.constraints() {
            if lifting[i] != g {
                return Err(MreitError::TraceMismatch {
                    node: i,
                    deviation: (lifting[i] - g).abs(),
                });
            }
        }
        for psi in &basis {
            psi.check_len(mesh)?;
            if let Some(i) = electrodes.all().find(|&i| psi[i] != 0.0) {
                return Err(MreitError::TraceMismatch {
                    node: i,
                    deviation: psi[i].abs(),
                });
            }
        }
        let gram_basis = basis.iter().map(|b| ctx.gram.mul_vec(b)).collect();
        Ok(ReducedSpace {
            drive,
            electrodes,
            lifting,
            basis,
            gram_basis,
        })
    }

    /// Adds the part of `snapshot` not yet represented. Returns whether the dimension
    /// grew.
    pub fn enrich(&mut self, ctx: &ReducedContext<'_>, snapshot: &NodalField, drop_tol: f64) -> Result<bool> {
        snapshot.check_len(ctx.mesh())?;
        for (i, g) in self.electrodes.constraints() {
            let deviation = (snapshot[i] - g).abs();
            if !(deviation <= TRACE_TOL) {
                return Err(MreitError::TraceMismatch { node: i, deviation });
            }
        }
        let mut candidate: Vec<f64> = snapshot.iter().zip(self.lifting.iter()).map(|(s, l)| s - l).collect();
        for i in self.electrodes.all() {
            candidate[i] = 0.0;
        }
        for _ in 0..2 {
            for (psi, g_psi) in self.basis.iter().zip(&self.gram_basis) {
                let c = dot(&candidate, g_psi);
                candidate.iter_mut().zip(psi.iter()).for_each(|(x, p)| *x -= c * p);
            }
        }
        let reference = ctx.h1(snapshot, snapshot).sqrt();
        let residual = ctx.h1(&candidate, &candidate).sqrt();
        if !(residual > drop_tol * reference) {
            return Ok(false);
        }
        candidate.iter_mut().for_each(|x| *x /= residual);
        self.gram_basis.push(ctx.gram.mul_vec(&candidate));
        self.basis.push(NodalField(candidate));
        Ok(true)
    }

    /// Galerkin solve with an already assembled stiffness `k` of σ.
    pub fn solve_with_matrix(&self, k: &CsrMatrix) -> Result<ReducedSolution> {
        let n = self.dim();
        if n == 0 {
            return Ok(ReducedSolution {
                u: self.lifting.clone(),
                coefficients: Vec::new(),
                condition: 1.0,
            });
        }
        let k_basis: Vec<Vec<f64>> = self.basis.iter().map(|b| k.mul_vec(b)).collect();
        let k_lift = k.mul_vec(&self.lifting);
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = 0.5 * (dot(&self.basis[i], &k_basis[j]) + dot(&self.basis[j], &k_basis[i]));
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        let f = DVector::from_iterator(n, self.basis.iter().map(|b| -dot(b, &k_lift)));
        let eig = b.clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_REDUCED_CONDITION) {
            return Err(MreitError::IllConditionedReducedSystem { condition });
        }
        let chol = b
            .cholesky()
            .ok_or(MreitError::IllConditionedReducedSystem { condition })?;
        let c = chol.solve(&f);
        let mut u = self.lifting.clone();
        for (ci, psi) in c.iter().zip(&self.basis) {
            u.iter_mut().zip(psi.iter()).for_each(|(x, p)| *x += ci * p);
        }
        Ok(ReducedSolution {
            u,
            coefficients: c.iter().copied().collect(),
            condition,
        })
    }
}

/// Reduced solution at σ.
pub fn solve_reduced(space: &ReducedSpace, ctx: &ReducedContext<'_>, sigma: &NodalField) -> Result<ReducedSolution> {
    let k = ctx.assembler.stiffness(sigma)?;
    space.solve_with_matrix(&k)
}

/// Error bound `Δ_N(σ) = ‖v_r‖_{H1} / α(σ)` for the reduced solution `u_n` at σ.
pub fn error_estimate(
    space: &ReducedSpace,
    ctx: &ReducedContext<'_>,
    sigma: &NodalField,
    u_n: &NodalField,
) -> Result<f64> {
    let k = ctx.assembler.stiffness(sigma)?;
    error_estimate_with_matrix(space, ctx, &k, sigma, u_n)
}

/// [`error_estimate`] with an already assembled stiffness `k` of σ.
pub fn error_estimate_with_matrix(
    space: &ReducedSpace,
    ctx: &ReducedContext<'_>,
    k: &CsrMatrix,
    sigma: &NodalField,
    u_n: &NodalField,
) -> Result<f64> {
    let est = ctx.estimator(space.drive);
    let alpha = est.alpha(sigma);
    if !(alpha > 0.0) {
        return Err(MreitError::NonCoercive {
            node: sigma.iter().position(|&s| s == sigma.min()).unwrap_or(0),
            value: sigma.min(),
        });
    }
    Ok(est.residual_norm(k, u_n)? / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::h1_norm;
    use crate::forward::ForwardSolver;
    use crate::mesh::standard_mesh;

    fn sigma_a(m: &Mesh) -> NodalField {
        NodalField::interpolate(m, |x, y| 1.0 + 0.4 * (x + 0.5 * y).sin().powi(2))
    }

    fn sigma_b(m: &Mesh) -> NodalField {
        NodalField::interpolate(m, |x, y| 0.7 + 0.6 * (x * y + 0.3 * x).cos().abs())
    }

    #[test]
    fn init_space_lifting_trace() {
        let m = standard_mesh(20).unwrap();
        let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
        for drive in Drive::BOTH {
            let s = init_space(&ctx, drive).unwrap();
            assert_eq!(s.dim(), 0);
            for (i, g) in s.electrodes().constraints() {
                assert_eq!(s.lifting()[i], g);
            }
            let r = solve_reduced(&s, &ctx, &sigma_a(&m)).unwrap();
            assert_eq!(&r.u, s.lifting());
        }
    }

    #[test]
    fn lambda_min_is_in_unit_interval() {
        let m = standard_mesh(20).unwrap();
        let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
        for drive in Drive::BOTH {
            let e = ctx.estimator(drive);
            assert!(e.lambda_min() > 0.0 && e.lambda_min() < 1.0);
            assert!(e.eigen_residual() < 1e-10);
        }
    }

    #[test]
    fn enrichment_and_reproduction() {
        let m = standard_mesh(20).unwrap();
        let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
        let solver = ForwardSolver::new(&m, SolverOptions::default()).unwrap();
        let mut s = init_space(&ctx, Drive::One).unwrap();
        let (sa, sb) = (sigma_a(&m), sigma_b(&m));
        let ua = solver.solve(&sa, Drive::One).unwrap();
        assert!(s.enrich(&ctx, &ua, DEFAULT_DROP_TOL).unwrap());
        assert!((ctx.h1(&s.basis()[0], &s.basis()[0]) - 1.0).abs() < 1e-12);
        assert!(!s.enrich(&ctx, &ua, DEFAULT_DROP_TOL).unwrap());
        let ub = solver.solve(&sb, Drive::One).unwrap();
        assert!(s.enrich(&ctx, &ub, DEFAULT_DROP_TOL).unwrap());
        let g01 = ctx.h1(&s.basis()[0], &s.basis()[1]);
        let g11 = ctx.h1(&s.basis()[1], &s.basis()[1]);
        assert!(g01.abs() < 1e-10 && (g11 - 1.0).abs() < 1e-10);

        for (sigma, u) in [(&sa, &ua), (&sb, &ub)] {
            let r = solve_reduced(&s, &ctx, sigma).unwrap();
            let diff = NodalField(r.u.iter().zip(u.iter()).map(|(a, b)| a - b).collect());
            assert!(h1_norm(&m, &diff) < 1e-10);
            assert!(error_estimate(&s, &ctx, sigma, &r.u).unwrap() < 1e-8);
        }
    }

    #[test]
    fn trace_mismatch_rejected() {
        let m = standard_mesh(20).unwrap();
        let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
        let mut s = init_space(&ctx, Drive::Two).unwrap();
        let mut bad = s.lifting().clone();
        bad[s.electrodes().plus[0]] = 1.0 + 1e-9;
        assert!(matches!(
            s.enrich(&ctx, &bad, DEFAULT_DROP_TOL),
            Err(MreitError::TraceMismatch { .. })
        ));
    }

    #[test]
    fn estimator_invariant_under_scaling() {
        let m = standard_mesh(20).unwrap();
        let ctx = ReducedContext::new(&m, SolverOptions::default()).unwrap();
        let solver = ForwardSolver::new(&m, SolverOptions::default()).unwrap();
        let mut s = init_space(&ctx, Drive::One).unwrap();
        s.enrich(&ctx, &solver.solve(&sigma_a(&m), Drive::One).unwrap(), DEFAULT_DROP_TOL)
            .unwrap();
        let sb = sigma_b(&m);
        let sb2 = sb.map(|v| 2.0 * v);
        let r1 = solve_reduced(&s, &ctx, &sb).unwrap();
        let r2 = solve_reduced(&s, &ctx, &sb2).unwrap();
        assert!(r1.u.max_diff(&r2.u) < 1e-12);
        let d1 = error_estimate(&s, &ctx, &sb, &r1.u).unwrap();
        let d2 = error_estimate(&s, &ctx, &sb2, &r2.u).unwrap();
        assert!((d1 - d2).abs() <= 1e-8 * d1);
    }
}
