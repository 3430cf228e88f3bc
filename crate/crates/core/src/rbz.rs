//! Reduced-basis Harmonic Bz.
//!
//! The outer loop computes full solutions of both drive problems at the current
//! iterate and enriches the two reduced spaces with them. The inner loop runs the
//! Harmonic Bz update with reduced solutions until either the log-iterates settle
//! (`ε₁`) or the error bounds at the new iterate say the reduced spaces are no longer
//! trustworthy (`ε₂`), in which case the outer loop enriches at that iterate.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MreitError, Result};
use crate::fem::NodalField;
use crate::forward::Drive;
use crate::harmonic_bz::{elapsed_ms, BzConfig, HarmonicBz, PhaseTimes, ReconstructionResult, Status};
use crate::mesh::{Mesh, RegionMasks};
use crate::reduced_basis::{
    error_estimate_with_matrix, init_space, ReducedContext, ReducedSolution, ReducedSpace, DEFAULT_DROP_TOL,
};
use crate::synth::LaplacianBzData;

/// When the reduced spaces stop being trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrustCriterion {
    /// Re-enrich when both drives' bounds exceed `ε₂`.
    MinEstimator,
    /// Re-enrich when either drive's bound exceeds `ε₂`.
    MaxEstimator,
}

impl TrustCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            TrustCriterion::MinEstimator => "min",
            TrustCriterion::MaxEstimator => "max",
        }
    }

    /// Whether the bounds `estimates` call for a re-enrichment.
    pub fn fires(self, estimates: [f64; 2], epsilon2: f64) -> bool {
        let value = match self {
            TrustCriterion::MinEstimator => estimates[0].min(estimates[1]),
            TrustCriterion::MaxEstimator => estimates[0].max(estimates[1]),
        };
        value > epsilon2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbzConfig {
    /// Global termination tolerance; `bz.epsilon` is ignored.
    pub epsilon1: f64,
    /// Error-bound threshold of the trust criterion.
    pub epsilon2: f64,
    pub trust: TrustCriterion,
    pub drop_tol: f64,
    pub bz: BzConfig,
}

impl Default for RbzConfig {
    fn default() -> Self {
        RbzConfig {
            epsilon1: 1e-6,
            epsilon2: 1e-3,
            trust: TrustCriterion::MinEstimator,
            drop_tol: DEFAULT_DROP_TOL,
            bz: BzConfig::default(),
        }
    }
}

impl RbzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon1 > 0.0) || self.epsilon2.is_nan() || self.epsilon2 < 0.0 {
            return Err(MreitError::InvalidArgument(format!(
                "epsilon1 must be positive and epsilon2 non-negative, got {} and {}",
                self.epsilon1, self.epsilon2
            )));
        }
        self.bz_config().validate()
    }

    fn bz_config(&self) -> BzConfig {
        BzConfig {
            epsilon: self.epsilon1,
            ..self.bz
        }
    }
}

/// Outcome of a reduced-basis reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct RbzResult {
    pub result: ReconstructionResult,
    pub basis_updates: usize,
    pub full_solves: usize,
    pub dims: [usize; 2],
    /// Error bounds of both drives at each new iterate, in iteration order. The last
    /// iteration has none when it terminated the run.
    pub estimates: Vec<[f64; 2]>,
    /// Iteration index (1-based, as in `history`) of every basis update's first
    /// conductivity update.
    pub update_iterations: Vec<usize>,
    /// Final reduced spaces of drive 1 and drive 2.
    pub spaces: Vec<ReducedSpace>,
}

/// Runs the reduced-basis Harmonic Bz algorithm from `σ⁰ = σ_b`.
pub fn reconstruct_rbz(mesh: &Mesh, masks: &RegionMasks, data: &LaplacianBzData, cfg: &RbzConfig) -> Result<RbzResult> {
    cfg.validate()?;
    let bz_cfg = cfg.bz_config();
    let bz = HarmonicBz::new(mesh, masks, data, bz_cfg)?;
    let ctx = ReducedContext::new(mesh, bz_cfg.solver)?;
    let spaces = [init_space(&ctx, Drive::One)?, init_space(&ctx, Drive::Two)?];
    RbzRun {
        bz: &bz,
        ctx: &ctx,
        cfg,
    }
    .run(spaces)
}

struct RbzRun<'r, 'a> {
    bz: &'r HarmonicBz<'a>,
    ctx: &'r ReducedContext<'a>,
    cfg: &'r RbzConfig,
}

impl RbzRun<'_, '_> {
    fn reduced_solve(
        &self,
        spaces: &[ReducedSpace; 2],
        sigma: &NodalField,
        times: &mut PhaseTimes,
    ) -> Result<([ReducedSolution; 2], crate::sparse::CsrMatrix)> {
        let t = Instant::now();
        let k = self.ctx.assembler().stiffness(sigma)?;
        times.assembly_ms += elapsed_ms(t);
        let t = Instant::now();
        let solutions = self.pair(|j| spaces[j].solve_with_matrix(&k))?;
        times.reduced_solve_ms += elapsed_ms(t);
        Ok((solutions, k))
    }

    /// Evaluates `f` for both drives, on two threads when configured.
    fn pair<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync) -> Result<[T; 2]> {
        if self.cfg.bz.parallel_drives {
            let (a, b) = std::thread::scope(|s| {
                let h = s.spawn(|| f(1));
                let a = f(0);
                (a, h.join().expect("drive thread panicked"))
            });
            Ok([a?, b?])
        } else {
            Ok([f(0)?, f(1)?])
        }
    }

    fn run(&self, mut spaces: [ReducedSpace; 2]) -> Result<RbzResult> {
        let start = Instant::now();
        let solver = self.bz.forward_solver();
        let solves_before = solver.solve_count();
        let max_iterations = self.cfg.bz.max_iterations;

        let mut log_sigma = NodalField::constant(self.ctx.mesh().num_nodes(), self.cfg.bz.boundary_log_value);
        let mut sigma = log_sigma.map(f64::exp);
        let mut times = PhaseTimes::default();
        let mut history = Vec::new();
        let mut estimates = Vec::new();
        let mut update_iterations = Vec::new();
        let mut basis_updates = 0;
        let mut status = Status::MaxIterations;

        'outer: while history.len() < max_iterations {
            let t = Instant::now();
            let k = solver.assembler().stiffness(&sigma)?;
            times.assembly_ms += elapsed_ms(t);
            let t = Instant::now();
            let snapshots = solver.solve_both_with_matrix(&k, self.cfg.bz.parallel_drives)?;
            times.full_solve_ms += elapsed_ms(t);
            for (space, snapshot) in spaces.iter_mut().zip(&snapshots) {
                space.enrich(self.ctx, snapshot, self.cfg.drop_tol)?;
            }
            basis_updates += 1;
            update_iterations.push(history.len() + 1);

            let (mut reduced, _) = self.reduced_solve(&spaces, &sigma, &mut times)?;
            while history.len() < max_iterations {
                let potentials = [reduced[0].u.clone(), reduced[1].u.clone()];
                let t = Instant::now();
                let field = self.bz.field_from_potentials(&sigma, &potentials)?;
                times.vector_field_ms += elapsed_ms(t);
                let t = Instant::now();
                let next = self.bz.log_update(&field)?;
                times.poisson_ms += elapsed_ms(t);

                let diff = next.max_diff(&log_sigma);
                history.push(diff);
                log_sigma = next;
                sigma = log_sigma.map(f64::exp);
                if diff < self.cfg.epsilon1 {
                    status = Status::Converged;
                    break 'outer;
                }

                let (solutions, k) = self.reduced_solve(&spaces, &sigma, &mut times)?;
                let t = Instant::now();
                let bounds =
                    self.pair(|j| error_estimate_with_matrix(&spaces[j], self.ctx, &k, &sigma, &solutions[j].u))?;
                times.estimator_ms += elapsed_ms(t);
                estimates.push(bounds);
                if self.cfg.trust.fires(bounds, self.cfg.epsilon2) {
                    continue 'outer;
                }
                reduced = solutions;
            }
        }

        let full_solves = solver.solve_count() - solves_before;
        Ok(RbzResult {
            result: ReconstructionResult {
                sigma,
                log_sigma,
                iterations: history.len(),
                history,
                forward_solves: full_solves,
                status,
                wall_ms: elapsed_ms(start),
                times,
            },
            basis_updates,
            full_solves,
            dims: [spaces[0].dim(), spaces[1].dim()],
            estimates,
            update_iterations,
            spaces: spaces.into(),
        })
    }
}

/// `‖a − b‖_C / ‖b‖_C` with the nodal max norm.
pub fn relative_error(a: &NodalField, b: &NodalField) -> f64 {
    a.max_diff(b) / b.max_norm()
}

/// Relative max-norm error restricted to the nodes of triangles in `mask`.
pub fn relative_error_on(mesh: &Mesh, mask: &[bool], a: &NodalField, b: &NodalField) -> f64 {
    let mut nodes = vec![false; mesh.num_nodes()];
    for (tri, _) in mesh.triangles().iter().zip(mask).filter(|(_, &m)| m) {
        tri.iter().for_each(|&i| nodes[i] = true);
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (i, _) in nodes.iter().enumerate().filter(|(_, &n)| n) {
        num = num.max((a[i] - b[i]).abs());
        den = den.max(b[i].abs());
    }
    num / den
}

/// Counters and errors of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: usize,
    pub full_solves: usize,
    pub wall_ms: f64,
    pub status: Status,
    pub final_diff: f64,
    pub times: PhaseTimes,
}

impl From<&ReconstructionResult> for RunSummary {
    fn from(r: &ReconstructionResult) -> Self {
        RunSummary {
            iterations: r.iterations,
            full_solves: r.forward_solves,
            wall_ms: r.wall_ms,
            status: r.status,
            final_diff: r.final_diff(),
            times: r.times,
        }
    }
}

/// Comparison of a Harmonic Bz run with a reduced-basis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bz: RunSummary,
    pub rbz: RunSummary,
    pub basis_updates: usize,
    pub reduced_dims: [usize; 2],
    /// `‖σ_RBZ − σ_BZ‖_C / ‖σ_BZ‖_C`.
    pub rbz_vs_bz: f64,
    /// `‖σ* − σ_BZ‖_C / ‖σ_BZ‖_C`, when σ* is known.
    pub bz_vs_true: Option<f64>,
    /// `‖σ* − σ_RBZ‖_C / ‖σ_RBZ‖_C`, when σ* is known.
    pub rbz_vs_true: Option<f64>,
    /// `1 − t_RBZ / t_BZ` in percent.
    pub speedup_percent: f64,
}

pub fn compare_runs(
    bz: &ReconstructionResult,
    rbz: &RbzResult,
    sigma_star: Option<&NodalField>,
) -> Result<MetricsReport> {
    let n = bz.sigma.len();
    if rbz.result.sigma.len() != n || sigma_star.is_some_and(|s| s.len() != n) {
        return Err(MreitError::MeshMismatch("results have different node counts".into()));
    }
    Ok(MetricsReport {
        bz: RunSummary::from(bz),
        rbz: RunSummary::from(&rbz.result),
        basis_updates: rbz.basis_updates,
        reduced_dims: rbz.dims,
        rbz_vs_bz: relative_error(&rbz.result.sigma, &bz.sigma),
        bz_vs_true: sigma_star.map(|s| relative_error(s, &bz.sigma)),
        rbz_vs_true: sigma_star.map(|s| relative_error(s, &rbz.result.sigma)),
        speedup_percent: 100.0 * (1.0 - rbz.result.wall_ms / bz.wall_ms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_bz::reconstruct_bz;
    use crate::mesh::{region_masks, standard_mesh};

    #[test]
    fn trust_criteria() {
        assert!(!TrustCriterion::MinEstimator.fires([2e-3, 1e-4], 1e-3));
        assert!(TrustCriterion::MaxEstimator.fires([2e-3, 1e-4], 1e-3));
        assert!(TrustCriterion::MinEstimator.fires([2e-3, 3e-3], 1e-3));
        assert!(!TrustCriterion::MaxEstimator.fires([1e-3, 1e-3], 1e-3));
    }

    #[test]
    fn zero_data_single_update() {
        let m = standard_mesh(20).unwrap();
        let masks = region_masks(&m, 0.95, 0.9).unwrap();
        let data = LaplacianBzData::zeros(m.num_triangles());
        for lb in [0.0, 0.3] {
            let cfg = RbzConfig {
                bz: BzConfig {
                    boundary_log_value: lb,
                    ..BzConfig::default()
                },
                ..RbzConfig::default()
            };
            let r = reconstruct_rbz(&m, &masks, &data, &cfg).unwrap();
            assert_eq!(r.result.iterations, 1);
            assert_eq!(r.full_solves, 2);
            assert_eq!(r.basis_updates, 1);
            assert!(r.dims.iter().all(|&d| d <= 2));
            assert!(r.result.log_sigma.iter().all(|&v| v == lb));
        }
    }

    #[test]
    fn identical_runs_compare_to_zero() {
        let m = standard_mesh(20).unwrap();
        let masks = region_masks(&m, 0.95, 0.9).unwrap();
        let data = LaplacianBzData::zeros(m.num_triangles());
        let bz = reconstruct_bz(&m, &masks, &data, &BzConfig::default()).unwrap();
        let rbz = RbzResult {
            result: bz.clone(),
            basis_updates: 1,
            full_solves: 2,
            dims: [0, 0],
            estimates: vec![],
            update_iterations: vec![1],
            spaces: vec![],
        };
        let rep = compare_runs(&bz, &rbz, Some(&bz.sigma)).unwrap();
        assert_eq!(rep.rbz_vs_bz, 0.0);
        assert_eq!(rep.bz_vs_true, Some(0.0));
        assert_eq!(rep.rbz_vs_true, Some(0.0));
    }
}
