//! Electrode-drive forward problems: `∇·(σ∇u) = 0` with `u = 1` on `E⁺`, `u = 0` on
//! `E⁻` and insulated elsewhere, plus the shunt-model current scaling.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{MreitError, Result};
use crate::fem::{Assembler, NodalField};
use crate::mesh::{BoundaryTag, Mesh};
use crate::sparse::{apply_dirichlet, solve_spd_with_guess, CsrMatrix, SolverOptions, SparseSystem};

/// Active electrode pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Drive {
    One,
    Two,
}

impl Drive {
    pub const BOTH: [Drive; 2] = [Drive::One, Drive::Two];

    pub fn index(self) -> usize {
        match self {
            Drive::One => 0,
            Drive::Two => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Drive> {
        match n {
            1 => Some(Drive::One),
            2 => Some(Drive::Two),
            _ => None,
        }
    }

    pub fn plus(self) -> BoundaryTag {
        match self {
            Drive::One => BoundaryTag::E1plus,
            Drive::Two => BoundaryTag::E2plus,
        }
    }

    pub fn minus(self) -> BoundaryTag {
        match self {
            Drive::One => BoundaryTag::E1minus,
            Drive::Two => BoundaryTag::E2minus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    pub drive: Drive,
    /// Injected current `I_j`; only used when scaling.
    pub current: f64,
    pub apply_scaling: bool,
}

impl DriveConfig {
    pub fn unscaled(drive: Drive) -> DriveConfig {
        DriveConfig {
            drive,
            current: 1.0,
            apply_scaling: false,
        }
    }
}

/// Dirichlet nodes of one drive.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeNodes {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
}

impl ElectrodeNodes {
    pub fn of(mesh: &Mesh, drive: Drive) -> Result<ElectrodeNodes> {
        let plus = mesh.tagged_nodes(drive.plus());
        let minus = mesh.tagged_nodes(drive.minus());
        if plus.is_empty() {
            return Err(MreitError::ElectrodeEmpty(drive.plus()));
        }
        if minus.is_empty() {
            return Err(MreitError::ElectrodeEmpty(drive.minus()));
        }
        Ok(ElectrodeNodes { plus, minus })
    }

    /// `(node, value)` constraints: 1 on `E⁺`, 0 on `E⁻`.
    pub fn constraints(&self) -> Vec<(usize, f64)> {
        self.plus
            .iter()
            .map(|&i| (i, 1.0))
            .chain(self.minus.iter().map(|&i| (i, 0.0)))
            .collect()
    }

    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.plus.iter().chain(&self.minus).copied()
    }
}

/// Solves the two drive problems on a fixed mesh and counts full-order solves.
#[derive(Debug)]
pub struct ForwardSolver<'m> {
    assembler: Assembler<'m>,
    electrodes: [ElectrodeNodes; 2],
    opts: SolverOptions,
    solves: AtomicUsize,
}

impl<'m> ForwardSolver<'m> {
    pub fn new(mesh: &'m Mesh, opts: SolverOptions) -> Result<ForwardSolver<'m>> {
        Ok(ForwardSolver {
            assembler: Assembler::new(mesh),
            electrodes: [
                ElectrodeNodes::of(mesh, Drive::One)?,
                ElectrodeNodes::of(mesh, Drive::Two)?,
            ],
            opts,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.assembler.mesh()
    }

    pub fn assembler(&self) -> &Assembler<'m> {
        &self.assembler
    }

    pub fn electrodes(&self, drive: Drive) -> &ElectrodeNodes {
        &self.electrodes[drive.index()]
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    /// Number of full-order solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Solves one drive for an already assembled stiffness matrix.
    pub fn solve_with_matrix(&self, stiffness: &CsrMatrix, drive: Drive) -> Result<NodalField> {
        let n = stiffness.dim();
        let system = SparseSystem::new(stiffness.clone(), vec![0.0; n])?;
        let system = apply_dirichlet(system, &self.electrodes(drive).constraints())?;
        let (u, _) = solve_spd_with_guess(&system, self.opts, None)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(NodalField(u))
    }

    pub fn solve(&self, sigma: &NodalField, drive: Drive) -> Result<NodalField> {
        let k = self.assembler.stiffness(sigma)?;
        self.solve_with_matrix(&k, drive)
    }

    /// Solves both drives; with `parallel` the two systems run on separate threads.
    /// The results are identical either way.
    pub fn solve_both(&self, sigma: &NodalField, parallel: bool) -> Result<[NodalField; 2]> {
        let k = self.assembler.stiffness(sigma)?;
        self.solve_both_with_matrix(&k, parallel)
    }

    pub fn solve_both_with_matrix(&self, k: &CsrMatrix, parallel: bool) -> Result<[NodalField; 2]> {
        if parallel {
            let (a, b) = std::thread::scope(|s| {
                let h = s.spawn(|| self.solve_with_matrix(k, Drive::Two));
                let a = self.solve_with_matrix(k, Drive::One);
                (a, h.join().expect("drive solve thread panicked"))
            });
            Ok([a?, b?])
        } else {
            Ok([
                self.solve_with_matrix(k, Drive::One)?,
                self.solve_with_matrix(k, Drive::Two)?,
            ])
        }
    }

    /// Solves one drive and applies the configured current scaling.
    pub fn solve_config(&self, sigma: &NodalField, cfg: DriveConfig) -> Result<NodalField> {
        let k = self.assembler.stiffness(sigma)?;
        let u = self.solve_with_matrix(&k, cfg.drive)?;
        if !cfg.apply_scaling {
            return Ok(u);
        }
        if !(cfg.current > 0.0) {
            return Err(MreitError::InvalidArgument(format!(
                "injected current must be positive, got {}",
                cfg.current
            )));
        }
        let flux = flux_through(&k, &u, &self.electrodes(cfg.drive).plus);
        Ok(u.map(|v| v * cfg.current / flux))
    }
}

/// Solves a single drive problem on `mesh` (see [`ForwardSolver`] for repeated solves).
pub fn solve_forward(mesh: &Mesh, sigma: &NodalField, cfg: DriveConfig) -> Result<NodalField> {
    ForwardSolver::new(mesh, SolverOptions::default())?.solve_config(sigma, cfg)
}

fn flux_through(stiffness: &CsrMatrix, u: &NodalField, nodes: &[usize]) -> f64 {
    nodes
        .iter()
        .map(|&i| {
            let (cols, vals) = stiffness.row(i);
            cols.iter().zip(vals).map(|(&j, &a)| a * u[j]).sum::<f64>()
        })
        .sum()
}

/// Variational flux `∫_E σ ∂u/∂n ds = b(u, χ_E; σ)`, with `χ_E` the nodal indicator of
/// the electrode's nodes. Positive for current leaving the domain through `E`.
pub fn electrode_flux(mesh: &Mesh, sigma: &NodalField, u: &NodalField, electrode: BoundaryTag) -> Result<f64> {
    u.check_len(mesh)?;
    let k = Assembler::new(mesh).stiffness(sigma)?;
    let nodes = mesh.tagged_nodes(electrode);
    if nodes.is_empty() {
        return Err(MreitError::ElectrodeEmpty(electrode));
    }
    Ok(flux_through(&k, u, &nodes))
}

/// Total variational flux through the whole boundary (`b(u, 1; σ)`).
pub fn total_boundary_flux(mesh: &Mesh, sigma: &NodalField, u: &NodalField) -> Result<f64> {
    let k = Assembler::new(mesh).stiffness(sigma)?;
    Ok(flux_through(&k, u, &mesh.boundary_nodes()))
}
