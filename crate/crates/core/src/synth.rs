//! Synthetic Laplacian-of-Bz data:
//! `∇²B_z^j = μ₀ (∂σ/∂x ∂u_j/∂y − ∂σ/∂y ∂u_j/∂x)` per triangle, optionally computed on
//! a refined mesh, plus relative Gaussian noise.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MreitError, Result};
use crate::fem::{element_gradients, NodalField, TriField};
use crate::forward::ForwardSolver;
use crate::mesh::Mesh;
use crate::phantom::Phantom;
use crate::sparse::SolverOptions;

/// Noise applied to a data set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInfo {
    pub level: f64,
    pub seed: u64,
}

/// Per-triangle Laplacians of the two Bz data sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBzData {
    pub lap1: TriField,
    pub lap2: TriField,
    pub noise: Option<NoiseInfo>,
}

impl LaplacianBzData {
    pub fn zeros(num_triangles: usize) -> LaplacianBzData {
        LaplacianBzData {
            lap1: TriField(vec![0.0; num_triangles]),
            lap2: TriField(vec![0.0; num_triangles]),
            noise: None,
        }
    }

    pub fn num_triangles(&self) -> usize {
        self.lap1.len()
    }

    pub fn channel(&self, j: usize) -> &TriField {
        if j == 0 {
            &self.lap1
        } else {
            &self.lap2
        }
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.lap1.len() != mesh.num_triangles() || self.lap2.len() != mesh.num_triangles() {
            return Err(MreitError::MeshMismatch(format!(
                "data has {}/{} triangles, mesh has {}",
                self.lap1.len(),
                self.lap2.len(),
                mesh.num_triangles()
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.lap1.iter().chain(self.lap2.iter()).all(|&v| v == 0.0)
    }
}

/// Data from given conductivity and potentials on the same mesh.
pub fn laplacian_from_solutions(
    mesh: &Mesh,
    sigma: &NodalField,
    potentials: &[NodalField; 2],
    mu0: f64,
) -> LaplacianBzData {
    let gs = element_gradients(mesh, sigma);
    let channel = |u: &NodalField| -> TriField {
        let gu = element_gradients(mesh, u);
        TriField(
            gs.iter()
                .zip(gu.iter())
                .map(|(s, u)| mu0 * (s[0] * u[1] - s[1] * u[0]))
                .collect(),
        )
    };
    LaplacianBzData {
        lap1: channel(&potentials[0]),
        lap2: channel(&potentials[1]),
        noise: None,
    }
}

/// Solves both forward problems for `sigma_star` and evaluates the data identity on
/// every triangle of the same mesh (inverse-crime mode).
pub fn synthesize_laplacian_bz(mesh: &Mesh, sigma_star: &NodalField, mu0: f64) -> Result<LaplacianBzData> {
    let solver = ForwardSolver::new(mesh, SolverOptions::default())?;
    synthesize_with(&solver, sigma_star, mu0)
}

pub fn synthesize_with(solver: &ForwardSolver<'_>, sigma_star: &NodalField, mu0: f64) -> Result<LaplacianBzData> {
    sigma_star.check_len(solver.mesh())?;
    sigma_star.check_positive()?;
    let potentials = solver.solve_both(sigma_star, false)?;
    Ok(laplacian_from_solutions(solver.mesh(), sigma_star, &potentials, mu0))
}

/// Synthesizes data on a mesh refined `levels` times (each triangle into four) with
/// σ* sampled from `phantom` at the fine nodes, then maps it back to `mesh` by an
/// area-weighted average over each coarse triangle's descendants. `levels = 0`
/// synthesizes directly on `mesh`.
pub fn synthesize_refined(mesh: &Mesh, phantom: &dyn Phantom, levels: usize, mu0: f64) -> Result<LaplacianBzData> {
    let mut fine = mesh.clone();
    for _ in 0..levels {
        fine = fine.refine_uniform()?;
    }
    let sigma = phantom.nodal(&fine);
    let data = synthesize_laplacian_bz(&fine, &sigma, mu0)?;
    let per_coarse = 4usize.pow(levels as u32);
    Ok(LaplacianBzData {
        lap1: TriField(aggregate(&fine, &data.lap1, per_coarse)),
        lap2: TriField(aggregate(&fine, &data.lap2, per_coarse)),
        noise: None,
    })
}

/// Area-weighted mean over consecutive groups of `group` fine triangles.
pub fn aggregate(fine: &Mesh, values: &[f64], group: usize) -> Vec<f64> {
    values
        .chunks(group)
        .zip(fine.areas().chunks(group))
        .map(|(v, a)| {
            let total: f64 = a.iter().sum();
            v.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() / total
        })
        .collect()
}

/// Standard normal draws of one channel: draw `t` consumes the 64-bit words
/// `2t, 2t+1` of ChaCha8 stream `channel` (Box-Muller, cosine branch).
fn normal_stream(seed: u64, channel: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel);
    let mut unit = move || ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    (0..count)
        .map(|_| {
            let u1 = unit();
            let u2 = unit();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// Adds relative Gaussian noise per triangle: `out = in + level·ref·g`, with `ref = |in|`
/// where the value is non-zero and the channel's mean absolute value elsewhere.
pub fn add_relative_noise(data: &LaplacianBzData, level: f64, seed: u64) -> Result<LaplacianBzData> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(MreitError::InvalidArgument(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    let noisy = |values: &TriField, channel: u64| -> TriField {
        if level == 0.0 {
            return values.clone();
        }
        let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / values.len().max(1) as f64;
        let draws = normal_stream(seed, channel, values.len());
        TriField(
            values
                .iter()
                .zip(draws)
                .map(|(&v, g)| {
                    let reference = if v != 0.0 { v.abs() } else { mean_abs };
                    v + level * reference * g
                })
                .collect(),
        )
    };
    Ok(LaplacianBzData {
        lap1: noisy(&data.lap1, 0),
        lap2: noisy(&data.lap2, 1),
        noise: Some(NoiseInfo { level, seed }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::standard_mesh;
    use crate::phantom::{Constant, SmoothBumps};

    #[test]
    fn constant_sigma_gives_zero_data() {
        let m = standard_mesh(20).unwrap();
        let d = synthesize_laplacian_bz(&m, &NodalField::constant(m.num_nodes(), 1.7), 1.0).unwrap();
        assert!(d.is_zero());
        let d = synthesize_refined(&m, &Constant(2.0), 1, 1.0).unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn refinement_changes_data() {
        let m = standard_mesh(20).unwrap();
        let p = SmoothBumps::low_contrast();
        let d0 = synthesize_refined(&m, &p, 0, 1.0).unwrap();
        let d1 = synthesize_refined(&m, &p, 1, 1.0).unwrap();
        let diff = d0
            .lap1
            .iter()
            .zip(d1.lap1.iter())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff > 0.0);
    }

    #[test]
    fn aggregate_of_constant() {
        let m = standard_mesh(20).unwrap().refine_uniform().unwrap();
        let v = vec![3.25; m.num_triangles()];
        assert!(aggregate(&m, &v, 4).iter().all(|&x| (x - 3.25).abs() < 1e-15));
    }

    #[test]
    fn linear_in_mu0() {
        let m = standard_mesh(20).unwrap();
        let s = SmoothBumps::low_contrast().nodal(&m);
        let d1 = synthesize_laplacian_bz(&m, &s, 1.0).unwrap();
        let d2 = synthesize_laplacian_bz(&m, &s, 2.0).unwrap();
        for (a, b) in d1.lap2.iter().zip(d2.lap2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_noise_is_identity_and_seed_is_deterministic() {
        let d = LaplacianBzData {
            lap1: TriField(vec![1.0, 0.0, -2.0, 0.5]),
            lap2: TriField(vec![0.0, 3.0, 0.0, -1.0]),
            noise: None,
        };
        let z = add_relative_noise(&d, 0.0, 5).unwrap();
        assert_eq!(z.lap1, d.lap1);
        assert_eq!(z.lap2, d.lap2);
        let a = add_relative_noise(&d, 0.1, 42).unwrap();
        let b = add_relative_noise(&d, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = add_relative_noise(&d, 0.1, 43).unwrap();
        assert_ne!(a.lap1, c.lap1);
        // zeros receive noise scaled by the channel mean |value|
        assert!(a.lap2[0] != 0.0);
    }

    #[test]
    fn noise_statistics() {
        let n = 135_200;
        let d = LaplacianBzData {
            lap1: TriField((0..n).map(|t| ((t % 7) as f64 - 3.0) * 0.25).collect()),
            lap2: TriField((0..n).map(|t| 1.0 + (t % 3) as f64).collect()),
            noise: None,
        };
        let level = 0.1;
        let out = add_relative_noise(&d, level, 7).unwrap();
        for j in 0..2 {
            let input = d.channel(j);
            let mean_abs = input.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
            let z: Vec<f64> = input
                .iter()
                .zip(out.channel(j).iter())
                .map(|(&i, &o)| {
                    let r = if i != 0.0 { i.abs() } else { mean_abs };
                    (o - i) / (level * r)
                })
                .collect();
            let mean = z.iter().sum::<f64>() / n as f64;
            let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!((0.98..=1.02).contains(&std), "channel {j}: std {std}");
        }
    }
}
