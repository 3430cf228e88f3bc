//! P1 finite elements: fields, assembly, element gradients, the H1 inner product and
//! the weak-divergence load.

use std::ops::{Deref, DerefMut};

use crate::error::{MreitError, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// One value per mesh node, interpreted as a continuous piecewise-linear function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodalField(pub Vec<f64>);

/// One scalar per triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriField(pub Vec<f64>);

/// One 2-vector per triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriVec2(pub Vec<[f64; 2]>);

/// One 2x2 matrix per triangle, stored row-major as `[[a11, a12], [a21, a22]]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMat2(pub Vec<[[f64; 2]; 2]>);

macro_rules! vec_newtype {
    ($name:ident, $elem:ty) => {
        impl Deref for $name {
            type Target = Vec<$elem>;
            fn deref(&self) -> &Vec<$elem> {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Vec<$elem> {
                &mut self.0
            }
        }

        impl From<Vec<$elem>> for $name {
            fn from(v: Vec<$elem>) -> Self {
                $name(v)
            }
        }
    };
}

vec_newtype!(NodalField, f64);
vec_newtype!(TriField, f64);
vec_newtype!(TriVec2, [f64; 2]);
vec_newtype!(TriMat2, [[f64; 2]; 2]);

impl NodalField {
    pub fn constant(len: usize, value: f64) -> NodalField {
        NodalField(vec![value; len])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> NodalField {
        NodalField(mesh.nodes().iter().map(|p| f(p[0], p[1])).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NodalField {
        NodalField(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Maximum absolute nodal value; the C(Ω) norm of a P1 field.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum nodal absolute difference.
    pub fn max_diff(&self, other: &NodalField) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_len(&self, mesh: &Mesh) -> Result<()> {
        if self.len() != mesh.num_nodes() {
            return Err(MreitError::SizeMismatch {
                expected: mesh.num_nodes(),
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Fails with `NonCoercive` at the first non-positive (or non-finite) value.
    pub fn check_positive(&self) -> Result<()> {
        match self.0.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            Some(node) => Err(MreitError::NonCoercive {
                node,
                value: self.0[node],
            }),
            None => Ok(()),
        }
    }

    /// Arithmetic mean of the vertex values of triangle `t`; equals the centroid value.
    pub fn triangle_mean(&self, mesh: &Mesh, t: usize) -> f64 {
        let [a, b, c] = mesh.triangles()[t];
        (self.0[a] + self.0[b] + self.0[c]) / 3.0
    }
}

fn check_triangle_len(len: usize, mesh: &Mesh) -> Result<()> {
    if len != mesh.num_triangles() {
        return Err(MreitError::SizeMismatch {
            expected: mesh.num_triangles(),
            actual: len,
        });
    }
    Ok(())
}

/// Reusable assembler: caches the sparsity pattern and the per-triangle scatter map
/// so repeated assemblies cost one pass over the triangles.
#[derive(Debug, Clone)]
pub struct Assembler<'m> {
    mesh: &'m Mesh,
    pattern: CsrMatrix,
    scatter: Vec<[usize; 9]>,
}

impl<'m> Assembler<'m> {
    pub fn new(mesh: &'m Mesh) -> Assembler<'m> {
        let pattern = CsrMatrix::mesh_pattern(mesh);
        let scatter = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [0; 9];
                for (a, &i) in tri.iter().enumerate() {
                    for (b, &j) in tri.iter().enumerate() {
                        s[3 * a + b] = pattern.position(i, j).expect("pattern covers triangle");
                    }
                }
                s
            })
            .collect();
        Assembler { mesh, pattern, scatter }
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    fn assemble(&self, local: impl Fn(usize) -> [f64; 9]) -> CsrMatrix {
        let mut m = self.pattern.clone();
        let values = m.values_mut();
        for (t, s) in self.scatter.iter().enumerate() {
            let k = local(t);
            for (pos, v) in s.iter().zip(k) {
                values[*pos] += v;
            }
        }
        m
    }

    fn local_stiffness(&self, t: usize, coefficient: f64) -> [f64; 9] {
        let g = self.mesh.shape_grads(t);
        let w = coefficient * self.mesh.area(t);
        let mut k = [0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                k[3 * a + b] = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
        k
    }

    /// Stiffness of `∫ σ ∇u·∇v` with σ per triangle taken as the vertex mean.
    pub fn stiffness(&self, sigma: &NodalField) -> Result<CsrMatrix> {
        sigma.check_len(self.mesh)?;
        sigma.check_positive()?;
        Ok(self.assemble(|t| self.local_stiffness(t, sigma.triangle_mean(self.mesh, t))))
    }

    /// Stiffness with σ ≡ 1.
    pub fn unit_stiffness(&self) -> CsrMatrix {
        self.assemble(|t| self.local_stiffness(t, 1.0))
    }

    /// Consistent P1 mass matrix.
    pub fn mass(&self) -> CsrMatrix {
        self.assemble(|t| {
            let w = self.mesh.area(t) / 12.0;
            let mut m = [w; 9];
            m[0] = 2.0 * w;
            m[4] = 2.0 * w;
            m[8] = 2.0 * w;
            m
        })
    }

    /// Gram matrix of the H1 inner product (mass + unit stiffness).
    pub fn h1_gram(&self) -> CsrMatrix {
        let mut g = self.mass();
        let k = self.unit_stiffness();
        g.values_mut().iter_mut().zip(k.values()).for_each(|(a, b)| *a += b);
        g
    }
}

/// Stiffness matrix of `b(u,v;σ) = ∫ σ ∇u·∇v` for a nodal σ.
pub fn assemble_stiffness(mesh: &Mesh, sigma: &NodalField) -> Result<CsrMatrix> {
    Assembler::new(mesh).stiffness(sigma)
}

/// Exact per-triangle gradient of a P1 field. Evaluated from vertex differences, so a
/// triangle with three equal vertex values gets a gradient of exactly zero.
pub fn element_gradients(mesh: &Mesh, u: &NodalField) -> TriVec2 {
    TriVec2(
        (0..mesh.num_triangles())
            .map(|t| triangle_gradient(mesh, u, t))
            .collect(),
    )
}

pub(crate) fn triangle_gradient(mesh: &Mesh, u: &[f64], t: usize) -> [f64; 2] {
    let [a, b, c] = mesh.triangles()[t];
    let g = mesh.shape_grads(t);
    let (db, dc) = (u[b] - u[a], u[c] - u[a]);
    [db * g[1][0] + dc * g[2][0], db * g[1][1] + dc * g[2][1]]
}

/// `∫ uv + ∇u·∇v` with exact P1 integration.
pub fn h1_inner(mesh: &Mesh, u: &NodalField, v: &NodalField) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let area = mesh.area(t);
            let uu = tri.map(|k| u[k]);
            let vv = tri.map(|k| v[k]);
            let diag: f64 = uu.iter().zip(&vv).map(|(a, b)| a * b).sum();
            let mass = area / 12.0 * (diag + uu.iter().sum::<f64>() * vv.iter().sum::<f64>());
            let g = mesh.shape_grads(t);
            let mut gu = [0.0; 2];
            let mut gv = [0.0; 2];
            for a in 0..3 {
                gu[0] += uu[a] * g[a][0];
                gu[1] += uu[a] * g[a][1];
                gv[0] += vv[a] * g[a][0];
                gv[1] += vv[a] * g[a][1];
            }
            mass + area * (gu[0] * gv[0] + gu[1] * gv[1])
        })
        .sum()
}

pub fn h1_norm(mesh: &Mesh, u: &NodalField) -> f64 {
    h1_inner(mesh, u, u).max(0.0).sqrt()
}

/// Load vector `b_i = Σ_T |T| V_T·∇φ_i|_T`, i.e. `∫ V·∇φ_i` for piecewise-constant V.
pub fn weak_divergence_rhs(mesh: &Mesh, field: &TriVec2) -> Result<Vec<f64>> {
    check_triangle_len(field.len(), mesh)?;
    let mut rhs = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.shape_grads(t);
        let w = mesh.area(t);
        let v = field[t];
        for (a, &i) in tri.iter().enumerate() {
            rhs[i] += w * (v[0] * g[a][0] + v[1] * g[a][1]);
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn gradients_reproduce_linears() {
        let m = build_structured_mesh(5).unwrap();
        let u = NodalField::interpolate(&m, |x, _| x);
        for g in element_gradients(&m, &u).iter() {
            assert!((g[0] - 1.0).abs() < 1e-13 && g[1].abs() < 1e-13);
        }
        let u = NodalField::interpolate(&m, |x, y| 3.0 * x - 2.0 * y);
        for g in element_gradients(&m, &u).iter() {
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
        }
        let u = NodalField::constant(m.num_nodes(), 4.2);
        for g in element_gradients(&m, &u).iter() {
            assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        }
    }

    #[test]
    fn h1_of_constant_and_x() {
        let m = build_structured_mesh(7).unwrap();
        let one = NodalField::constant(m.num_nodes(), 1.0);
        assert!((h1_inner(&m, &one, &one) - 4.0).abs() < 1e-12);
        // P1 mass integrates products of linears exactly: ∫x² = 4/3, ∫|∇x|² = 4
        let x = NodalField::interpolate(&m, |x, _| x);
        assert!((h1_inner(&m, &x, &x) - 16.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn h1_inner_matches_gram() {
        let m = build_structured_mesh(4).unwrap();
        let u = NodalField::interpolate(&m, |x, y| (x * 3.0).sin() + y * y);
        let v = NodalField::interpolate(&m, |x, y| x * y - 0.3);
        let g = Assembler::new(&m).h1_gram();
        assert!((h1_inner(&m, &u, &v) - g.bilinear(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn n1_corner_diagonal_is_one() {
        // Two right triangles with legs 2; the corners (-1,-1) and (1,1) are shared.
        let m = build_structured_mesh(1).unwrap();
        let k = assemble_stiffness(&m, &NodalField::constant(4, 1.0)).unwrap();
        assert!((k.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((k.get(3, 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stiffness_linear_in_constant_sigma() {
        let m = build_structured_mesh(3).unwrap();
        let k1 = assemble_stiffness(&m, &NodalField::constant(16, 1.0)).unwrap();
        let k3 = assemble_stiffness(&m, &NodalField::constant(16, 2.5)).unwrap();
        for (a, b) in k1.values().iter().zip(k3.values()) {
            assert!((2.5 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_rejects_nonpositive_sigma() {
        let m = build_structured_mesh(2).unwrap();
        let mut s = NodalField::constant(9, 1.0);
        s[4] = 0.0;
        assert!(matches!(
            assemble_stiffness(&m, &s),
            Err(MreitError::NonCoercive { node: 4, .. })
        ));
    }

    #[test]
    fn weak_divergence_of_zero() {
        let m = build_structured_mesh(3).unwrap();
        let v = TriVec2(vec![[0.0; 2]; m.num_triangles()]);
        assert!(weak_divergence_rhs(&m, &v).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weak_divergence_of_constant_field_n2() {
        // Direct quadrature: ∫ ∂φ_i/∂x = Σ_T |T| ∂φ_i/∂x|_T, each hat-function slope
        // is ±1 on unit squares. Interior node: zero. Left/right edge midpoints: -1/+1 .
        let m = build_structured_mesh(2).unwrap();
        let v = TriVec2(vec![[1.0, 0.0]; 8]);
        let rhs = weak_divergence_rhs(&m, &v).unwrap();
        assert!(rhs[4].abs() < 1e-15);
        // ∫ ∂φ_i/∂x = ∮ φ_i n_x: boundary nodes on x=±1 have |∫| = ±(edge support length)/2
        let expected = [-0.5, 0.0, 0.5, -1.0, 0.0, 1.0, -0.5, 0.0, 0.5];
        for (a, b) in rhs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{rhs:?}");
        }
    }
}
