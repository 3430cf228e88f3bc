//! Row-compressed sparse matrices, Dirichlet elimination and a Jacobi-preconditioned
//! conjugate gradient solver.

use std::collections::BTreeMap;

use crate::error::{MreitError, Result};
use crate::mesh::Mesh;

/// Square sparse matrix in compressed-row storage. Column indices are sorted per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the node-adjacency sparsity of a P1 mesh (diagonal included).
    pub fn mesh_pattern(mesh: &Mesh) -> CsrMatrix {
        let n = mesh.num_nodes();
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    rows[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<CsrMatrix> {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(MreitError::InvalidArgument(format!(
                    "triplet ({i},{j}) outside a {n}x{n} matrix"
                )));
            }
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Position of entry `(i, j)` in the value array, if stored.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| {
                let (cols, vals) = self.row(i);
                x[i] * cols.iter().zip(vals).map(|(&j, &a)| a * y[j]).sum::<f64>()
            })
            .sum()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &a) in cols.iter().zip(vals) {
                m[(i, j)] = a;
            }
        }
        m
    }
}

/// A linear system together with the Dirichlet constraints already applied to it.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Constrained nodes with their prescribed values, sorted by node.
    pub constraints: Vec<(usize, f64)>,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<SparseSystem> {
        if rhs.len() != matrix.dim() {
            return Err(MreitError::SizeMismatch {
                expected: matrix.dim(),
                actual: rhs.len(),
            });
        }
        Ok(SparseSystem {
            matrix,
            rhs,
            constraints: Vec::new(),
        })
    }
}

/// Symmetric elimination of Dirichlet constraints. Constrained rows and columns are
/// zeroed, their diagonal set to one and the right-hand side adjusted so that the
/// constrained unknowns solve exactly to their prescribed values.
pub fn apply_dirichlet(mut system: SparseSystem, constraints: &[(usize, f64)]) -> Result<SparseSystem> {
    let n = system.matrix.dim();
    let mut prescribed: Vec<Option<f64>> = vec![None; n];
    for &(node, value) in system.constraints.iter().chain(constraints) {
        if node >= n {
            return Err(MreitError::InvalidArgument(format!(
                "constraint on node {node} outside a system of size {n}"
            )));
        }
        match prescribed[node] {
            Some(first) if first != value => {
                return Err(MreitError::ConflictingConstraint {
                    node,
                    first,
                    second: value,
                })
            }
            _ => prescribed[node] = Some(value),
        }
    }
    let CsrMatrix {
        row_ptr,
        col_idx,
        values,
    } = &mut system.matrix;
    for i in 0..n {
        let range = row_ptr[i]..row_ptr[i + 1];
        if let Some(g) = prescribed[i] {
            let mut has_diag = false;
            for k in range {
                if col_idx[k] == i {
                    values[k] = 1.0;
                    has_diag = true;
                } else {
                    values[k] = 0.0;
                }
            }
            if !has_diag {
                return Err(MreitError::InvalidArgument(format!("row {i} has no stored diagonal")));
            }
            system.rhs[i] = g;
        } else {
            for k in range {
                if let Some(g) = prescribed[col_idx[k]] {
                    system.rhs[i] -= values[k] * g;
                    values[k] = 0.0;
                }
            }
        }
    }
    system.constraints = prescribed
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.map(|g| (i, g)))
        .collect();
    Ok(system)
}

/// Options of the conjugate gradient solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance `||Ax-b|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Achieved relative residual.
    pub residual: f64,
}

/// Solves an SPD system with Jacobi-preconditioned conjugate gradients.
pub fn solve_spd(system: &SparseSystem, opts: SolverOptions) -> Result<Vec<f64>> {
    solve_spd_with_guess(system, opts, None).map(|(x, _)| x)
}

/// Like [`solve_spd`], optionally starting from an initial guess, and reporting
/// iteration statistics.
pub fn solve_spd_with_guess(
    system: &SparseSystem,
    opts: SolverOptions,
    guess: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveStats)> {
    solve_csr(&system.matrix, &system.rhs, &system.constraints, opts, guess)
}

/// Conjugate gradient on a matrix whose `constraints` were already eliminated with
/// [`apply_dirichlet`]; `b` must carry the matching right-hand side.
pub fn solve_csr(
    a: &CsrMatrix,
    b: &[f64],
    constraints: &[(usize, f64)],
    opts: SolverOptions,
    guess: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(MreitError::SizeMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if constraints.is_empty() && annihilates_constants(a) {
        return Err(MreitError::SingularSystem);
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => {
            return Err(MreitError::SizeMismatch {
                expected: n,
                actual: g.len(),
            })
        }
        None => vec![0.0; n],
    };
    for &(i, g) in constraints {
        x[i] = g;
    }
    let mut r = a.mul_vec(&x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = opts.tol * b_norm;

    let mut res = norm(&r);
    for it in 0..=opts.max_iter {
        if res <= target {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    residual: res / b_norm,
                },
            ));
        }
        if it == opts.max_iter {
            break;
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(MreitError::SingularSystem);
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = norm(&r);
    }
    Err(MreitError::NoConvergence {
        iterations: opts.max_iter,
        residual: res / b_norm,
    })
}

fn annihilates_constants(a: &CsrMatrix) -> bool {
    let scale = a.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 {
        return true;
    }
    (0..a.dim()).all(|i| a.row(i).1.iter().sum::<f64>().abs() <= 1e-12 * scale)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse Cholesky factorization of a fixed SPD matrix, for systems solved many
/// times with different right-hand sides.
pub struct SpdFactor {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    dim: usize,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("dim", &self.dim).finish()
    }
}

impl SpdFactor {
    /// Factorizes `a`, which must be symmetric positive definite (for instance after
    /// [`apply_dirichlet`]).
    pub fn new(a: &CsrMatrix) -> Result<SpdFactor> {
        let n = a.dim();
        let mut triplets = Vec::with_capacity(a.nnz());
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    triplets.push(faer::sparse::Triplet::new(i, j, v));
                }
            }
        }
        let lower = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| MreitError::InvalidArgument(format!("sparse factorization input: {e:?}")))?;
        let llt = lower
            .sp_cholesky(faer::Side::Lower)
            .map_err(|_| MreitError::SingularSystem)?;
        Ok(SpdFactor { llt, dim: n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        use faer::linalg::solvers::Solve;
        if b.len() != self.dim {
            return Err(MreitError::SizeMismatch {
                expected: self.dim,
                actual: b.len(),
            });
        }
        let mut x = faer::Mat::<f64>::from_fn(self.dim, 1, |i, _| b[i]);
        self.llt.solve_in_place(x.as_mut());
        Ok((0..self.dim).map(|i| x[(i, 0)]).collect())
    }
}
