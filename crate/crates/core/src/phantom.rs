//! Conductivity phantoms: the pixelated Shepp-Logan head phantom, a smooth
//! low-contrast bump phantom and constants, all on the square [-1,1]².

use crate::error::{MreitError, Result};
use crate::fem::NodalField;
use crate::mesh::Mesh;

/// One ellipse of the Shepp-Logan phantom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the ellipse's own x and y directions.
    pub axes: [f64; 2],
    /// Counterclockwise rotation in degrees.
    pub angle_deg: f64,
    pub intensity: f64,
}

const fn ellipse(cx: f64, cy: f64, a: f64, b: f64, angle_deg: f64, intensity: f64) -> Ellipse {
    Ellipse {
        center: [cx, cy],
        axes: [a, b],
        angle_deg,
        intensity,
    }
}

/// The classical ten-ellipse Shepp-Logan table (original intensities, not the
/// contrast-enhanced "modified" variant).
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    ellipse(0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    ellipse(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    ellipse(0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    ellipse(-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    ellipse(0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    ellipse(0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    ellipse(0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    ellipse(-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    ellipse(0.0, -0.606, 0.023, 0.023, 0.0, 0.01),
    ellipse(0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
];

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) <= 1.0
    }
}

/// Shepp-Logan intensity at a point (without offset).
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|e| e.contains(x, y))
        .map(|e| e.intensity)
        .sum()
}

/// Any conductivity model that can be sampled pointwise on [-1,1]².
pub trait Phantom {
    fn value(&self, x: f64, y: f64) -> f64;

    /// Nodal samples on a mesh.
    fn nodal(&self, mesh: &Mesh) -> NodalField {
        NodalField::interpolate(mesh, |x, y| self.value(x, y))
    }
}

/// Pixel grid over [-1,1]²; pixel `(ix, iy)` is stored at `ix + iy * nx` and its
/// center is at `(-1 + (ix + ½)·2/nx, -1 + (iy + ½)·2/ny)`, i.e. `iy` grows with `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPhantom {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl PixelPhantom {
    pub fn from_fn(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> Result<PixelPhantom> {
        if nx == 0 || ny == 0 {
            return Err(MreitError::InvalidArgument(format!(
                "pixel grid must be non-empty, got {nx}x{ny}"
            )));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let (x, y) = pixel_center(ix, iy, nx, ny);
                values.push(f(x, y));
            }
        }
        Ok(PixelPhantom { nx, ny, values })
    }

    /// Shepp-Logan intensities at pixel centers plus `offset`.
    pub fn shepp_logan(nx: usize, ny: usize, offset: f64) -> Result<PixelPhantom> {
        PixelPhantom::from_fn(nx, ny, |x, y| offset + shepp_logan_value(x, y))
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Result<PixelPhantom> {
        PixelPhantom::from_fn(nx, ny, |_, _| value)
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix + iy * self.nx]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn pixel_center(ix: usize, iy: usize, nx: usize, ny: usize) -> (f64, f64) {
    (
        -1.0 + (2 * ix + 1) as f64 / nx as f64,
        -1.0 + (2 * iy + 1) as f64 / ny as f64,
    )
}

/// Continuous pixel coordinate clamped to the outermost centers: lower index and weight.
fn bilinear_axis(v: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let s = ((v + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (s.floor() as usize).min(n - 2);
    (i0, s - i0 as f64)
}

impl Phantom for PixelPhantom {
    /// Bilinear interpolation between pixel centers, constant extension beyond the
    /// outermost centers.
    fn value(&self, x: f64, y: f64) -> f64 {
        let (i0, wx) = bilinear_axis(x, self.nx);
        let (j0, wy) = bilinear_axis(y, self.ny);
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        (1.0 - wy) * ((1.0 - wx) * self.get(i0, j0) + wx * self.get(i1, j0))
            + wy * ((1.0 - wx) * self.get(i0, j1) + wx * self.get(i1, j1))
    }
}

/// Bilinear sampling of a pixel grid at the mesh nodes. With `n = nx = ny` nodes fall
/// on pixel corners and receive the mean of the (up to four) adjacent pixels.
pub fn pixels_to_nodal(phantom: &PixelPhantom, mesh: &Mesh) -> NodalField {
    phantom.nodal(mesh)
}

/// A compactly supported smooth bump `amplitude · (1 - |r - c|²/R²)³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

/// Background conductivity plus disjoint smooth bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBumps {
    pub background: f64,
    pub bumps: Vec<Bump>,
}

impl SmoothBumps {
    /// Low-contrast phantom with values in [1, 1.3], supported in the disk of radius 0.75.
    pub fn low_contrast() -> SmoothBumps {
        SmoothBumps {
            background: 1.0,
            bumps: vec![
                Bump {
                    center: [0.3, 0.2],
                    radius: 0.35,
                    amplitude: 0.3,
                },
                Bump {
                    center: [-0.35, -0.25],
                    radius: 0.3,
                    amplitude: 0.2,
                },
            ],
        }
    }
}

impl Phantom for SmoothBumps {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.background
            + self
                .bumps
                .iter()
                .map(|b| {
                    let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                    let s = 1.0 - d2 / (b.radius * b.radius);
                    if s > 0.0 {
                        b.amplitude * s * s * s
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
    }
}

/// Spatially constant conductivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Phantom for Constant {
    fn value(&self, _x: f64, _y: f64) -> f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    #[test]
    fn outside_is_offset() {
        let p = PixelPhantom::shepp_logan(64, 64, 1.0).unwrap();
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(63, 0), 1.0);
    }

    #[test]
    fn center_pixel_value() {
        // Ellipses 1 and 2 contain the origin: 1 + 2.0 - 0.98.
        let p = PixelPhantom::shepp_logan(261, 261, 1.0).unwrap();
        assert!((p.get(130, 130) - 2.02).abs() < 1e-12);
    }

    #[test]
    fn constant_phantom_to_constant_field() {
        let p = PixelPhantom::constant(17, 9, 1.7).unwrap();
        let m = build_structured_mesh(6).unwrap();
        let f = pixels_to_nodal(&p, &m);
        assert!(f.iter().all(|&v| (v - 1.7).abs() < 1e-15));
    }

    #[test]
    fn matched_grids_average_corners() {
        let p = PixelPhantom::from_fn(8, 8, |x, y| (3.0 * x).sin() + y * y * 2.0).unwrap();
        let m = build_structured_mesh(8).unwrap();
        let f = pixels_to_nodal(&p, &m);
        for j in 0..=8usize {
            for i in 0..=8usize {
                let xs = [i.saturating_sub(1), i.min(7)];
                let ys = [j.saturating_sub(1), j.min(7)];
                let mut expected = 0.0;
                for &a in &xs {
                    for &b in &ys {
                        expected += 0.25 * p.get(a, b);
                    }
                }
                let got = f[i + 9 * j];
                assert!((got - expected).abs() < 1e-13, "({i},{j}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn bumps_range() {
        let s = SmoothBumps::low_contrast();
        assert_eq!(s.value(0.3, 0.2), 1.3);
        assert_eq!(s.value(0.9, -0.9), 1.0);
        let m = build_structured_mesh(64).unwrap();
        let f = s.nodal(&m);
        assert!(f.min() >= 1.0 && f.max() <= 1.3);
    }
}
