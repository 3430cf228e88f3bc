//! Rasterization of nodal fields to 8-bit binary PGM images.

use std::io::Write;
use std::path::Path;

use crate::error::{MreitError, Result};
use crate::fem::NodalField;
use crate::io::write_file;
use crate::mesh::Mesh;

pub const DEFAULT_IMAGE_SIZE: usize = 520;

/// Grey levels, row-major, row 0 at `y = +1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let bytes = self.to_pgm();
        write_file(path, |w: &mut dyn Write| w.write_all(&bytes))
    }
}

/// Maps `value` from `[lo, hi]` to `0..=255`, rounding half up and clamping. A
/// degenerate range maps everything to 128.
pub fn gray_level(value: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 128;
    }
    let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t + 0.5).floor() as u8
}

/// Samples the P1 field at pixel centers of a `width × height` grid over `[-1, 1]²`
/// and maps `range` (default: the sampled min and max) linearly to grey levels. The
/// returned flag is true when the range was degenerate.
pub fn rasterize(
    mesh: &Mesh,
    field: &NodalField,
    width: usize,
    height: usize,
    range: Option<(f64, f64)>,
) -> Result<(GrayImage, bool)> {
    field.check_len(mesh)?;
    if width == 0 || height == 0 {
        return Err(MreitError::InvalidArgument("image size must be positive".into()));
    }
    if mesh.grid_size().is_none() {
        return Err(MreitError::InvalidArgument(
            "rendering requires a structured mesh of [-1, 1]²".into(),
        ));
    }
    let mut samples = Vec::with_capacity(width * height);
    for row in 0..height {
        let y = 1.0 - (2 * row + 1) as f64 / height as f64;
        for col in 0..width {
            let x = -1.0 + (2 * col + 1) as f64 / width as f64;
            samples.push(mesh.evaluate(field, x, y).expect("pixel centers lie inside the domain"));
        }
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    });
    let degenerate = !(hi > lo);
    let pixels = samples.iter().map(|&v| gray_level(v, lo, hi)).collect();
    Ok((GrayImage { width, height, pixels }, degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::standard_mesh;

    #[test]
    fn levels() {
        assert_eq!(gray_level(0.0, 0.0, 1.0), 0);
        assert_eq!(gray_level(1.0, 0.0, 1.0), 255);
        assert_eq!(gray_level(0.5, 0.0, 1.0), 128);
        assert_eq!(gray_level(3.0, 2.0, 2.0), 128);
        assert_eq!(gray_level(-5.0, 0.0, 1.0), 0);
    }

    #[test]
    fn constant_field_is_mid_gray() {
        let m = standard_mesh(20).unwrap();
        let (img, degenerate) = rasterize(&m, &NodalField::constant(m.num_nodes(), 2.0), 16, 8, None).unwrap();
        assert!(degenerate);
        assert!(img.pixels.iter().all(|&p| p == 128));
        assert_eq!(&img.to_pgm()[..11], b"P5\n16 8\n255");
        assert_eq!(img.to_pgm().len(), 12 + 128);
    }

    #[test]
    fn orientation() {
        let m = standard_mesh(20).unwrap();
        let f = NodalField::interpolate(&m, |_, y| y);
        let (img, _) = rasterize(&m, &f, 4, 4, Some((-1.0, 1.0))).unwrap();
        assert!(img.get(0, 0) > img.get(0, 3));
        // row 0 samples y = 0.75
        assert_eq!(img.get(2, 0), gray_level(0.75, -1.0, 1.0));
    }
}
