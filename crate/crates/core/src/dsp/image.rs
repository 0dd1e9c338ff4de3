//! Reshaping the envelope into a square grid and 16-bit image quantization.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{bail, Result};
use crate::numerics::Tensor;
use crate::HeightClass;

use super::ComplexEnvelope;

pub const CODE_MAX: u16 = u16::MAX;
/// Code that zero quantizes to.
pub const CODE_ZERO: u16 = 32_768;

/// Square complex grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    side: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(side: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != side * side {
            bail!(
                Argument,
                "{} samples cannot fill a {side}x{side} grid",
                data.len()
            );
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.side + col]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn flatten(self) -> Vec<Complex64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            side: self.side,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }
}

/// Row-major fill: element `(r, c)` holds sample `side·r + c`.
pub fn reshape_square(env: &ComplexEnvelope, side: usize) -> Result<ComplexGrid> {
    ComplexGrid::new(side, env.samples().to_vec())
}

/// Two-channel 16-bit image of the complex envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeImage {
    side: usize,
    re: Vec<u16>,
    im: Vec<u16>,
    scale: f64,
    label: Option<HeightClass>,
}

impl EnvelopeImage {
    pub fn new(
        side: usize,
        re: Vec<u16>,
        im: Vec<u16>,
        scale: f64,
        label: Option<HeightClass>,
    ) -> Result<Self> {
        if re.len() != side * side || im.len() != side * side {
            bail!(
                Shape,
                "channel lengths {}/{} for side {side}",
                re.len(),
                im.len()
            );
        }
        check_scale(scale)?;
        Ok(Self {
            side,
            re,
            im,
            scale,
            label,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn re(&self) -> &[u16] {
        &self.re
    }

    pub fn im(&self) -> &[u16] {
        &self.im
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn label(&self) -> Option<HeightClass> {
        self.label
    }

    pub fn with_label(mut self, label: Option<HeightClass>) -> Self {
        self.label = label;
        self
    }

    pub fn dequantize(&self) -> ComplexGrid {
        let data = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| {
                Complex64::new(
                    dequantize_code(r, self.scale),
                    dequantize_code(i, self.scale),
                )
            })
            .collect();
        ComplexGrid {
            side: self.side,
            data,
        }
    }

    /// Network input: `side × side × 2` tensor (real, imaginary) in `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.re.len());
        for (&r, &i) in self.re.iter().zip(&self.im) {
            data.push(dequantize_code(r, 1.0));
            data.push(dequantize_code(i, 1.0));
        }
        Tensor::from_parts(alloc::vec![self.side, self.side, 2], data)
    }
}

/// Single-channel 16-bit image of the envelope magnitude over `[0, scale]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeImage {
    side: usize,
    mag: Vec<u16>,
    scale: f64,
    label: Option<HeightClass>,
}

impl MagnitudeImage {
    pub fn new(side: usize, mag: Vec<u16>, scale: f64, label: Option<HeightClass>) -> Result<Self> {
        if mag.len() != side * side {
            bail!(Shape, "magnitude length {} for side {side}", mag.len());
        }
        check_scale(scale)?;
        Ok(Self {
            side,
            mag,
            scale,
            label,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn magnitude(&self) -> &[u16] {
        &self.mag
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn label(&self) -> Option<HeightClass> {
        self.label
    }

    /// Network input: `side × side × 1` tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .mag
            .iter()
            .map(|&m| m as f64 / CODE_MAX as f64)
            .collect();
        Tensor::from_parts(alloc::vec![self.side, self.side, 1], data)
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        bail!(Argument, "quantization scale must be positive, got {scale}");
    }
    Ok(())
}

/// `round((x/scale + 1)/2 · 65535)` with halves rounded up; inputs are clipped
/// to `[-scale, scale]`.
fn quantize_value(x: f64, scale: f64, clipped: &mut usize) -> u16 {
    let mut v = x / scale;
    if v > 1.0 {
        v = 1.0;
        *clipped += 1;
    } else if v < -1.0 {
        v = -1.0;
        *clipped += 1;
    }
    libm::floor((v + 1.0) / 2.0 * CODE_MAX as f64 + 0.5) as u16
}

pub fn dequantize_code(code: u16, scale: f64) -> f64 {
    (2.0 * code as f64 / CODE_MAX as f64 - 1.0) * scale
}

/// Quantizes both channels; returns the image and the number of clipped
/// components.
pub fn quantize16(grid: &ComplexGrid, scale: f64) -> Result<(EnvelopeImage, usize)> {
    check_scale(scale)?;
    let mut clipped = 0;
    let mut re = Vec::with_capacity(grid.data.len());
    let mut im = Vec::with_capacity(grid.data.len());
    for z in &grid.data {
        re.push(quantize_value(z.re, scale, &mut clipped));
        im.push(quantize_value(z.im, scale, &mut clipped));
    }
    let img = EnvelopeImage {
        side: grid.side,
        re,
        im,
        scale,
        label: None,
    };
    Ok((img, clipped))
}

/// Requantizes `|envelope|` over `[0, scale]`.
///
/// No code dequantizes exactly to zero, so the magnitude of the zero-code
/// offset (one code per channel) is treated as the floor of the scale: the
/// all-zero element maps to 0 and a full-scale component to 65535.
pub fn magnitude_image(img: &EnvelopeImage) -> MagnitudeImage {
    let floor = dequantize_code(CODE_ZERO, img.scale);
    let span = img.scale - floor;
    let mag = img
        .dequantize()
        .as_slice()
        .iter()
        .map(|z| {
            let m = (z.norm() - floor).max(0.0) / span;
            libm::floor(m.min(1.0) * CODE_MAX as f64 + 0.5) as u16
        })
        .collect();
    MagnitudeImage {
        side: img.side,
        mag,
        scale: img.scale,
        label: img.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid_of(values: &[Complex64]) -> ComplexGrid {
        let side = libm::sqrt(values.len() as f64) as usize;
        ComplexGrid::new(side, values.to_vec()).unwrap()
    }

    #[test]
    fn reshape_is_row_major() {
        let samples: Vec<Complex64> = (0..196).map(|k| Complex64::new(k as f64, 0.0)).collect();
        let env = ComplexEnvelope::new(samples.clone(), 6500.0, 0.03);
        let grid = reshape_square(&env, 14).unwrap();
        assert_eq!(grid.get(0, 0).re, 0.0);
        assert_eq!(grid.get(0, 13).re, 13.0);
        assert_eq!(grid.get(1, 0).re, 14.0);
        assert_eq!(grid.flatten(), samples);
    }

    #[test]
    fn reshape_rejects_wrong_length() {
        let env = ComplexEnvelope::new(vec![Complex64::new(0.0, 0.0); 195], 6500.0, 0.03);
        assert!(matches!(
            reshape_square(&env, 14),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn quantizer_codes() {
        let s = 0.5;
        let g = grid_of(&[
            Complex64::new(0.0, s),
            Complex64::new(-s, 2.0 * s),
            Complex64::new(s * 0.25, -s * 3.0),
            Complex64::new(0.0, 0.0),
        ]);
        let (img, clipped) = quantize16(&g, s).unwrap();
        assert_eq!(img.re(), &[32_768, 0, 40_959, 32_768]);
        assert_eq!(img.im(), &[65_535, 65_535, 0, 32_768]);
        assert_eq!(clipped, 2);
        assert_eq!(img.scale(), s);
    }

    #[test]
    fn quantizer_rejects_non_positive_scale() {
        let g = grid_of(&[Complex64::new(0.0, 0.0)]);
        assert!(quantize16(&g, 0.0).is_err());
        assert!(quantize16(&g, -1.0).is_err());
        assert!(quantize16(&g, f64::NAN).is_err());
    }

    #[test]
    fn magnitude_endpoints() {
        let s = 0.5;
        let g = grid_of(&[
            Complex64::new(0.0, 0.0),
            Complex64::new(s, 0.0),
            Complex64::new(0.0, -s),
            Complex64::new(s, s),
        ]);
        let (img, _) = quantize16(&g, s).unwrap();
        let mag = magnitude_image(&img);
        assert_eq!(mag.magnitude(), &[0, 65_535, 65_535, 65_535]);
    }

    #[test]
    fn tensors_have_expected_layout() {
        let g = grid_of(&[
            Complex64::new(1.0, -1.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.5, 0.25),
            Complex64::new(-1.0, 1.0),
        ]);
        let (img, _) = quantize16(&g, 1.0).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[2, 2, 2]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], -1.0);
        assert_eq!(t.data()[7], 1.0);
        let m = magnitude_image(&img).to_tensor();
        assert_eq!(m.shape(), &[2, 2, 1]);
        assert_eq!(m.data()[1], 0.0);
    }
}
