//! Rubber-sheet normalization and Gabor phase quantization.
//!
//! The iris annulus is resampled onto a polar grid between the pupil and
//! limbus circles, then a single-scale complex Gabor filter run along the
//! angular direction turns each pooled cell into two sign bits (real and
//! imaginary phase). A validity plane tracks which bits came entirely from
//! visible iris pixels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::fit_geometry;
use crate::model::{EyeImage, SegmentationMasks};

/// Normalized iris sampled over (radius index, angle index), with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarIris {
    radial_res: u32,
    angular_res: u32,
    intensities: Vec<f32>, // row-major, angular index fastest
    valid: Vec<bool>,
}

impl PolarIris {
    pub fn new(radial_res: u32, angular_res: u32) -> Self {
        let n = (radial_res * angular_res) as usize;
        Self {
            radial_res,
            angular_res,
            intensities: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn radial_res(&self) -> u32 {
        self.radial_res
    }

    pub fn angular_res(&self) -> u32 {
        self.angular_res
    }

    #[inline]
    fn idx(&self, i: u32, j: u32) -> usize {
        (i * self.angular_res + j) as usize
    }

    #[inline]
    pub fn intensity(&self, i: u32, j: u32) -> f32 {
        self.intensities[self.idx(i, j)]
    }

    #[inline]
    pub fn is_valid(&self, i: u32, j: u32) -> bool {
        self.valid[self.idx(i, j)]
    }

    pub fn set(&mut self, i: u32, j: u32, intensity: f32, valid: bool) {
        let idx = self.idx(i, j);
        self.intensities[idx] = intensity;
        self.valid[idx] = valid;
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }

    /// Rotate all rows by `shift` angular positions (positive shifts move
    /// content toward higher angle indices).
    pub fn rotate_angular(&self, shift: i64) -> Self {
        let ar = self.angular_res as i64;
        let mut out = Self::new(self.radial_res, self.angular_res);
        for i in 0..self.radial_res {
            for j in 0..self.angular_res {
                let src = (j as i64 - shift).rem_euclid(ar) as u32;
                out.set(i, j, self.intensity(i, src), self.is_valid(i, src));
            }
        }
        out
    }
}

/// Gabor filter-bank parameters (one scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaborParams {
    /// Angular wavelength of the carrier, in polar samples.
    pub wavelength: f64,
    /// Gaussian envelope sigma, in polar samples.
    pub sigma: f64,
    /// Half-width of the filter window; the kernel is truncated at one
    /// envelope sigma to bound how far occlusion masks dilate.
    pub window: u32,
    /// Polar rows pooled into one code row.
    pub radial_pool: u32,
    /// Mask threshold: responses with magnitude at or below
    /// `magnitude_floor_rel * std(grid)` are marked invalid.
    pub magnitude_floor_rel: f64,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            wavelength: 18.0,
            sigma: 9.0,
            window: 9,
            radial_pool: 2,
            magnitude_floor_rel: 1e-3,
        }
    }
}

/// Default polar grid resolution used across the pipeline.
pub const DEFAULT_RADIAL_RES: u32 = 16;
pub const DEFAULT_ANGULAR_RES: u32 = 200;

/// Two-bit-per-cell phase code plus validity plane.
///
/// Bit layout is plane-major: the real-sign plane, then the imaginary-sign
/// plane, each row-major with the angular index fastest. The mask plane has
/// the same shape; both bits of a cell share one validity value.
#[derive(Debug, Clone, PartialEq)]
pub struct IrisCode {
    radial_code: u32,
    angular_res: u32,
    bits: Vec<bool>,
    mask_bits: Vec<bool>,
    /// Filter parameters this code was produced with.
    pub params: GaborParams,
}

impl IrisCode {
    pub fn new(radial_code: u32, angular_res: u32, params: GaborParams) -> Self {
        let n = 2 * (radial_code * angular_res) as usize;
        Self {
            radial_code,
            angular_res,
            bits: vec![false; n],
            mask_bits: vec![false; n],
            params,
        }
    }

    pub fn radial_code(&self) -> u32 {
        self.radial_code
    }

    pub fn angular_res(&self) -> u32 {
        self.angular_res
    }

    /// Total bit positions (both planes).
    pub fn total_bits(&self) -> u64 {
        self.bits.len() as u64
    }

    #[inline]
    fn idx(&self, plane: u32, row: u32, j: u32) -> usize {
        ((plane * self.radial_code + row) * self.angular_res + j) as usize
    }

    #[inline]
    pub fn bit(&self, plane: u32, row: u32, j: u32) -> bool {
        self.bits[self.idx(plane, row, j)]
    }

    #[inline]
    pub fn mask_bit(&self, plane: u32, row: u32, j: u32) -> bool {
        self.mask_bits[self.idx(plane, row, j)]
    }

    pub fn set_cell(&mut self, row: u32, j: u32, re_bit: bool, im_bit: bool, valid: bool) {
        let idx_re = self.idx(0, row, j);
        let idx_im = self.idx(1, row, j);
        self.bits[idx_re] = re_bit;
        self.bits[idx_im] = im_bit;
        self.mask_bits[idx_re] = valid;
        self.mask_bits[idx_im] = valid;
    }

    /// Rotate both planes and the mask by `shift` angular positions.
    pub fn rotate_angular(&self, shift: i64) -> Self {
        let ar = self.angular_res as i64;
        let mut out = Self::new(self.radial_code, self.angular_res, self.params);
        for plane in 0..2 {
            for row in 0..self.radial_code {
                for j in 0..self.angular_res {
                    let src = (j as i64 - shift).rem_euclid(ar) as u32;
                    let d = out.idx(plane, row, j);
                    let s = self.idx(plane, row, src);
                    out.bits[d] = self.bits[s];
                    out.mask_bits[d] = self.mask_bits[s];
                }
            }
        }
        out
    }
}

/// Number of usable (unmasked) bits in a code.
pub fn code_length(code: &IrisCode) -> u64 {
    code.mask_bits.iter().filter(|&&b| b).count() as u64
}

/// Unwrap the iris annulus onto a polar grid.
///
/// Sample (i, j) lies on the ray at angle `j * 360°/angular_res` at radius
/// `pupil_r + (i + 0.5)/radial_res * (iris_r - pupil_r)` (half-sample inset
/// from both boundaries). Intensity is bilinear; validity requires the
/// nearest pixel to be visible iris: iris ∧ ¬pupil ∧ eyeball ∧ ¬eyelash.
pub fn normalize(
    image: &EyeImage,
    masks: &SegmentationMasks,
    radial_res: u32,
    angular_res: u32,
) -> Result<PolarIris> {
    if radial_res == 0 || angular_res == 0 {
        return Err(Error::Invalid("polar resolution must be positive".into()));
    }
    let geo = fit_geometry(masks)?;
    let mut polar = PolarIris::new(radial_res, angular_res);
    for i in 0..radial_res {
        let r = geo.pupil_r + (i as f64 + 0.5) / radial_res as f64 * (geo.iris_r - geo.pupil_r);
        for j in 0..angular_res {
            let theta = std::f64::consts::TAU * j as f64 / angular_res as f64;
            let x = geo.cx + r * theta.cos();
            let y = geo.cy + r * theta.sin();
            let intensity = image.sample_bilinear(x, y) as f32;
            let xi = x.round() as i64;
            let yi = y.round() as i64;
            let valid = masks.iris.get_i(xi, yi)
                && !masks.pupil.get_i(xi, yi)
                && masks.eyeball.get_i(xi, yi)
                && !masks.eyelash.get_i(xi, yi);
            polar.set(i, j, intensity, valid);
        }
    }
    Ok(polar)
}

/// Quantize Gabor phase responses into an iris code.
///
/// The real (cosine) kernel is mean-corrected to zero DC so constant input
/// produces zero response; the imaginary (sine) kernel has zero DC by
/// symmetry. A cell is valid only if every polar sample its window touched
/// was valid and the response magnitude clears the floor.
pub fn encode(polar: &PolarIris, params: &GaborParams) -> Result<IrisCode> {
    let rr = polar.radial_res();
    let ar = polar.angular_res();
    if params.radial_pool == 0 || !rr.is_multiple_of(params.radial_pool) {
        return Err(Error::Invalid(format!(
            "radial_res {rr} not divisible by radial_pool {}",
            params.radial_pool
        )));
    }
    if 2 * params.window + 1 > ar {
        return Err(Error::Invalid("gabor window exceeds angular_res".into()));
    }
    if !polar.valid.iter().any(|&v| v) {
        return Err(Error::EmptyCode);
    }

    // Build the zero-DC kernel pair.
    let w = params.window as i64;
    let mut env = Vec::with_capacity((2 * w + 1) as usize);
    let mut re_k = Vec::with_capacity(env.capacity());
    let mut im_k = Vec::with_capacity(env.capacity());
    for u in -w..=w {
        let uf = u as f64;
        let g = (-(uf * uf) / (2.0 * params.sigma * params.sigma)).exp();
        let phase = std::f64::consts::TAU * uf / params.wavelength;
        env.push(g);
        re_k.push(g * phase.cos());
        im_k.push(g * phase.sin());
    }
    let env_sum: f64 = env.iter().sum();
    let re_sum: f64 = re_k.iter().sum();
    let dc = re_sum / env_sum;
    for (k, g) in re_k.iter_mut().zip(&env) {
        *k -= dc * g;
    }

    // Magnitude floor from the grid's intensity spread. The absolute term
    // absorbs the ~1e-13 DC-correction residual, so constant grids always
    // mask out.
    let n = polar.intensities.len() as f64;
    let mean = polar.intensities.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = polar
        .intensities
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let floor = params.magnitude_floor_rel * var.sqrt() + 1e-6;

    let radial_code = rr / params.radial_pool;
    let mut code = IrisCode::new(radial_code, ar, *params);
    for row in 0..radial_code {
        for j in 0..ar {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            let mut window_valid = true;
            for dr in 0..params.radial_pool {
                let i = row * params.radial_pool + dr;
                for (ki, u) in (-w..=w).enumerate() {
                    let col = ((j as i64 + u).rem_euclid(ar as i64)) as u32;
                    let sample = polar.intensity(i, col) as f64;
                    re += sample * re_k[ki];
                    im += sample * im_k[ki];
                    window_valid &= polar.is_valid(i, col);
                }
            }
            let magnitude = (re * re + im * im).sqrt();
            let valid = window_valid && magnitude > floor;
            code.set_cell(row, j, re > 0.0, im > 0.0, valid);
        }
    }
    Ok(code)
}

// ---------------------------------------------------------------------------
// Code file IO: magic `IRCD`, version, radial_code/angular_res as 32-bit
// little-endian, then the bit-packed code plane and mask plane (row-major,
// LSB-first within bytes).
// ---------------------------------------------------------------------------

const CODE_MAGIC: &[u8; 4] = b"IRCD";
const CODE_VERSION: u8 = 1;

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], nbits: usize) -> Vec<bool> {
    (0..nbits)
        .map(|i| bytes[i / 8] & (1 << (i % 8)) != 0)
        .collect()
}

pub fn write_code(path: &Path, code: &IrisCode) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CODE_MAGIC);
    buf.push(CODE_VERSION);
    buf.extend_from_slice(&code.radial_code.to_le_bytes());
    buf.extend_from_slice(&code.angular_res.to_le_bytes());
    buf.extend_from_slice(&pack_bits(&code.bits));
    buf.extend_from_slice(&pack_bits(&code.mask_bits));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_code(path: &Path) -> Result<IrisCode> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[0..4] != CODE_MAGIC {
        return Err(Error::format(path, "not an IRCD code file"));
    }
    if bytes[4] != CODE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported IRCD version {}", bytes[4]),
        ));
    }
    let radial_code = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    let angular_res = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes"));
    let nbits = 2 * (radial_code as usize) * (angular_res as usize);
    let plane_bytes = nbits.div_ceil(8);
    if bytes.len() != 13 + 2 * plane_bytes {
        return Err(Error::format(path, "IRCD plane size mismatch"));
    }
    let mut code = IrisCode::new(radial_code, angular_res, GaborParams::default());
    code.bits = unpack_bits(&bytes[13..13 + plane_bytes], nbits);
    code.mask_bits = unpack_bits(&bytes[13 + plane_bytes..], nbits);
    Ok(code)
}
