//! Shared domain types: images, segmentation masks, capture records, and the
//! dataset manifest every other module consumes.

mod manifest;
mod maskio;
mod pgm;

pub use manifest::{load_manifest, write_manifest, ManifestEntry};
pub use maskio::{read_masks, write_masks};
pub use pgm::{read_pgm, write_pgm};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EyeImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl EyeImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(Error::Invalid(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize]).expect("positive dims")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    /// Bilinear sample at floating-point pixel coordinates, clamped to the
    /// image border. Used by the polar unwrapping.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as u32;
        let y0 = yc.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        p00 * (1.0 - fx) * (1.0 - fy)
            + p10 * fx * (1.0 - fy)
            + p01 * (1.0 - fx) * fy
            + p11 * fx * fy
    }
}

/// Boolean pixel grid, expanded in memory (packed only on disk).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolGrid {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BoolGrid {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut g = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    g.set(x, y, true);
                }
            }
        }
        g
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    /// Bounds-checked lookup; out-of-range coordinates read as false.
    #[inline]
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Iterate set pixels as (x, y).
    pub fn iter_true(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Centroid of set pixels (pixel-center coordinates). None when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0u64;
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        for (x, y) in self.iter_true() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        if n == 0 {
            None
        } else {
            Some((sx / n as f64, sy / n as f64))
        }
    }

    /// Pack to bytes, row-major bit stream, LSB-first within each byte.
    pub fn pack(&self) -> Vec<u8> {
        let nbits = self.data.len();
        let mut out = vec![0u8; nbits.div_ceil(8)];
        for (i, &b) in self.data.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    /// Inverse of [`BoolGrid::pack`].
    pub fn unpack(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        let nbits = (width as usize) * (height as usize);
        if bytes.len() != nbits.div_ceil(8) {
            return Err(Error::Invalid(format!(
                "packed plane has {} bytes, expected {}",
                bytes.len(),
                nbits.div_ceil(8)
            )));
        }
        let mut g = Self::new(width, height);
        for i in 0..nbits {
            g.data[i] = bytes[i / 8] & (1 << (i % 8)) != 0;
        }
        Ok(g)
    }
}

/// Per-pixel boolean layers for one capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMasks {
    pub pupil: BoolGrid,
    pub iris: BoolGrid,
    pub eyeball: BoolGrid,
    pub eyelash: BoolGrid,
}

impl SegmentationMasks {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            pupil: BoolGrid::new(width, height),
            iris: BoolGrid::new(width, height),
            eyeball: BoolGrid::new(width, height),
            eyelash: BoolGrid::new(width, height),
        }
    }

    pub fn planes(&self) -> [(&'static str, &BoolGrid); 4] {
        [
            ("pupil", &self.pupil),
            ("iris", &self.iris),
            ("eyeball", &self.eyeball),
            ("eyelash", &self.eyelash),
        ]
    }
}

macro_rules! token_enum {
    ($name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $(Self::$variant => $token),+
                }
            }

            pub const ALL: &'static [$name] = &[$(Self::$variant),+];
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($token => Ok(Self::$variant),)+
                    other => Err(Error::Invalid(format!(
                        concat!("unknown ", stringify!($name), " token `{}`"), other
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

token_enum!(EyeSide { Left => "left", Right => "right" });
token_enum!(LidState { Squint => "squint", Neutral => "neutral", Wide => "wide" });
token_enum!(DilationState { Dilated => "dilated", Undilated => "undilated" });

/// One (lid, dilation) capture condition. The cohort protocol produces all
/// six per eye.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub lid: LidState,
    pub dilation: DilationState,
}

impl Condition {
    pub const ALL: [Condition; 6] = [
        Condition { lid: LidState::Squint, dilation: DilationState::Dilated },
        Condition { lid: LidState::Squint, dilation: DilationState::Undilated },
        Condition { lid: LidState::Neutral, dilation: DilationState::Dilated },
        Condition { lid: LidState::Neutral, dilation: DilationState::Undilated },
        Condition { lid: LidState::Wide, dilation: DilationState::Dilated },
        Condition { lid: LidState::Wide, dilation: DilationState::Undilated },
    ];

    pub fn label(&self) -> String {
        format!("{}-{}", self.lid, self.dilation)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Per-image metric values. `code_length` is filled after encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub via: u64,
    pub pir: f64,
    pub mrd1: f64,
    pub mrd2: f64,
    pub iris_diameter: f64,
    pub pupil_diameter: f64,
    pub sharpness: f64,
    pub occlusion_90: f64,
    pub occlusion_30: f64,
    pub code_length: Option<u64>,
}

/// One capture: image, masks, labels, and (optionally) computed metrics.
#[derive(Debug, Clone)]
pub struct CaptureRecord {
    pub capture_id: String,
    pub identity_id: String,
    pub eye_side: EyeSide,
    pub lid_state: LidState,
    pub dilation_state: DilationState,
    pub image: EyeImage,
    pub masks: SegmentationMasks,
    pub metrics: Option<MetricSet>,
}

impl CaptureRecord {
    pub fn condition(&self) -> Condition {
        Condition {
            lid: self.lid_state,
            dilation: self.dilation_state,
        }
    }

    /// Key identifying the physical iris: two captures of the same
    /// (identity, eye side) are genuine matches.
    pub fn eye_key(&self) -> (String, EyeSide) {
        (self.identity_id.clone(), self.eye_side)
    }
}

/// A defect found by [`validate_record`] or by raw-label validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordDefect {
    /// A mask plane's dimensions disagree with the image.
    DimensionMismatch {
        plane: &'static str,
        expected: (u32, u32),
        got: (u32, u32),
    },
    /// A label token is not a legal enum value.
    LabelDefect { field: &'static str, token: String },
}

impl fmt::Display for RecordDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordDefect::DimensionMismatch {
                plane,
                expected,
                got,
            } => write!(
                f,
                "mask `{plane}` is {}x{}, image is {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            RecordDefect::LabelDefect { field, token } => {
                write!(f, "unknown {field} token `{token}`")
            }
        }
    }
}

/// Check that a loaded record is internally consistent. Defects are
/// returned, not thrown.
pub fn validate_record(record: &CaptureRecord) -> (bool, Vec<RecordDefect>) {
    let mut defects = Vec::new();
    let expected = (record.image.width(), record.image.height());
    for (plane, grid) in record.masks.planes() {
        let got = (grid.width(), grid.height());
        if got != expected {
            defects.push(RecordDefect::DimensionMismatch {
                plane,
                expected,
                got,
            });
        }
    }
    (defects.is_empty(), defects)
}

/// Validate raw label tokens before they are parsed into enums. The manifest
/// loader reports these as row errors; tests exercise them directly.
pub fn validate_labels(eye_side: &str, lid_state: &str, dilation_state: &str) -> Vec<RecordDefect> {
    let mut defects = Vec::new();
    if EyeSide::from_str(eye_side).is_err() {
        defects.push(RecordDefect::LabelDefect {
            field: "eye_side",
            token: eye_side.to_string(),
        });
    }
    if LidState::from_str(lid_state).is_err() {
        defects.push(RecordDefect::LabelDefect {
            field: "lid_state",
            token: lid_state.to_string(),
        });
    }
    if DilationState::from_str(dilation_state).is_err() {
        defects.push(RecordDefect::LabelDefect {
            field: "dilation_state",
            token: dilation_state.to_string(),
        });
    }
    defects
}
