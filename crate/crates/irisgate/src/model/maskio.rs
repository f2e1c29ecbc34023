//! Mask file IO.
//!
//! Layout: magic `IGMK`, one version byte, width and height as 32-bit
//! little-endian, then four bit-packed planes in order pupil, iris, eyeball,
//! eyelash. Each plane is a row-major bit stream (LSB-first within bytes)
//! padded to a whole byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BoolGrid, SegmentationMasks};

const MAGIC: &[u8; 4] = b"IGMK";
const VERSION: u8 = 1;

pub fn write_masks(path: &Path, masks: &SegmentationMasks) -> Result<()> {
    let w = masks.pupil.width();
    let h = masks.pupil.height();
    for (plane, grid) in masks.planes() {
        if grid.width() != w || grid.height() != h {
            return Err(Error::Invalid(format!(
                "mask plane `{plane}` dimensions disagree"
            )));
        }
    }
    let plane_bytes = ((w as usize) * (h as usize)).div_ceil(8);
    let mut buf = Vec::with_capacity(13 + 4 * plane_bytes);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    for (_, grid) in masks.planes() {
        buf.extend_from_slice(&grid.pack());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_masks(path: &Path) -> Result<SegmentationMasks> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 13 || &bytes[0..4] != MAGIC {
        return Err(Error::format(path, "not an IGMK mask file"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported IGMK version {}", bytes[4]),
        ));
    }
    let w = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    let h = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes"));
    let plane_bytes = ((w as usize) * (h as usize)).div_ceil(8);
    if bytes.len() != 13 + 4 * plane_bytes {
        return Err(Error::format(
            path,
            format!(
                "expected {} plane bytes, found {}",
                4 * plane_bytes,
                bytes.len() - 13
            ),
        ));
    }
    let plane = |i: usize| -> Result<BoolGrid> {
        let start = 13 + i * plane_bytes;
        BoolGrid::unpack(w, h, &bytes[start..start + plane_bytes])
    };
    Ok(SegmentationMasks {
        pupil: plane(0)?,
        iris: plane(1)?,
        eyeball: plane(2)?,
        eyelash: plane(3)?,
    })
}
