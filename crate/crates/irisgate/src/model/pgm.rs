//! Binary PGM (P5) image IO.
//!
//! Writes a fixed byte layout (`P5\n{w} {h}\n255\n` + raw rows) so generated
//! datasets are byte-identical across runs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::EyeImage;

pub fn write_pgm(path: &Path, image: &EyeImage) -> Result<()> {
    let mut buf = Vec::with_capacity(image.pixels().len() + 32);
    write!(buf, "P5\n{} {}\n255\n", image.width(), image.height())
        .expect("write to vec cannot fail");
    buf.extend_from_slice(image.pixels());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<EyeImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::format(path, msg))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<EyeImage, String> {
    let mut pos = 0usize;

    let next_token = |pos: &mut usize| -> std::result::Result<String, String> {
        // Skip whitespace and `#` comment lines between header tokens.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("truncated header".into());
        }
        String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| "non-ascii header".into())
    };

    if next_token(&mut pos)? != "P5" {
        return Err("not a P5 PGM".into());
    }
    let width: u32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| "bad width".to_string())?;
    let height: u32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| "bad height".to_string())?;
    let maxval: u32 = next_token(&mut pos)?
        .parse()
        .map_err(|_| "bad maxval".to_string())?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let expected = (width as usize) * (height as usize);
    if bytes.len() < pos + expected {
        return Err(format!(
            "raster truncated: need {expected} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    EyeImage::new(width, height, bytes[pos..pos + expected].to_vec())
        .map_err(|e| format!("{e}"))
}
