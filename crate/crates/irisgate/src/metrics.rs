//! Per-image quality metrics and validators.
//!
//! Diameters come from the maximum pairwise distance over a structure's
//! polygon (largest connected component boundary), PIR is the diameter
//! ratio, VIA is the iris-minus-pupil pixel count, MRD1/MRD2 are vertical
//! distances from the pupil centroid to the eyeball-mask margin, sharpness
//! is the variance of the 3x3 Laplacian response, and the occlusion
//! validators measure missing coverage over top-centered annulus sectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoolGrid, CaptureRecord, EyeImage, MetricSet, SegmentationMasks};

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Boundary pixels of the mask's dominant structure: 8-connected
/// components smaller than half the largest one are treated as
/// segmentation debris and dropped; the rest contribute their boundary
/// pixels (pixels with a 4-neighbor outside the mask or on the image
/// border).
fn largest_component_boundary(mask: &BoolGrid) -> Vec<(u32, u32)> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut visited = vec![false; (w * h) as usize];
    let mut components: Vec<Vec<(u32, u32)>> = Vec::new();

    for (sx, sy) in mask.iter_true() {
        let start = (sy as i64 * w + sx as i64) as usize;
        if visited[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut queue = vec![(sx as i64, sy as i64)];
        visited[start] = true;
        while let Some((x, y)) = queue.pop() {
            component.push((x as u32, y as u32));
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let idx = (ny * w + nx) as usize;
                    if !visited[idx] && mask.get(nx as u32, ny as u32) {
                        visited[idx] = true;
                        queue.push((nx, ny));
                    }
                }
            }
        }
        components.push(component);
    }

    let largest = components.iter().map(Vec::len).max().unwrap_or(0);
    components
        .into_iter()
        .filter(|c| 2 * c.len() >= largest)
        .flatten()
        .filter(|&(x, y)| {
            let (xi, yi) = (x as i64, y as i64);
            !(mask.get_i(xi - 1, yi)
                && mask.get_i(xi + 1, yi)
                && mask.get_i(xi, yi - 1)
                && mask.get_i(xi, yi + 1))
        })
        .collect()
}

/// Andrew monotone-chain convex hull over integer points.
fn convex_hull(mut points: Vec<(u32, u32)>) -> Vec<(f64, f64)> {
    points.sort_unstable();
    points.dedup();
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x as f64, y as f64))
        .collect();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() + 1);
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
        if hull.len() > 1 && hull[0] == p {
            break;
        }
    }
    hull.pop();
    hull
}

/// Maximum Euclidean distance between any two boundary pixels of the mask's
/// largest connected component. The hull diameter equals the point-set
/// diameter, so only hull vertices are paired.
pub fn polygon_diameter(mask: &BoolGrid) -> Result<f64> {
    let boundary = largest_component_boundary(mask);
    if boundary.is_empty() {
        return Err(Error::undefined("polygon diameter of an empty mask"));
    }
    let hull = convex_hull(boundary);
    let mut best = 0.0f64;
    for i in 0..hull.len() {
        for j in (i + 1)..hull.len() {
            let dx = hull[i].0 - hull[j].0;
            let dy = hull[i].1 - hull[j].1;
            best = best.max(dx * dx + dy * dy);
        }
    }
    Ok(best.sqrt())
}

/// Circle geometry recovered from the masks: the center is the pupil
/// centroid (pupil and iris are treated as concentric) and the radii are
/// half the respective polygon diameters.
#[derive(Debug, Clone, Copy)]
pub struct IrisGeometry {
    pub cx: f64,
    pub cy: f64,
    pub pupil_r: f64,
    pub iris_r: f64,
}

pub fn fit_geometry(masks: &SegmentationMasks) -> Result<IrisGeometry> {
    let (cx, cy) = masks
        .pupil
        .centroid()
        .ok_or_else(|| Error::undefined("empty pupil mask"))?;
    if masks.iris.is_empty() {
        return Err(Error::undefined("empty iris mask"));
    }
    let pupil_r = polygon_diameter(&masks.pupil)? / 2.0;
    let iris_r = polygon_diameter(&masks.iris)? / 2.0;
    if iris_r <= pupil_r {
        return Err(Error::undefined(format!(
            "iris radius {iris_r:.2} not larger than pupil radius {pupil_r:.2}"
        )));
    }
    Ok(IrisGeometry {
        cx,
        cy,
        pupil_r,
        iris_r,
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Pupil diameter divided by iris diameter.
pub fn pupil_iris_ratio(masks: &SegmentationMasks) -> Result<f64> {
    if masks.pupil.is_empty() {
        return Err(Error::undefined("PIR with empty pupil mask"));
    }
    if masks.iris.is_empty() {
        return Err(Error::undefined("PIR with empty iris mask"));
    }
    let pupil = polygon_diameter(&masks.pupil)?;
    let iris = polygon_diameter(&masks.iris)?;
    if iris == 0.0 {
        return Err(Error::undefined("iris diameter is zero"));
    }
    Ok(pupil / iris)
}

/// Visible iris area: iris-mask pixels not in the pupil mask.
pub fn visible_iris_area(masks: &SegmentationMasks) -> u64 {
    masks
        .iris
        .iter_true()
        .filter(|&(x, y)| !masks.pupil.get(x, y))
        .count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrdKind {
    Mrd1,
    Mrd2,
}

/// Marginal reflex distance: vertical distance from the pupil centroid
/// (rounded to a pixel) to the eyeball-mask margin in the centroid column
/// (top margin for MRD1, bottom for MRD2). Falls back to the global
/// min/max row when the centroid column is empty. Signed: negative when the
/// margin crosses the pupil center in the closed direction.
pub fn mrd(masks: &SegmentationMasks, which: MrdKind) -> Result<f64> {
    let (cx, cy) = masks
        .pupil
        .centroid()
        .ok_or_else(|| Error::undefined("MRD with empty pupil mask"))?;
    if masks.eyeball.is_empty() {
        return Err(Error::undefined("MRD with empty eyeball mask"));
    }
    let col = cx.round() as i64;
    let center_row = cy.round();

    let mut col_min: Option<u32> = None;
    let mut col_max: Option<u32> = None;
    let mut all_min = u32::MAX;
    let mut all_max = 0u32;
    for (x, y) in masks.eyeball.iter_true() {
        all_min = all_min.min(y);
        all_max = all_max.max(y);
        if x as i64 == col {
            col_min = Some(col_min.map_or(y, |m| m.min(y)));
            col_max = Some(col_max.map_or(y, |m| m.max(y)));
        }
    }
    Ok(match which {
        MrdKind::Mrd1 => center_row - col_min.unwrap_or(all_min) as f64,
        MrdKind::Mrd2 => col_max.unwrap_or(all_max) as f64 - center_row,
    })
}

/// Variance of the 3x3 Laplacian response over interior pixels.
pub fn sharpness(image: &EyeImage) -> Result<f64> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(Error::undefined("sharpness needs at least a 3x3 image"));
    }
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut n = 0u64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = image.get(x, y - 1) as f64
                + image.get(x, y + 1) as f64
                + image.get(x - 1, y) as f64
                + image.get(x + 1, y) as f64
                - 4.0 * image.get(x, y) as f64;
            sum += lap;
            sum_sq += lap * lap;
            n += 1;
        }
    }
    let mean = sum / n as f64;
    Ok(sum_sq / n as f64 - mean * mean)
}

/// Fraction of an ideal annulus sector (width `arc_degrees`, centered at
/// 12 o'clock, between the fitted pupil and iris radii) that is NOT covered
/// by the visible iris mask. The radial band is inset by half a pixel on
/// each side so rasterization boundary pixels are not counted against the
/// mask. Returns 1.0 when the band is too thin to contain any pixel.
pub fn occlusion_fraction(masks: &SegmentationMasks, arc_degrees: f64) -> Result<f64> {
    let geo = fit_geometry(masks)?;
    occlusion_with_geometry(masks, &geo, arc_degrees)
}

fn occlusion_with_geometry(
    masks: &SegmentationMasks,
    geo: &IrisGeometry,
    arc_degrees: f64,
) -> Result<f64> {
    if !(arc_degrees > 0.0 && arc_degrees <= 360.0) {
        return Err(Error::Invalid(format!(
            "arc of {arc_degrees} degrees out of range"
        )));
    }
    let half_arc = arc_degrees.to_radians() / 2.0;
    let r_in = geo.pupil_r + 0.5;
    let r_out = geo.iris_r - 0.5;
    let (w, h) = (masks.iris.width() as i64, masks.iris.height() as i64);
    let x_lo = ((geo.cx - r_out).floor() as i64).max(0);
    let x_hi = ((geo.cx + r_out).ceil() as i64).min(w - 1);
    let y_lo = ((geo.cy - r_out).floor() as i64).max(0);
    let y_hi = ((geo.cy).ceil() as i64).min(h - 1); // sector points up only

    let mut total = 0u64;
    let mut missing = 0u64;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let vx = x as f64 - geo.cx;
            let vy = y as f64 - geo.cy;
            let d = (vx * vx + vy * vy).sqrt();
            if d < r_in || d > r_out || d == 0.0 {
                continue;
            }
            // Angle away from straight up (-y).
            let away = (-vy / d).clamp(-1.0, 1.0).acos();
            if away > half_arc {
                continue;
            }
            total += 1;
            let visible = masks.iris.get(x as u32, y as u32) && !masks.pupil.get(x as u32, y as u32);
            if !visible {
                missing += 1;
            }
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(missing as f64 / total as f64)
}

/// Compute the full metric set for one capture. `code_length` stays `None`
/// until encoding has run.
pub fn compute_metrics(image: &EyeImage, masks: &SegmentationMasks) -> Result<MetricSet> {
    let geo = fit_geometry(masks)?;
    Ok(MetricSet {
        via: visible_iris_area(masks),
        pir: pupil_iris_ratio(masks)?,
        mrd1: mrd(masks, MrdKind::Mrd1)?,
        mrd2: mrd(masks, MrdKind::Mrd2)?,
        iris_diameter: geo.iris_r * 2.0,
        pupil_diameter: geo.pupil_r * 2.0,
        sharpness: sharpness(image)?,
        occlusion_90: occlusion_with_geometry(masks, &geo, 90.0)?,
        occlusion_30: occlusion_with_geometry(masks, &geo, 30.0)?,
        code_length: None,
    })
}

// ---------------------------------------------------------------------------
// Validators
// ---------------------------------------------------------------------------

/// Quality-validator thresholds. A value exactly at a bound passes; only a
/// strict violation fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorConfig {
    pub pir_min: f64,
    pub pir_max: f64,
    pub sharpness_min: f64,
    pub occlusion90_max: f64,
    pub occlusion30_max: f64,
    pub mask_min_px: u64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self::openiris_strict()
    }
}

impl ValidatorConfig {
    /// The stock OpenIRIS thresholds: PIR 0.1-0.7, sharpness 461, 90°
    /// occlusion max 25%, 30° occlusion max 30%, minimum mask 4096 px.
    pub fn openiris_strict() -> Self {
        Self {
            pir_min: 0.1,
            pir_max: 0.7,
            sharpness_min: 461.0,
            occlusion90_max: 0.25,
            occlusion30_max: 0.30,
            mask_min_px: 4096,
        }
    }

    /// Survey-mode relaxation: PIR expanded to 0.0001-0.9999 and the
    /// occlusion maximums set to 99%; sharpness and mask-size checks keep
    /// their stock values.
    pub fn survey_relaxed() -> Self {
        Self {
            pir_min: 0.0001,
            pir_max: 0.9999,
            occlusion90_max: 0.99,
            occlusion30_max: 0.99,
            ..Self::openiris_strict()
        }
    }

    /// Pipeline default for synthetic cohorts: the survey relaxation with
    /// the occlusion validators fully bypassed (a fraction never exceeds
    /// 1.0) and a sharpness floor calibrated to the synthetic renderer
    /// rather than the scanner-specific 461.
    pub fn synthetic_survey() -> Self {
        Self {
            occlusion90_max: 1.0,
            occlusion30_max: 1.0,
            sharpness_min: SYNTHETIC_SHARPNESS_MIN,
            ..Self::survey_relaxed()
        }
    }
}

/// Variance-of-Laplacian floor for the synthetic renderer. Rendered eyes
/// score roughly 40-700 depending on blur; this floor fails only the
/// blurriest tail.
pub const SYNTHETIC_SHARPNESS_MIN: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationFailure {
    PirOutOfRange,
    TooBlurry,
    Occlusion90,
    Occlusion30,
    MaskTooSmall,
}

impl ValidationFailure {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValidationFailure::PirOutOfRange => "PirOutOfRange",
            ValidationFailure::TooBlurry => "TooBlurry",
            ValidationFailure::Occlusion90 => "Occlusion90",
            ValidationFailure::Occlusion30 => "Occlusion30",
            ValidationFailure::MaskTooSmall => "MaskTooSmall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub failures: Vec<ValidationFailure>,
}

/// Apply all five checks to an already computed metric set; every failure
/// is listed, not just the first.
pub fn validate_metrics(metrics: &MetricSet, cfg: &ValidatorConfig) -> ValidationReport {
    let mut failures = Vec::new();
    if metrics.pir < cfg.pir_min || metrics.pir > cfg.pir_max {
        failures.push(ValidationFailure::PirOutOfRange);
    }
    if metrics.sharpness < cfg.sharpness_min {
        failures.push(ValidationFailure::TooBlurry);
    }
    if metrics.occlusion_90 > cfg.occlusion90_max {
        failures.push(ValidationFailure::Occlusion90);
    }
    if metrics.occlusion_30 > cfg.occlusion30_max {
        failures.push(ValidationFailure::Occlusion30);
    }
    if metrics.via < cfg.mask_min_px {
        failures.push(ValidationFailure::MaskTooSmall);
    }
    ValidationReport {
        passed: failures.is_empty(),
        failures,
    }
}

/// Compute this record's metrics (if absent) and validate them.
pub fn validate(record: &CaptureRecord, cfg: &ValidatorConfig) -> Result<ValidationReport> {
    let metrics = match &record.metrics {
        Some(m) => m.clone(),
        None => compute_metrics(&record.image, &record.masks)?,
    };
    Ok(validate_metrics(&metrics, cfg))
}
