//! Deterministic synthetic eye generator.
//!
//! Stands in for a clinical capture protocol: each identity is a seeded
//! band-limited texture over polar coordinates, and each capture renders
//! that texture with a chosen pupil radius (dilation), eyelid chord heights
//! (occlusion), blur, and sensor noise. Ground-truth segmentation masks
//! come from the same geometry that produced the pixels.

mod cohort;
mod noise;

pub use cohort::{generate_cohort, CohortConfig, RangeCfg};
pub use noise::TextureField;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encode::PolarIris;
use crate::error::{Error, Result};
use crate::model::{EyeImage, SegmentationMasks};
use crate::seeding::{derive_seed_str, rng_from_seed};

pub const SKIN_LEVEL: u8 = 185;
pub const SCLERA_LEVEL: u8 = 225;
pub const PUPIL_LEVEL: u8 = 15;
pub const LASH_LEVEL: u8 = 35;
pub const IRIS_BASE: f64 = 110.0;
pub const IRIS_AMP: f64 = 70.0;
/// Visible globe (eyeball) radius as a multiple of the iris radius.
pub const GLOBE_RADIUS_RATIO: f64 = 1.55;
/// Iris radius band assigned to identities, in pixels.
pub const IRIS_RADIUS_RANGE: (f64, f64) = (62.0, 78.0);

/// One synthetic iris: a seed-derived texture plus its physical radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrisIdentity {
    pub identity_id: String,
    pub texture_seed: u64,
    /// Iris (limbus) radius in pixels.
    pub iris_radius: f64,
    pub texture: TextureField,
}

/// Radial deformation model used when sampling the texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deformation {
    /// Daugman rubber-sheet assumption: texture position is linear in
    /// normalized radius, so dilation changes are fully compensated.
    Linear,
    /// Warps normalized radius by `r' = r + k·r·(1−r)` before sampling.
    Nonlinear { k: f64 },
}

impl Deformation {
    fn warp(&self, r: f64) -> f64 {
        match *self {
            Deformation::Linear => r,
            Deformation::Nonlinear { k } => (r + k * r * (1.0 - r)).clamp(0.0, 1.0),
        }
    }
}

/// Everything that varies between captures of one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureParams {
    pub width: u32,
    pub height: u32,
    /// Pupil radius in pixels; must satisfy 0 < pupil_radius < iris_radius.
    pub pupil_radius: f64,
    /// Upper eyelid chord: rows above this y are covered.
    pub upper_lid_y: f64,
    /// Lower eyelid chord: rows below this y are covered.
    pub lower_lid_y: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    /// Eye-center offset from the image center, (dx, dy) pixels.
    pub gaze_offset: (f64, f64),
    pub deformation: Deformation,
    /// Number of eyelash strokes drawn below the upper lid margin.
    pub eyelash_count: u32,
    /// Seed for sensor noise and eyelash placement.
    pub noise_seed: u64,
}

impl CaptureParams {
    /// A clean, fully open capture: lids beyond the globe, mild blur and
    /// noise, no lashes.
    pub fn open_eye(width: u32, height: u32, pupil_radius: f64) -> Self {
        Self {
            width,
            height,
            pupil_radius,
            upper_lid_y: -1.0,
            lower_lid_y: height as f64 + 1.0,
            blur_sigma: 1.0,
            noise_sigma: 2.0,
            gaze_offset: (0.0, 0.0),
            deformation: Deformation::Linear,
            eyelash_count: 0,
            noise_seed: 0,
        }
    }

    fn validate(&self, iris_radius: f64) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("capture dimensions must be positive".into()));
        }
        if !(self.pupil_radius > 0.0 && self.pupil_radius < iris_radius) {
            return Err(Error::Invalid(format!(
                "pupil radius {} must lie in (0, iris radius {})",
                self.pupil_radius, iris_radius
            )));
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Invalid("blur/noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Build the identity for a 64-bit seed: texture and radius derive from the
/// seed alone, so the same seed always yields bit-identical output.
pub fn generate_identity(seed: u64) -> IrisIdentity {
    let radius_unit =
        (crate::seeding::derive_seed(seed, &[0x5241_4449]) >> 11) as f64 / (1u64 << 53) as f64;
    let (lo, hi) = IRIS_RADIUS_RANGE;
    IrisIdentity {
        identity_id: format!("iris-{seed:016x}"),
        texture_seed: seed,
        iris_radius: lo + (hi - lo) * radius_unit,
        texture: TextureField::new(seed),
    }
}

impl IrisIdentity {
    /// Iris intensity (pre-blur, pre-noise) at a polar texture coordinate.
    fn intensity_at(&self, theta: f64, r_norm: f64) -> u8 {
        let v = IRIS_BASE + IRIS_AMP * self.texture.sample(theta, r_norm);
        v.round().clamp(0.0, 255.0) as u8
    }

    /// Sample the identity texture straight onto an all-valid polar grid,
    /// bypassing rendering. Row 0 is the pupil side; samples sit at
    /// half-cell centers, matching the normalization convention.
    pub fn sample_polar(&self, radial_res: u32, angular_res: u32) -> PolarIris {
        let mut grid = PolarIris::new(radial_res, angular_res);
        for i in 0..radial_res {
            let r = (i as f64 + 0.5) / radial_res as f64;
            for j in 0..angular_res {
                let theta = std::f64::consts::TAU * j as f64 / angular_res as f64;
                grid.set(i, j, self.intensity_at(theta, r) as f32, true);
            }
        }
        grid
    }
}

/// Render one capture: image plus ground-truth masks.
///
/// Mask semantics: `pupil` and `iris` are the lid-clipped disk/annulus with
/// eyelash pixels removed (a pixel belongs to one class); `eyeball` is the
/// lid-clipped globe including lash pixels, so its top edge is the lid
/// margin wherever the lid crosses the globe.
pub fn render_capture(
    identity: &IrisIdentity,
    params: &CaptureParams,
) -> Result<(EyeImage, SegmentationMasks)> {
    params.validate(identity.iris_radius)?;
    let (w, h) = (params.width, params.height);
    let cx = w as f64 / 2.0 + params.gaze_offset.0;
    let cy = h as f64 / 2.0 + params.gaze_offset.1;
    let p = params.pupil_radius;
    let big_r = identity.iris_radius;
    let globe_r = big_r * GLOBE_RADIUS_RATIO;

    let mut image = EyeImage::filled(w, h, SKIN_LEVEL);
    let mut masks = SegmentationMasks::empty(w, h);

    let open = |y: u32| -> bool {
        let yf = y as f64;
        yf >= params.upper_lid_y && yf <= params.lower_lid_y
    };

    for y in 0..h {
        if !open(y) {
            continue; // lid skin row: image already filled, masks stay false
        }
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let d = (dx * dx + dy * dy).sqrt();
            if d > globe_r {
                continue;
            }
            masks.eyeball.set(x, y, true);
            if d <= p {
                image.set(x, y, PUPIL_LEVEL);
                masks.pupil.set(x, y, true);
            } else if d <= big_r {
                let theta = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
                let r_norm = (d - p) / (big_r - p);
                let r_tex = params.deformation.warp(r_norm);
                image.set(x, y, identity.intensity_at(theta, r_tex));
                masks.iris.set(x, y, true);
            } else {
                image.set(x, y, SCLERA_LEVEL);
            }
        }
    }

    draw_eyelashes(identity, params, cx, globe_r, &mut image, &mut masks);

    if params.blur_sigma > 0.0 {
        gaussian_blur(&mut image, params.blur_sigma);
    }
    if params.noise_sigma > 0.0 {
        add_noise(&mut image, params.noise_sigma, params.noise_seed);
    }

    Ok((image, masks))
}

/// Short dark strokes hanging from the upper lid margin. Stroke pixels are
/// recorded in the eyelash mask and removed from pupil/iris masks.
fn draw_eyelashes(
    identity: &IrisIdentity,
    params: &CaptureParams,
    cx: f64,
    globe_r: f64,
    image: &mut EyeImage,
    masks: &mut SegmentationMasks,
) {
    if params.eyelash_count == 0 {
        return;
    }
    let start_y = params.upper_lid_y.ceil();
    if start_y < 0.0 || start_y >= params.height as f64 {
        return;
    }
    let mut rng = rng_from_seed(derive_seed_str(
        params.noise_seed,
        "eyelash",
        &[identity.texture_seed],
    ));
    for _ in 0..params.eyelash_count {
        let x0 = cx + rng.gen_range(-globe_r..globe_r);
        let len = rng.gen_range(4..=12);
        let slant: i64 = rng.gen_range(-1..=1);
        for step in 0..len {
            let y = start_y as i64 + step;
            let x = x0 as i64 + slant * step / 3;
            if x < 0 || y < 0 || x >= params.width as i64 || y >= params.height as i64 {
                continue;
            }
            let (xu, yu) = (x as u32, y as u32);
            if (yu as f64) > params.lower_lid_y {
                break;
            }
            image.set(xu, yu, LASH_LEVEL);
            masks.eyelash.set(xu, yu, true);
            masks.pupil.set(xu, yu, false);
            masks.iris.set(xu, yu, false);
        }
    }
}

/// In-place separable Gaussian blur with border clamping.
fn gaussian_blur(image: &mut EyeImage, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (w, h) = (image.width() as i64, image.height() as i64);
    let src: Vec<f64> = image.pixels().iter().map(|&p| p as f64).collect();
    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let xs = (x + ki as i64 - radius).clamp(0, w - 1);
                acc += src[(y * w + xs) as usize] * kv;
            }
            horiz[(y * w + x) as usize] = acc;
        }
    }
    let out = image.pixels_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let ys = (y + ki as i64 - radius).clamp(0, h - 1);
                acc += horiz[(ys * w + x) as usize] * kv;
            }
            out[(y * w + x) as usize] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
}

/// Additive Gaussian sensor noise, clamped to [0, 255].
fn add_noise(image: &mut EyeImage, sigma: f64, seed: u64) {
    let mut rng = rng_from_seed(derive_seed_str(seed, "sensor-noise", &[]));
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    for px in image.pixels_mut() {
        let v = *px as f64 + normal.sample(&mut rng);
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_params(identity: &IrisIdentity, pupil_frac: f64) -> CaptureParams {
        CaptureParams {
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            ..CaptureParams::open_eye(320, 240, identity.iris_radius * pupil_frac)
        }
    }

    #[test]
    fn identity_generation_is_deterministic() {
        assert_eq!(generate_identity(0), generate_identity(0));
        let ids: std::collections::HashSet<String> =
            (0..50).map(|s| generate_identity(s).identity_id).collect();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn textures_of_different_seeds_decorrelate() {
        let a = generate_identity(0).sample_polar(16, 200);
        let b = generate_identity(1).sample_polar(16, 200);
        let xs: Vec<f64> = a.intensities().iter().map(|&v| v as f64).collect();
        let ys: Vec<f64> = b.intensities().iter().map(|&v| v as f64).collect();
        let r = crate::eval::pearson_r(&xs, &ys).unwrap();
        assert!(r.abs() < 0.1, "cross-seed correlation too high: {r}");
    }

    #[test]
    fn render_is_deterministic() {
        let id = generate_identity(11);
        let mut params = open_params(&id, 0.4);
        params.blur_sigma = 1.2;
        params.noise_sigma = 4.0;
        params.eyelash_count = 8;
        params.upper_lid_y = 60.0;
        let (img_a, masks_a) = render_capture(&id, &params).unwrap();
        let (img_b, masks_b) = render_capture(&id, &params).unwrap();
        assert_eq!(img_a, img_b);
        assert_eq!(masks_a, masks_b);
    }

    #[test]
    fn annulus_area_matches_geometry() {
        let id = generate_identity(5);
        let params = open_params(&id, 0.3);
        let (_, masks) = render_capture(&id, &params).unwrap();
        let expected = std::f64::consts::PI
            * (id.iris_radius * id.iris_radius - params.pupil_radius * params.pupil_radius);
        let actual = masks.iris.count() as f64;
        let rel = (actual - expected).abs() / expected;
        assert!(rel < 0.02, "area off by {rel}: {actual} vs {expected}");
    }

    #[test]
    fn masks_are_disjoint_and_inside_geometry() {
        let id = generate_identity(9);
        let mut params = open_params(&id, 0.5);
        params.upper_lid_y = 80.0;
        params.eyelash_count = 10;
        let (_, masks) = render_capture(&id, &params).unwrap();
        let cx = 160.0;
        let cy = 120.0;
        for (x, y) in masks.pupil.iter_true() {
            assert!(!masks.iris.get(x, y), "pupil and iris overlap at {x},{y}");
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            assert!(d <= params.pupil_radius + 1e-9);
            assert!(y as f64 >= params.upper_lid_y);
        }
    }

    #[test]
    fn lid_coverage_strictly_decreases_via() {
        let id = generate_identity(21);
        let mut last = u64::MAX;
        // Lid sweeping down across the iris; lashes off so geometry is exact.
        for lid_y in [40.0, 70.0, 100.0, 120.0, 140.0] {
            let mut params = open_params(&id, 0.35);
            params.upper_lid_y = lid_y;
            let (_, masks) = render_capture(&id, &params).unwrap();
            let via = masks.iris.count();
            assert!(via < last, "VIA not strictly decreasing at lid {lid_y}");
            last = via;
        }
    }

    #[test]
    fn nonlinear_k0_equals_linear() {
        let id = generate_identity(33);
        let mut a = open_params(&id, 0.45);
        a.blur_sigma = 0.8;
        a.noise_sigma = 2.0;
        let mut b = a.clone();
        b.deformation = Deformation::Nonlinear { k: 0.0 };
        let (img_a, masks_a) = render_capture(&id, &a).unwrap();
        let (img_b, masks_b) = render_capture(&id, &b).unwrap();
        assert_eq!(img_a, img_b);
        assert_eq!(masks_a, masks_b);
    }

    #[test]
    fn rejects_bad_params() {
        let id = generate_identity(1);
        let mut params = open_params(&id, 0.4);
        params.pupil_radius = id.iris_radius + 1.0;
        assert!(render_capture(&id, &params).is_err());
        let mut params = open_params(&id, 0.4);
        params.blur_sigma = -0.1;
        assert!(render_capture(&id, &params).is_err());
    }

    #[test]
    fn fully_covering_lid_still_renders() {
        let id = generate_identity(2);
        let mut params = open_params(&id, 0.4);
        params.upper_lid_y = 500.0; // below the frame: everything covered
        let (image, masks) = render_capture(&id, &params).unwrap();
        assert!(masks.iris.is_empty());
        assert!(masks.eyeball.is_empty());
        assert!(image.pixels().iter().all(|&p| p == SKIN_LEVEL));
    }
}
