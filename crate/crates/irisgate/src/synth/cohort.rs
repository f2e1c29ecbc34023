//! Cohort generation: the six-condition capture protocol over a set of
//! synthetic identities, written to disk as a manifest plus image/mask files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    write_manifest, write_masks, write_pgm, Condition, DilationState, EyeSide, LidState,
    ManifestEntry,
};
use crate::seeding::{derive_seed_str, fnv1a64, rng_from_seed};
use crate::synth::{generate_identity, render_capture, CaptureParams, Deformation, IrisIdentity};

/// Closed uniform range for one per-capture draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeCfg {
    pub lo: f64,
    pub hi: f64,
}

impl RangeCfg {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..self.hi)
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(Error::Config(format!(
                "range `{name}` has lo {} > hi {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Cohort generation parameters.
///
/// Lid positions are expressed as fractions of the iris radius above (upper
/// lid) or below (lower lid) the eye center, so the same config works for
/// any identity radius; the native MRD1 pixel value follows from the drawn
/// fraction times the identity's radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub identity_count: u32,
    pub width: u32,
    pub height: u32,
    pub master_seed: u64,
    /// Pupil-to-iris ratio draw per dilation state.
    pub pir_dilated: RangeCfg,
    pub pir_undilated: RangeCfg,
    /// Upper-lid height above eye center, as a fraction of iris radius.
    pub lid_squint: RangeCfg,
    pub lid_neutral: RangeCfg,
    pub lid_wide: RangeCfg,
    /// Lower-lid depth below eye center, fraction of iris radius.
    pub lid_lower: RangeCfg,
    pub blur_sigma: RangeCfg,
    pub noise_sigma: RangeCfg,
    /// Eyelash strokes per capture.
    pub eyelash_count: RangeCfg,
    /// Eye-center jitter in pixels, applied to both axes independently.
    pub gaze_jitter: RangeCfg,
    /// When nonzero, captures render with `Nonlinear { k = deformation_k * pir }`,
    /// so more dilated pupils deform more.
    pub deformation_k: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            identity_count: 50,
            width: 320,
            height: 240,
            master_seed: 0,
            pir_dilated: RangeCfg::new(0.55, 0.80),
            pir_undilated: RangeCfg::new(0.10, 0.45),
            lid_squint: RangeCfg::new(0.35, 0.60),
            lid_neutral: RangeCfg::new(0.70, 0.95),
            lid_wide: RangeCfg::new(1.10, 1.40),
            lid_lower: RangeCfg::new(1.05, 1.35),
            blur_sigma: RangeCfg::new(0.4, 2.8),
            noise_sigma: RangeCfg::new(1.0, 8.0),
            eyelash_count: RangeCfg::new(4.0, 12.0),
            gaze_jitter: RangeCfg::new(-5.0, 5.0),
            deformation_k: 0.35,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identity_count == 0 {
            return Err(Error::Config("identity_count must be positive".into()));
        }
        if self.width < 64 || self.height < 64 {
            return Err(Error::Config("cohort image must be at least 64x64".into()));
        }
        for (range, name) in [
            (self.pir_dilated, "pir_dilated"),
            (self.pir_undilated, "pir_undilated"),
            (self.lid_squint, "lid_squint"),
            (self.lid_neutral, "lid_neutral"),
            (self.lid_wide, "lid_wide"),
            (self.lid_lower, "lid_lower"),
            (self.blur_sigma, "blur_sigma"),
            (self.noise_sigma, "noise_sigma"),
            (self.eyelash_count, "eyelash_count"),
            (self.gaze_jitter, "gaze_jitter"),
        ] {
            range.validate(name)?;
        }
        for (range, name) in [
            (self.pir_dilated, "pir_dilated"),
            (self.pir_undilated, "pir_undilated"),
        ] {
            if range.lo <= 0.0 || range.hi >= 1.0 {
                return Err(Error::Config(format!("range `{name}` must stay in (0, 1)")));
            }
        }
        Ok(())
    }

    fn lid_range(&self, lid: LidState) -> RangeCfg {
        match lid {
            LidState::Squint => self.lid_squint,
            LidState::Neutral => self.lid_neutral,
            LidState::Wide => self.lid_wide,
        }
    }

    fn pir_range(&self, dilation: DilationState) -> RangeCfg {
        match dilation {
            DilationState::Dilated => self.pir_dilated,
            DilationState::Undilated => self.pir_undilated,
        }
    }
}

/// The per-eye iris (left and right irises of one subject are independent
/// textures) plus the subject-level identity id.
pub(crate) fn eye_identity(config: &CohortConfig, subject_idx: u32, side: EyeSide) -> IrisIdentity {
    let seed = derive_seed_str(
        config.master_seed,
        "eye-texture",
        &[subject_idx as u64, side as u64],
    );
    let mut identity = generate_identity(seed);
    identity.identity_id = format!("subj-{subject_idx:03}");
    identity
}

/// Draw the capture parameters for one (subject, eye, condition) cell.
pub(crate) fn capture_params(
    config: &CohortConfig,
    identity: &IrisIdentity,
    side: EyeSide,
    condition_idx: usize,
) -> CaptureParams {
    let condition = Condition::ALL[condition_idx];
    let seed = derive_seed_str(
        config.master_seed,
        "capture",
        &[
            fnv1a64(identity.identity_id.as_bytes()),
            side as u64,
            condition_idx as u64,
        ],
    );
    let mut rng = rng_from_seed(seed);
    let pir = config.pir_range(condition.dilation).sample(&mut rng);
    let lid_frac = config.lid_range(condition.lid).sample(&mut rng);
    let lower_frac = config.lid_lower.sample(&mut rng);
    let blur = config.blur_sigma.sample(&mut rng);
    let noise = config.noise_sigma.sample(&mut rng);
    let dx = config.gaze_jitter.sample(&mut rng);
    let dy = config.gaze_jitter.sample(&mut rng);
    let lashes = config.eyelash_count.sample(&mut rng).round().max(0.0) as u32;

    let cy = config.height as f64 / 2.0 + dy;
    let r = identity.iris_radius;
    CaptureParams {
        width: config.width,
        height: config.height,
        pupil_radius: pir * r,
        upper_lid_y: cy - lid_frac * r,
        lower_lid_y: cy + lower_frac * r,
        blur_sigma: blur,
        noise_sigma: noise,
        gaze_offset: (dx, dy),
        deformation: if config.deformation_k == 0.0 {
            Deformation::Linear
        } else {
            Deformation::Nonlinear {
                k: config.deformation_k * pir,
            }
        },
        eyelash_count: lashes,
        noise_seed: derive_seed_str(seed, "capture-noise", &[]),
    }
}

fn capture_id(identity_id: &str, side: EyeSide, condition: Condition) -> String {
    format!("{identity_id}-{side}-{}", condition.label())
}

/// Generate the full cohort under `out_dir`: `images/*.pgm`, `masks/*.igmk`,
/// and `manifest.csv`. Returns the manifest path. Rendering parallelizes
/// over captures; output is byte-identical for a fixed config.
pub fn generate_cohort(config: &CohortConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    let mut cells = Vec::new();
    for subject_idx in 0..config.identity_count {
        for &side in EyeSide::ALL {
            for condition_idx in 0..Condition::ALL.len() {
                cells.push((subject_idx, side, condition_idx));
            }
        }
    }

    let mut entries = cells
        .par_iter()
        .map(|&(subject_idx, side, condition_idx)| -> Result<ManifestEntry> {
            let identity = eye_identity(config, subject_idx, side);
            let params = capture_params(config, &identity, side, condition_idx);
            let condition = Condition::ALL[condition_idx];
            let id = capture_id(&identity.identity_id, side, condition);
            let (image, masks) = render_capture(&identity, &params)?;
            let image_rel = PathBuf::from("images").join(format!("{id}.pgm"));
            let mask_rel = PathBuf::from("masks").join(format!("{id}.igmk"));
            write_pgm(&out_dir.join(&image_rel), &image)?;
            write_masks(&out_dir.join(&mask_rel), &masks)?;
            Ok(ManifestEntry {
                capture_id: id,
                identity_id: identity.identity_id.clone(),
                eye_side: side,
                lid_state: condition.lid,
                dilation_state: condition.dilation,
                image_path: image_rel,
                mask_path: mask_rel,
                base_dir: out_dir.to_path_buf(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    entries.sort_by(|a, b| a.capture_id.cmp(&b.capture_id));
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &entries)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_manifest;
    use tempfile::tempdir;

    fn tiny_config() -> CohortConfig {
        CohortConfig {
            identity_count: 1,
            master_seed: 7,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn one_identity_yields_twelve_captures() {
        let dir = tempdir().unwrap();
        let manifest = generate_cohort(&tiny_config(), dir.path()).unwrap();
        let entries = load_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 12);
        // both eyes, all six conditions, loadable pixel data
        let record = entries[0].load_record().unwrap();
        assert_eq!(record.image.width(), 320);
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let cfg = tiny_config();
        let manifest_a = generate_cohort(&cfg, dir_a.path()).unwrap();
        let manifest_b = generate_cohort(&cfg, dir_b.path()).unwrap();
        assert_eq!(
            fs::read(&manifest_a).unwrap(),
            fs::read(&manifest_b).unwrap()
        );
        for entry in load_manifest(&manifest_a).unwrap() {
            let rel_img = dir_a.path().join(&entry.image_path);
            let rel_img_b = dir_b.path().join(&entry.image_path);
            assert_eq!(fs::read(rel_img).unwrap(), fs::read(rel_img_b).unwrap());
            let rel_mask = dir_a.path().join(&entry.mask_path);
            let rel_mask_b = dir_b.path().join(&entry.mask_path);
            assert_eq!(fs::read(rel_mask).unwrap(), fs::read(rel_mask_b).unwrap());
        }
    }

    #[test]
    fn left_and_right_eyes_have_distinct_textures() {
        let cfg = tiny_config();
        let left = eye_identity(&cfg, 0, EyeSide::Left);
        let right = eye_identity(&cfg, 0, EyeSide::Right);
        assert_eq!(left.identity_id, right.identity_id);
        assert_ne!(left.texture_seed, right.texture_seed);
    }

    #[test]
    fn rejects_degenerate_config() {
        let mut cfg = tiny_config();
        cfg.pir_dilated = RangeCfg::new(0.7, 0.3);
        assert!(generate_cohort(&cfg, tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn dilation_groups_separate_in_measured_pir() {
        let dir = tempdir().unwrap();
        let cfg = CohortConfig {
            identity_count: 3,
            master_seed: 99,
            ..CohortConfig::default()
        };
        let manifest = generate_cohort(&cfg, dir.path()).unwrap();
        let mut dilated = Vec::new();
        let mut undilated = Vec::new();
        for entry in load_manifest(&manifest).unwrap() {
            let record = entry.load_record().unwrap();
            let pir = crate::metrics::pupil_iris_ratio(&record.masks).unwrap();
            match entry.dilation_state {
                DilationState::Dilated => dilated.push(pir),
                DilationState::Undilated => undilated.push(pir),
            }
        }
        let median = |xs: &mut Vec<f64>| {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs[xs.len() / 2]
        };
        let dilated_median = median(&mut dilated);
        let undilated_median = median(&mut undilated);
        assert!(
            dilated_median > undilated_median + 0.1,
            "group medians too close: {dilated_median} vs {undilated_median}"
        );
    }
}
