//! Pairing protocol and decision-environment statistics.
//!
//! Captures pair into genuine (same identity and eye side) and impostor
//! comparisons under an enrollment policy, the matcher fills in Hamming
//! distances, and this module derives decidability, FMR/FNMR tradeoffs,
//! FMR-constrained thresholds, and metric-vs-HD Pearson correlations.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{batch_match, MatcherConfig, PackedIrisCode};
use crate::model::{
    CaptureRecord, Condition, DilationState, EyeSide, LidState, ManifestEntry, MetricSet,
};
use crate::seeding::{derive_seed_str, fnv1a64, rng_from_seed};

/// The labels pairing needs from each capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureMeta {
    pub capture_id: String,
    pub identity_id: String,
    pub eye_side: EyeSide,
    pub condition: Condition,
}

impl From<&ManifestEntry> for CaptureMeta {
    fn from(e: &ManifestEntry) -> Self {
        Self {
            capture_id: e.capture_id.clone(),
            identity_id: e.identity_id.clone(),
            eye_side: e.eye_side,
            condition: Condition {
                lid: e.lid_state,
                dilation: e.dilation_state,
            },
        }
    }
}

impl From<&CaptureRecord> for CaptureMeta {
    fn from(r: &CaptureRecord) -> Self {
        Self {
            capture_id: r.capture_id.clone(),
            identity_id: r.identity_id.clone(),
            eye_side: r.eye_side,
            condition: r.condition(),
        }
    }
}

/// Which capture condition may serve as the enrollment image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrollmentPolicy {
    pub condition: Condition,
    /// When true (the default), only pairs containing at least one
    /// qualifying capture are returned; when false every pair is returned
    /// and non-qualifying pairs get a seeded-random label assignment.
    pub require_enrollment_condition: bool,
    /// Seed for tie-broken enrollment/probe label assignment.
    pub label_seed: u64,
}

impl Default for EnrollmentPolicy {
    fn default() -> Self {
        Self {
            condition: Condition {
                lid: LidState::Wide,
                dilation: DilationState::Undilated,
            },
            require_enrollment_condition: true,
            label_seed: 0,
        }
    }
}

impl EnrollmentPolicy {
    pub fn with_condition(condition: Condition) -> Self {
        Self {
            condition,
            ..Self::default()
        }
    }
}

/// One enrollment/probe pairing before matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSpec {
    pub enrollment_id: String,
    pub probe_id: String,
    pub genuine: bool,
}

/// A matched pair with the probe's metric snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub enrollment_id: String,
    pub probe_id: String,
    pub genuine: bool,
    pub hd: f64,
    pub shift: i64,
    pub overlap_bits: u64,
    pub reliable: bool,
    pub probe_metrics: MetricSet,
}

/// Enumerate enrollment/probe pairs under a policy.
///
/// Genuine pairs are unordered capture pairs of the same (identity, eye);
/// impostor pairs cross eyes. The qualifying capture becomes the
/// enrollment; when both (or, in unconstrained mode, neither) qualify, the
/// assignment is seeded-random but deterministic for a given seed.
pub fn build_pair_specs(
    captures: &[CaptureMeta],
    policy: &EnrollmentPolicy,
) -> Result<Vec<PairSpec>> {
    let mut sorted: Vec<&CaptureMeta> = captures.iter().collect();
    sorted.sort_by(|a, b| a.capture_id.cmp(&b.capture_id));

    if !sorted.iter().any(|c| c.condition == policy.condition) {
        return Err(Error::EmptyPairing(policy.condition.label()));
    }

    let mut specs = Vec::new();
    for i in 0..sorted.len() {
        for j in (i + 1)..sorted.len() {
            let (a, b) = (sorted[i], sorted[j]);
            let a_ok = a.condition == policy.condition;
            let b_ok = b.condition == policy.condition;
            if policy.require_enrollment_condition && !a_ok && !b_ok {
                continue;
            }
            let genuine = a.identity_id == b.identity_id && a.eye_side == b.eye_side;
            let enrollment_is_a = match (a_ok, b_ok) {
                (true, false) => true,
                (false, true) => false,
                _ => {
                    let h = derive_seed_str(
                        policy.label_seed,
                        "enrollment-label",
                        &[fnv1a64(a.capture_id.as_bytes()), fnv1a64(b.capture_id.as_bytes())],
                    );
                    h & 1 == 0
                }
            };
            let (enrollment, probe) = if enrollment_is_a { (a, b) } else { (b, a) };
            specs.push(PairSpec {
                enrollment_id: enrollment.capture_id.clone(),
                probe_id: probe.capture_id.clone(),
                genuine,
            });
        }
    }
    Ok(specs)
}

/// Run the matcher over pair specs and attach probe metrics.
pub fn complete_pairs(
    specs: &[PairSpec],
    codes: &HashMap<String, PackedIrisCode>,
    metrics: &HashMap<String, MetricSet>,
    matcher_cfg: &MatcherConfig,
) -> Result<Vec<ComparisonPair>> {
    let mut refs = Vec::with_capacity(specs.len());
    for spec in specs {
        let a = codes
            .get(&spec.enrollment_id)
            .ok_or_else(|| Error::Invalid(format!("no code for `{}`", spec.enrollment_id)))?;
        let b = codes
            .get(&spec.probe_id)
            .ok_or_else(|| Error::Invalid(format!("no code for `{}`", spec.probe_id)))?;
        refs.push((a, b));
    }
    let results = batch_match(&refs, matcher_cfg)?;
    specs
        .iter()
        .zip(results)
        .map(|(spec, r)| {
            let probe_metrics = metrics
                .get(&spec.probe_id)
                .ok_or_else(|| Error::Invalid(format!("no metrics for `{}`", spec.probe_id)))?
                .clone();
            Ok(ComparisonPair {
                enrollment_id: spec.enrollment_id.clone(),
                probe_id: spec.probe_id.clone(),
                genuine: spec.genuine,
                hd: r.hd,
                shift: r.shift,
                overlap_bits: r.overlap_bits,
                reliable: r.reliable,
                probe_metrics,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Decidability index: |mu1 - mu2| / sqrt(0.5 (sigma1^2 + sigma2^2)) with
/// sample standard deviations.
pub fn decidability(genuine_hds: &[f64], impostor_hds: &[f64]) -> Result<f64> {
    if genuine_hds.len() < 2 || impostor_hds.len() < 2 {
        return Err(Error::Invalid(
            "decidability needs at least two values per class".into(),
        ));
    }
    let mu1 = mean(genuine_hds);
    let mu2 = mean(impostor_hds);
    let s1 = sample_std(genuine_hds);
    let s2 = sample_std(impostor_hds);
    if s1 == 0.0 && s2 == 0.0 {
        return Err(Error::undefined("decidability with zero spread"));
    }
    Ok((mu1 - mu2).abs() / (0.5 * (s1 * s1 + s2 * s2)).sqrt())
}

/// FMR and FNMR at a threshold. The accept rule is `hd <= threshold`
/// (ties accept).
pub fn fmr_fnmr(genuine_hds: &[f64], impostor_hds: &[f64], threshold: f64) -> Result<(f64, f64)> {
    if genuine_hds.is_empty() || impostor_hds.is_empty() {
        return Err(Error::Invalid("fmr/fnmr need nonempty classes".into()));
    }
    let fm = impostor_hds.iter().filter(|&&h| h <= threshold).count() as f64
        / impostor_hds.len() as f64;
    let fnm = genuine_hds.iter().filter(|&&h| h > threshold).count() as f64
        / genuine_hds.len() as f64;
    Ok((fm, fnm))
}

/// Largest threshold whose FMR stays at or below `target`, derived from the
/// sorted impostor order statistics (midpoint between the k-th and
/// (k+1)-th, k = floor(target * n)). With duplicated order statistics the
/// candidate backs off until the constraint holds; k = 0 returns a value
/// just below the smallest impostor distance.
pub fn threshold_for_fmr(impostor_hds: &[f64], target: f64) -> Result<f64> {
    if impostor_hds.is_empty() {
        return Err(Error::Invalid("threshold_for_fmr needs impostors".into()));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Invalid(format!("target {target} must be in (0, 1)")));
    }
    let mut xs = impostor_hds.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite hds"));
    let n = xs.len();
    let fmr_at = |t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / n as f64;

    let mut k = ((target * n as f64).floor() as usize).min(n - 1);
    while k > 0 {
        let t = 0.5 * (xs[k - 1] + xs[k]);
        if fmr_at(t) <= target {
            return Ok(t);
        }
        k -= 1;
    }
    Ok(next_below(xs[0]))
}

/// Largest f64 strictly below `x` (for x finite).
fn next_below(x: f64) -> f64 {
    let t = f64::next_down(x);
    debug_assert!(t < x);
    t
}

/// Sample Pearson correlation coefficient (single-pass co-moments).
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid(
            "pearson_r needs equal-length inputs of at least 2".into(),
        ));
    }
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut m2x = 0.0;
    let mut m2y = 0.0;
    let mut cxy = 0.0;
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = xi - mean_x;
        mean_x += dx / n;
        let dy = yi - mean_y;
        mean_y += dy / n;
        m2x += dx * (xi - mean_x);
        m2y += dy * (yi - mean_y);
        cxy += dx * (yi - mean_y);
    }
    if m2x == 0.0 || m2y == 0.0 {
        return Err(Error::undefined("pearson_r with zero variance"));
    }
    Ok(cxy / (m2x * m2y).sqrt())
}

/// Probe features whose correlation with HD is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Via,
    Pir,
    Mrd1,
    Mrd2,
    Sharpness,
    CodeLength,
    /// Probe VIA minus enrollment VIA.
    DeltaVia,
}

impl Feature {
    pub fn as_str(&self) -> &'static str {
        match self {
            Feature::Via => "via",
            Feature::Pir => "pir",
            Feature::Mrd1 => "mrd1",
            Feature::Mrd2 => "mrd2",
            Feature::Sharpness => "sharpness",
            Feature::CodeLength => "code_length",
            Feature::DeltaVia => "delta_via",
        }
    }

    pub(crate) fn value(
        &self,
        pair: &ComparisonPair,
        enrollment_via: &HashMap<String, f64>,
    ) -> Option<f64> {
        let m = &pair.probe_metrics;
        match self {
            Feature::Via => Some(m.via as f64),
            Feature::Pir => Some(m.pir),
            Feature::Mrd1 => Some(m.mrd1),
            Feature::Mrd2 => Some(m.mrd2),
            Feature::Sharpness => Some(m.sharpness),
            Feature::CodeLength => m.code_length.map(|c| c as f64),
            Feature::DeltaVia => enrollment_via
                .get(&pair.enrollment_id)
                .map(|ev| m.via as f64 - ev),
        }
    }
}

/// Pearson r of one feature against HD, per split. `None` marks an
/// undefined entry (degenerate feature or empty split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub feature: String,
    pub genuine_r: Option<f64>,
    pub genuine_n: usize,
    pub impostor_r: Option<f64>,
    pub impostor_n: usize,
}

/// Correlate probe features with HD, separately for genuine and impostor
/// pairs. `enrollment_via` backs the probe-minus-enrollment VIA feature.
pub fn correlation_report(
    pairs: &[ComparisonPair],
    features: &[Feature],
    enrollment_via: &HashMap<String, f64>,
) -> Vec<CorrelationRow> {
    features
        .iter()
        .map(|feature| {
            let split = |want: bool| -> (Option<f64>, usize) {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for pair in pairs.iter().filter(|p| p.genuine == want) {
                    if let Some(v) = feature.value(pair, enrollment_via) {
                        xs.push(v);
                        ys.push(pair.hd);
                    }
                }
                (pearson_r(&xs, &ys).ok(), xs.len())
            };
            let (genuine_r, genuine_n) = split(true);
            let (impostor_r, impostor_n) = split(false);
            CorrelationRow {
                feature: feature.as_str().to_string(),
                genuine_r,
                genuine_n,
                impostor_r,
                impostor_n,
            }
        })
        .collect()
}

/// Genuine/impostor HD distributions: moments, decidability, and
/// equal-count histograms for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEnvironment {
    #[serde(skip)]
    pub genuine_hds: Vec<f64>,
    #[serde(skip)]
    pub impostor_hds: Vec<f64>,
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub d_prime: f64,
    pub bin_width: f64,
    /// Genuine HD histogram over [0, 1].
    pub genuine_hist: Vec<u64>,
    /// Histogram of a seeded impostor subsample equal in size to the
    /// genuine class.
    pub impostor_hist: Vec<u64>,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

/// Default histogram bin width. The coarse 0.125 width is available via
/// config for side-by-side comparisons.
pub const DEFAULT_BIN_WIDTH: f64 = 0.0125;

pub fn decision_environment(
    pairs: &[ComparisonPair],
    bin_width: f64,
    subsample_seed: u64,
) -> Result<DecisionEnvironment> {
    let genuine_hds: Vec<f64> = pairs.iter().filter(|p| p.genuine).map(|p| p.hd).collect();
    let impostor_hds: Vec<f64> = pairs.iter().filter(|p| !p.genuine).map(|p| p.hd).collect();
    if genuine_hds.is_empty() {
        return Err(Error::EmptyClass("no genuine pairs"));
    }
    if impostor_hds.is_empty() {
        return Err(Error::EmptyClass("no impostor pairs"));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::Invalid(format!("bin width {bin_width} out of range")));
    }

    let nbins = (1.0 / bin_width).ceil() as usize;
    let hist = |values: &[f64]| -> Vec<u64> {
        let mut bins = vec![0u64; nbins];
        for &v in values {
            let idx = ((v / bin_width) as usize).min(nbins - 1);
            bins[idx] += 1;
        }
        bins
    };

    let subsample: Vec<f64> = if impostor_hds.len() <= genuine_hds.len() {
        impostor_hds.clone()
    } else {
        let mut rng = rng_from_seed(derive_seed_str(subsample_seed, "impostor-subsample", &[]));
        let mut idx: Vec<usize> =
            index_sample(&mut rng, impostor_hds.len(), genuine_hds.len()).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| impostor_hds[i]).collect()
    };

    let mu1 = mean(&genuine_hds);
    let mu2 = mean(&impostor_hds);
    let sigma1 = if genuine_hds.len() > 1 { sample_std(&genuine_hds) } else { 0.0 };
    let sigma2 = if impostor_hds.len() > 1 { sample_std(&impostor_hds) } else { 0.0 };
    let denom = (0.5 * (sigma1 * sigma1 + sigma2 * sigma2)).sqrt();
    let d_prime = if denom == 0.0 {
        0.0
    } else {
        (mu1 - mu2).abs() / denom
    };

    Ok(DecisionEnvironment {
        genuine_hist: hist(&genuine_hds),
        impostor_hist: hist(&subsample),
        genuine_count: genuine_hds.len(),
        impostor_count: impostor_hds.len(),
        mu1,
        sigma1,
        mu2,
        sigma2,
        d_prime,
        bin_width,
        genuine_hds,
        impostor_hds,
    })
}

/// Group pair HDs by the enrollment capture's condition. Used to reproduce
/// the per-enrollment decision environments and correlation panels.
pub fn split_by_enrollment_condition<'a>(
    pairs: &'a [ComparisonPair],
    conditions: &HashMap<String, Condition>,
) -> BTreeMap<Condition, Vec<&'a ComparisonPair>> {
    let mut grouped: BTreeMap<Condition, Vec<&ComparisonPair>> = BTreeMap::new();
    for pair in pairs {
        if let Some(&condition) = conditions.get(&pair.enrollment_id) {
            grouped.entry(condition).or_default().push(pair);
        }
    }
    grouped
}
