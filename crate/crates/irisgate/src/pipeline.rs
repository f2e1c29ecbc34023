//! End-to-end orchestration: synth → metrics/validate → encode →
//! pair/match → evaluate → gate, with every artifact written under one
//! output directory and reproducible from (config, seed) alone.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderConfig, ExperimentConfig};
use crate::encode::{code_length, encode, normalize, read_code, write_code};
use crate::error::{Error, Result};
use crate::eval::{
    build_pair_specs, correlation_report, decision_environment, pearson_r, threshold_for_fmr,
    CaptureMeta, ComparisonPair, CorrelationRow, DecisionEnvironment, EnrollmentPolicy, Feature,
    PairSpec,
};
use crate::gate::{model_comparison, SweepSummary};
use crate::matcher::{batch_match, pack, MatchResult, MatcherConfig, PackedIrisCode};
use crate::metrics::{compute_metrics, validate_metrics, ValidatorConfig};
use crate::model::{
    load_manifest, Condition, DilationState, EyeSide, LidState, ManifestEntry, MetricSet,
};
use crate::seeding::derive_seed_str;
use crate::stats::{box_stats, BoxStats};
use crate::synth::generate_cohort;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Marker written next to partial outputs when a stage fails.
pub const FAILED_MARKER: &str = "FAILED";

/// Failure token used when a capture's metrics cannot be computed at all
/// (degenerate masks), alongside the validator failure tokens.
pub const UNDEFINED_METRICS: &str = "UndefinedMetrics";

// ---------------------------------------------------------------------------
// Metrics stage
// ---------------------------------------------------------------------------

/// Per-capture outcome of the metrics/validation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureQuality {
    pub meta: CaptureMeta,
    pub metrics: Option<MetricSet>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Load every capture, compute metrics, and validate. Parallel over
/// captures; output order follows the manifest.
pub fn compute_quality(
    entries: &[ManifestEntry],
    validator: &ValidatorConfig,
) -> Result<Vec<CaptureQuality>> {
    entries
        .par_iter()
        .map(|entry| {
            let record = entry.load_record()?;
            let meta = CaptureMeta::from(entry);
            match compute_metrics(&record.image, &record.masks) {
                Ok(metrics) => {
                    let report = validate_metrics(&metrics, validator);
                    Ok(CaptureQuality {
                        meta,
                        metrics: Some(metrics),
                        passed: report.passed,
                        failures: report
                            .failures
                            .iter()
                            .map(|f| f.as_str().to_string())
                            .collect(),
                    })
                }
                Err(Error::Undefined(_)) => Ok(CaptureQuality {
                    meta,
                    metrics: None,
                    passed: false,
                    failures: vec![UNDEFINED_METRICS.to_string()],
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Encode stage
// ---------------------------------------------------------------------------

/// Normalize and encode the selected captures, writing one `.ircd` file per
/// capture. Returns usable-bit counts; captures whose geometry cannot be
/// unwrapped are reported back as errors keyed by id.
pub fn encode_captures(
    entries: &[ManifestEntry],
    ids: &HashSet<String>,
    encoder: &EncoderConfig,
    codes_dir: &Path,
) -> Result<(BTreeMap<String, u64>, BTreeMap<String, String>)> {
    fs::create_dir_all(codes_dir).map_err(|e| Error::io(codes_dir, e))?;
    let outcomes: Vec<(String, std::result::Result<u64, String>)> = entries
        .par_iter()
        .filter(|e| ids.contains(&e.capture_id))
        .map(|entry| -> Result<(String, std::result::Result<u64, String>)> {
            let record = entry.load_record()?;
            let polar = match normalize(
                &record.image,
                &record.masks,
                encoder.radial_res,
                encoder.angular_res,
            ) {
                Ok(p) => p,
                Err(Error::Undefined(msg)) => return Ok((entry.capture_id.clone(), Err(msg))),
                Err(e) => return Err(e),
            };
            let code = match encode(&polar, &encoder.gabor) {
                Ok(c) => c,
                Err(Error::EmptyCode) => {
                    return Ok((entry.capture_id.clone(), Err("empty code".to_string())))
                }
                Err(e) => return Err(e),
            };
            write_code(&codes_dir.join(format!("{}.ircd", entry.capture_id)), &code)?;
            Ok((entry.capture_id.clone(), Ok(code_length(&code))))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lengths = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(len) => {
                lengths.insert(id, len);
            }
            Err(msg) => {
                errors.insert(id, msg);
            }
        }
    }
    Ok((lengths, errors))
}

/// Load packed codes for the given capture ids from a codes directory.
pub fn load_codes(codes_dir: &Path, ids: &HashSet<String>) -> Result<HashMap<String, PackedIrisCode>> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted
        .par_iter()
        .map(|id| {
            let code = read_code(&codes_dir.join(format!("{id}.ircd")))?;
            Ok(((*id).clone(), pack(&code)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Match cache: HD is policy-independent, so comparisons are computed once
// per unordered capture pair and reused across enrollment policies.
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct MatchCache {
    map: HashMap<(String, String), MatchResult>,
}

impl MatchCache {
    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    /// Complete pair specs against the cache, matching only what is new.
    pub fn complete(
        &mut self,
        specs: &[PairSpec],
        codes: &HashMap<String, PackedIrisCode>,
        metrics: &HashMap<String, MetricSet>,
        matcher: &MatcherConfig,
    ) -> Result<Vec<ComparisonPair>> {
        let mut todo: Vec<(String, String)> = Vec::new();
        let mut seen = HashSet::new();
        for spec in specs {
            let key = Self::key(&spec.enrollment_id, &spec.probe_id);
            if !self.map.contains_key(&key) && seen.insert(key.clone()) {
                todo.push(key);
            }
        }
        let mut refs = Vec::with_capacity(todo.len());
        for (a, b) in &todo {
            let ca = codes
                .get(a)
                .ok_or_else(|| Error::Invalid(format!("no code for `{a}`")))?;
            let cb = codes
                .get(b)
                .ok_or_else(|| Error::Invalid(format!("no code for `{b}`")))?;
            refs.push((ca, cb));
        }
        let results = batch_match(&refs, matcher)?;
        for (key, result) in todo.into_iter().zip(results) {
            self.map.insert(key, result);
        }

        specs
            .iter()
            .map(|spec| {
                let key = Self::key(&spec.enrollment_id, &spec.probe_id);
                let stored = self.map[&key];
                // Stored shift applies to the lexicographically larger id;
                // flip it when the probe is the smaller one.
                let shift = if spec.probe_id >= spec.enrollment_id {
                    stored.shift
                } else {
                    -stored.shift
                };
                let probe_metrics = metrics
                    .get(&spec.probe_id)
                    .ok_or_else(|| Error::Invalid(format!("no metrics for `{}`", spec.probe_id)))?
                    .clone();
                Ok(ComparisonPair {
                    enrollment_id: spec.enrollment_id.clone(),
                    probe_id: spec.probe_id.clone(),
                    genuine: spec.genuine,
                    hd: stored.hd,
                    shift,
                    overlap_bits: stored.overlap_bits,
                    reliable: stored.reliable,
                    probe_metrics,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })
}

const METRICS_HEADER: [&str; 17] = [
    "capture_id",
    "identity_id",
    "eye_side",
    "lid_state",
    "dilation_state",
    "via",
    "pir",
    "mrd1",
    "mrd2",
    "iris_diameter",
    "pupil_diameter",
    "sharpness",
    "occlusion_90",
    "occlusion_30",
    "code_length",
    "passed",
    "failures",
];

pub fn write_metrics_csv(path: &Path, rows: &[CaptureQuality]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        let m = row.metrics.as_ref();
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            row.meta.capture_id.clone(),
            row.meta.identity_id.clone(),
            row.meta.eye_side.to_string(),
            row.meta.condition.lid.to_string(),
            row.meta.condition.dilation.to_string(),
            m.map(|m| m.via.to_string()).unwrap_or_default(),
            fmt(m.map(|m| m.pir)),
            fmt(m.map(|m| m.mrd1)),
            fmt(m.map(|m| m.mrd2)),
            fmt(m.map(|m| m.iris_diameter)),
            fmt(m.map(|m| m.pupil_diameter)),
            fmt(m.map(|m| m.sharpness)),
            fmt(m.map(|m| m.occlusion_90)),
            fmt(m.map(|m| m.occlusion_30)),
            m.and_then(|m| m.code_length)
                .map(|c| c.to_string())
                .unwrap_or_default(),
            row.passed.to_string(),
            row.failures.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CaptureQuality>> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(METRICS_HEADER) {
        return Err(Error::format(path, "unexpected metrics.csv header"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or_default();
        let parse_f = |i: usize| -> Result<f64> {
            get(i)
                .parse()
                .map_err(|_| Error::format(path, format!("bad float `{}`", get(i))))
        };
        let metrics = if get(5).is_empty() {
            None
        } else {
            Some(MetricSet {
                via: get(5)
                    .parse()
                    .map_err(|_| Error::format(path, "bad via"))?,
                pir: parse_f(6)?,
                mrd1: parse_f(7)?,
                mrd2: parse_f(8)?,
                iris_diameter: parse_f(9)?,
                pupil_diameter: parse_f(10)?,
                sharpness: parse_f(11)?,
                occlusion_90: parse_f(12)?,
                occlusion_30: parse_f(13)?,
                code_length: if get(14).is_empty() {
                    None
                } else {
                    Some(get(14).parse().map_err(|_| Error::format(path, "bad code_length"))?)
                },
            })
        };
        rows.push(CaptureQuality {
            meta: CaptureMeta {
                capture_id: get(0).to_string(),
                identity_id: get(1).to_string(),
                eye_side: EyeSide::from_str(get(2))?,
                condition: Condition {
                    lid: LidState::from_str(get(3))?,
                    dilation: DilationState::from_str(get(4))?,
                },
            },
            metrics,
            passed: get(15) == "true",
            failures: if get(16).is_empty() {
                Vec::new()
            } else {
                get(16).split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}

const PAIRS_HEADER: [&str; 7] = [
    "enroll_id",
    "probe_id",
    "genuine",
    "hd",
    "shift",
    "overlap_bits",
    "flags",
];

pub fn write_pairs_csv(path: &Path, pairs: &[ComparisonPair]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PAIRS_HEADER)?;
    for p in pairs {
        w.write_record([
            p.enrollment_id.clone(),
            p.probe_id.clone(),
            p.genuine.to_string(),
            p.hd.to_string(),
            p.shift.to_string(),
            p.overlap_bits.to_string(),
            if p.reliable { String::new() } else { "unreliable".into() },
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Rebuild comparison pairs from `pairs.csv`, joining probe metrics from a
/// metrics map.
pub fn read_pairs_csv(
    path: &Path,
    metrics: &HashMap<String, MetricSet>,
) -> Result<Vec<ComparisonPair>> {
    let mut reader = csv_reader(path)?;
    if reader.headers()?.iter().ne(PAIRS_HEADER) {
        return Err(Error::format(path, "unexpected pairs.csv header"));
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or_default();
        let probe_id = get(1).to_string();
        let probe_metrics = metrics
            .get(&probe_id)
            .ok_or_else(|| Error::Invalid(format!("no metrics for probe `{probe_id}`")))?
            .clone();
        pairs.push(ComparisonPair {
            enrollment_id: get(0).to_string(),
            probe_id,
            genuine: get(2) == "true",
            hd: get(3)
                .parse()
                .map_err(|_| Error::format(path, "bad hd"))?,
            shift: get(4)
                .parse()
                .map_err(|_| Error::format(path, "bad shift"))?,
            overlap_bits: get(5)
                .parse()
                .map_err(|_| Error::format(path, "bad overlap"))?,
            reliable: get(6) != "unreliable",
            probe_metrics,
        });
    }
    Ok(pairs)
}

pub fn write_matches_csv(path: &Path, rows: &[(String, String, MatchResult)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["enroll_id", "probe_id", "hd", "shift", "overlap_bits", "flags"])?;
    for (enroll, probe, r) in rows {
        w.write_record([
            enroll.clone(),
            probe.clone(),
            r.hd.to_string(),
            r.shift.to_string(),
            r.overlap_bits.to_string(),
            if r.reliable { String::new() } else { "unreliable".into() },
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_correlations_csv(path: &Path, rows: &[CorrelationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["feature", "genuine_r", "genuine_n", "impostor_r", "impostor_n"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        w.write_record([
            row.feature.clone(),
            fmt(row.genuine_r),
            row.genuine_n.to_string(),
            fmt(row.impostor_r),
            row.impostor_n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_gate_csv(path: &Path, sweeps: &[SweepSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "model",
        "discard_rate",
        "mean_fmr",
        "mean_fnmr",
        "fmr_ci_lo",
        "fmr_ci_hi",
        "fnmr_ci_lo",
        "fnmr_ci_hi",
    ])?;
    for sweep in sweeps {
        for row in &sweep.rows {
            w.write_record([
                sweep.model.clone(),
                row.discard_rate.to_string(),
                row.mean_fmr.to_string(),
                row.mean_fnmr.to_string(),
                row.fmr_ci_lo.to_string(),
                row.fmr_ci_hi.to_string(),
                row.fnmr_ci_lo.to_string(),
                row.fnmr_ci_hi.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConditionCount {
    pub generated: u32,
    pub failed: u32,
    pub failure_counts: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub schema_version: u32,
    pub master_seed: u64,
    /// Generation/validation accounting per capture condition.
    pub capture_counts: BTreeMap<String, ConditionCount>,
    pub usable_captures: u32,
    pub genuine_pairs: u64,
    pub impostor_pairs: u64,
    /// FMR-constrained threshold on the full impostor distribution; absent
    /// when the cohort left nothing to compare.
    pub hd_threshold: Option<f64>,
    pub d_prime_by_enrollment: BTreeMap<String, f64>,
    pub correlations: Vec<CorrelationRow>,
    /// Genuine-pair VIA-vs-HD correlation per enrollment condition.
    pub via_r_by_enrollment: BTreeMap<String, Option<f64>>,
    pub gate: Vec<SweepSummary>,
    /// Degradation notes (e.g. every capture failed validation, so the
    /// comparison stages were skipped).
    pub notes: Vec<String>,
}

impl PipelineSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let summary: PipelineSummary = serde_json::from_str(&text)?;
        if summary.schema_version != SUMMARY_SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported summary schema {}", summary.schema_version),
            ));
        }
        Ok(summary)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

fn write_failed_marker(out_dir: &Path, stage: &str, error: &Error) {
    let _ = fs::write(
        out_dir.join(FAILED_MARKER),
        format!("stage: {stage}\nerror: {error}\n"),
    );
}

/// Execute every stage under `out_dir`. Partial outputs are retained with a
/// `FAILED` marker when a stage errors.
pub fn run_pipeline(config: &ExperimentConfig, out_dir: &Path) -> Result<PipelineSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let _ = fs::remove_file(out_dir.join(FAILED_MARKER));
    match run_stages(config, out_dir) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            let stage = match &e {
                Error::Stage { stage, .. } => stage,
                _ => "unknown",
            };
            write_failed_marker(out_dir, stage, &e);
            Err(e)
        }
    }
}

fn run_stages(config: &ExperimentConfig, out_dir: &Path) -> Result<PipelineSummary> {
    let master = config.master_seed;
    config
        .save(&out_dir.join("config.json"))
        .map_err(|e| e.in_stage("config"))?;

    // synth
    let mut cohort_cfg = config.cohort.clone();
    cohort_cfg.master_seed = master;
    let manifest_path =
        generate_cohort(&cohort_cfg, out_dir).map_err(|e| e.in_stage("synth"))?;
    let entries = load_manifest(&manifest_path).map_err(|e| e.in_stage("synth"))?;

    // metrics + validation
    let mut quality =
        compute_quality(&entries, &config.validator).map_err(|e| e.in_stage("metrics"))?;

    // encode survivors
    let passed_ids: HashSet<String> = quality
        .iter()
        .filter(|q| q.passed)
        .map(|q| q.meta.capture_id.clone())
        .collect();
    let codes_dir = out_dir.join("codes");
    let (code_lengths, encode_errors) =
        encode_captures(&entries, &passed_ids, &config.encoder, &codes_dir)
            .map_err(|e| e.in_stage("encode"))?;
    for q in &mut quality {
        if let Some(metrics) = &mut q.metrics {
            metrics.code_length = code_lengths.get(&q.meta.capture_id).copied();
        }
        if let Some(msg) = encode_errors.get(&q.meta.capture_id) {
            q.passed = false;
            q.failures.push(format!("EncodeFailed:{msg}"));
        }
    }
    write_metrics_csv(&out_dir.join("metrics.csv"), &quality)
        .map_err(|e| e.in_stage("metrics"))?;

    // Condition-level accounting.
    let mut capture_counts: BTreeMap<String, ConditionCount> = BTreeMap::new();
    for q in &quality {
        let entry = capture_counts.entry(q.meta.condition.label()).or_default();
        entry.generated += 1;
        if !q.passed {
            entry.failed += 1;
            for f in &q.failures {
                *entry.failure_counts.entry(f.clone()).or_default() += 1;
            }
        }
    }

    // pair + match under the configured policy
    let usable: Vec<&CaptureQuality> = quality
        .iter()
        .filter(|q| q.passed && code_lengths.contains_key(&q.meta.capture_id))
        .collect();
    let usable_meta: Vec<CaptureMeta> = usable.iter().map(|q| q.meta.clone()).collect();
    let metrics_map: HashMap<String, MetricSet> = usable
        .iter()
        .map(|q| (q.meta.capture_id.clone(), q.metrics.clone().expect("passed")))
        .collect();

    let mut summary = PipelineSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        master_seed: master,
        capture_counts,
        usable_captures: usable.len() as u32,
        genuine_pairs: 0,
        impostor_pairs: 0,
        hd_threshold: None,
        d_prime_by_enrollment: BTreeMap::new(),
        correlations: Vec::new(),
        via_r_by_enrollment: BTreeMap::new(),
        gate: Vec::new(),
        notes: Vec::new(),
    };

    // A cohort where validation leaves nothing to compare is a legitimate
    // survey outcome: keep the accounting, skip the comparison stages.
    match analyze(config, out_dir, master, &quality, &usable_meta, &metrics_map, &codes_dir) {
        Ok(analysis) => {
            summary.genuine_pairs = analysis.genuine_pairs;
            summary.impostor_pairs = analysis.impostor_pairs;
            summary.hd_threshold = Some(analysis.hd_threshold);
            summary.d_prime_by_enrollment = analysis.d_prime_by_enrollment;
            summary.correlations = analysis.correlations;
            summary.via_r_by_enrollment = analysis.via_r_by_enrollment;
            summary.gate = analysis.gate;
        }
        Err(Error::EmptyPairing(what)) => {
            summary
                .notes
                .push(format!("comparison stages skipped: no `{what}` enrollments survived"));
        }
        Err(Error::EmptyClass(what)) => {
            summary
                .notes
                .push(format!("comparison stages skipped: {what}"));
        }
        Err(e) => return Err(e),
    }

    summary
        .save(&out_dir.join("summary.json"))
        .map_err(|e| e.in_stage("summary"))?;
    Ok(summary)
}

struct AnalysisOutputs {
    genuine_pairs: u64,
    impostor_pairs: u64,
    hd_threshold: f64,
    d_prime_by_enrollment: BTreeMap<String, f64>,
    correlations: Vec<CorrelationRow>,
    via_r_by_enrollment: BTreeMap<String, Option<f64>>,
    gate: Vec<SweepSummary>,
}

fn analyze(
    config: &ExperimentConfig,
    out_dir: &Path,
    master: u64,
    quality: &[CaptureQuality],
    usable_meta: &[CaptureMeta],
    metrics_map: &HashMap<String, MetricSet>,
    codes_dir: &Path,
) -> Result<AnalysisOutputs> {
    let usable_ids: HashSet<String> = usable_meta.iter().map(|m| m.capture_id.clone()).collect();
    let codes = load_codes(codes_dir, &usable_ids).map_err(|e| e.in_stage("match"))?;

    let mut policy = config.pairing;
    policy.label_seed = derive_seed_str(master, "pairing", &[]);
    let specs = build_pair_specs(usable_meta, &policy)?;
    let mut cache = MatchCache::default();
    let pairs = cache
        .complete(&specs, &codes, metrics_map, &config.matcher)
        .map_err(|e| e.in_stage("match"))?;
    write_pairs_csv(&out_dir.join("pairs.csv"), &pairs).map_err(|e| e.in_stage("match"))?;

    // evaluate
    let env = decision_environment(
        &pairs,
        config.bin_width,
        derive_seed_str(master, "decision-env", &[]),
    )?;
    let env_json = serde_json::to_string_pretty(&env).map_err(Error::from)?;
    fs::write(out_dir.join("decision_env.json"), env_json + "\n")
        .map_err(|e| Error::io(out_dir.join("decision_env.json"), e).in_stage("evaluate"))?;

    let impostor_hds: Vec<f64> = pairs.iter().filter(|p| !p.genuine).map(|p| p.hd).collect();
    let hd_threshold = threshold_for_fmr(&impostor_hds, config.gate.fmr_target)
        .map_err(|e| e.in_stage("evaluate"))?;

    let enrollment_via: HashMap<String, f64> = quality
        .iter()
        .filter_map(|q| {
            q.metrics
                .as_ref()
                .map(|m| (q.meta.capture_id.clone(), m.via as f64))
        })
        .collect();
    let features = [
        Feature::Via,
        Feature::Pir,
        Feature::Mrd1,
        Feature::Mrd2,
        Feature::Sharpness,
        Feature::CodeLength,
        Feature::DeltaVia,
    ];
    let correlations = correlation_report(&pairs, &features, &enrollment_via);
    write_correlations_csv(&out_dir.join("correlations.csv"), &correlations)
        .map_err(|e| e.in_stage("evaluate"))?;

    // Per-enrollment-condition decision environments and VIA correlations.
    let mut d_prime_by_enrollment = BTreeMap::new();
    let mut via_r_by_enrollment = BTreeMap::new();
    for condition in Condition::ALL {
        let cond_policy = EnrollmentPolicy {
            condition,
            require_enrollment_condition: true,
            label_seed: policy.label_seed,
        };
        let cond_specs = match build_pair_specs(usable_meta, &cond_policy) {
            Ok(s) => s,
            Err(Error::EmptyPairing(_)) => continue,
            Err(e) => return Err(e.in_stage("evaluate")),
        };
        let cond_pairs = cache
            .complete(&cond_specs, &codes, metrics_map, &config.matcher)
            .map_err(|e| e.in_stage("evaluate"))?;
        let genuine: Vec<f64> = cond_pairs.iter().filter(|p| p.genuine).map(|p| p.hd).collect();
        let impostor: Vec<f64> = cond_pairs.iter().filter(|p| !p.genuine).map(|p| p.hd).collect();
        if let Ok(d) = crate::eval::decidability(&genuine, &impostor) {
            d_prime_by_enrollment.insert(condition.label(), d);
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for p in cond_pairs.iter().filter(|p| p.genuine) {
            xs.push(p.probe_metrics.via as f64);
            ys.push(p.hd);
        }
        via_r_by_enrollment.insert(condition.label(), pearson_r(&xs, &ys).ok());
    }

    // gate
    let gate_sweeps = model_comparison(&pairs, &config.gate, derive_seed_str(master, "gate", &[]))
        .map_err(|e| e.in_stage("gate"))?;
    write_gate_csv(&out_dir.join("gate_sweep.csv"), &gate_sweeps)
        .map_err(|e| e.in_stage("gate"))?;
    let models_json = serde_json::to_string_pretty(&gate_sweeps).map_err(Error::from)?;
    fs::write(out_dir.join("models.json"), models_json + "\n")
        .map_err(|e| Error::io(out_dir.join("models.json"), e).in_stage("gate"))?;

    Ok(AnalysisOutputs {
        genuine_pairs: pairs.iter().filter(|p| p.genuine).count() as u64,
        impostor_pairs: pairs.iter().filter(|p| !p.genuine).count() as u64,
        hd_threshold,
        d_prime_by_enrollment,
        correlations,
        via_r_by_enrollment,
        gate: gate_sweeps,
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// Plot-ready report derived from pipeline artifacts.
#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

fn write_box_csv(path: &Path, rows: &[(String, BoxStats)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["group", "median", "q1", "q3", "whisker_lo", "whisker_hi", "n"])?;
    for (group, s) in rows {
        w.write_record([
            group.clone(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.whisker_lo.to_string(),
            s.whisker_hi.to_string(),
            s.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Build boxplot CSVs, HD histogram CSVs, and a formatted text summary from
/// a finished artifact directory. Missing artifacts are named in the error.
pub fn report(artifact_dir: &Path) -> Result<Report> {
    let required = [
        "manifest.csv",
        "metrics.csv",
        "decision_env.json",
        "gate_sweep.csv",
        "summary.json",
    ];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|name| !artifact_dir.join(name).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "missing artifacts in {}: {}",
            artifact_dir.display(),
            missing.join(", ")
        )));
    }

    let report_dir = artifact_dir.join("report");
    fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    let quality = read_metrics_csv(&artifact_dir.join("metrics.csv"))?;
    let summary = PipelineSummary::load(&artifact_dir.join("summary.json"))?;
    let env_text = fs::read_to_string(artifact_dir.join("decision_env.json"))
        .map_err(|e| Error::io(artifact_dir.join("decision_env.json"), e))?;
    let env: DecisionEnvironment = serde_json::from_str(&env_text)?;
    let mut warnings = Vec::new();

    // Usable captures only, grouped three ways as in the metric boxplots.
    let usable: Vec<&CaptureQuality> = quality.iter().filter(|q| q.passed).collect();
    let mut grouped_box = |label: &str,
                           file: &str,
                           groups: Vec<(String, Vec<f64>)>|
     -> Result<Vec<(String, BoxStats)>> {
        let mut rows = Vec::new();
        for (group, values) in groups {
            match box_stats(&values) {
                Some(stats) => rows.push((group, stats)),
                None => warnings.push(format!("{label}: group `{group}` is empty, omitted")),
            }
        }
        write_box_csv(&report_dir.join(file), &rows)?;
        Ok(rows)
    };

    let collect = |select: &dyn Fn(&CaptureQuality) -> Option<(String, f64)>| {
        let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for q in &usable {
            if let Some((group, value)) = select(q) {
                map.entry(group).or_default().push(value);
            }
        }
        map.into_iter().collect::<Vec<_>>()
    };

    let pir_rows = grouped_box(
        "pir",
        "pir_by_dilation.csv",
        collect(&|q| {
            q.metrics
                .as_ref()
                .map(|m| (q.meta.condition.dilation.to_string(), m.pir))
        }),
    )?;
    let mrd_rows = grouped_box(
        "mrd1",
        "mrd1_by_lid.csv",
        collect(&|q| {
            q.metrics
                .as_ref()
                .map(|m| (q.meta.condition.lid.to_string(), m.mrd1))
        }),
    )?;
    let via_rows = grouped_box(
        "via",
        "via_by_condition.csv",
        collect(&|q| {
            q.metrics
                .as_ref()
                .map(|m| (q.meta.condition.label(), m.via as f64))
        }),
    )?;

    // HD histograms from the decision environment.
    {
        let path = report_dir.join("hd_histograms.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["bin_lo", "bin_hi", "genuine", "impostor_subsample"])?;
        for (i, (g, m)) in env.genuine_hist.iter().zip(&env.impostor_hist).enumerate() {
            let lo = i as f64 * env.bin_width;
            w.write_record([
                lo.to_string(),
                (lo + env.bin_width).to_string(),
                g.to_string(),
                m.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    // Human-readable summary.
    let mut text = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(text, "== Capture accounting ==");
    for (condition, count) in &summary.capture_counts {
        let _ = writeln!(
            text,
            "  {condition}: {} generated, {} failed {}",
            count.generated,
            count.failed,
            if count.failure_counts.is_empty() {
                String::new()
            } else {
                format!(
                    "({})",
                    count
                        .failure_counts
                        .iter()
                        .map(|(k, v)| format!("{k}: {v}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                )
            }
        );
    }
    let _ = writeln!(
        text,
        "usable: {} | genuine pairs: {} | impostor pairs: {}",
        summary.usable_captures, summary.genuine_pairs, summary.impostor_pairs
    );
    let _ = writeln!(
        text,
        "decision environment: d' = {:.3} (mu1 {:.4}, mu2 {:.4}); HD threshold @ FMR target: {}",
        env.d_prime,
        env.mu1,
        env.mu2,
        summary
            .hd_threshold
            .map(|t| format!("{t:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    let _ = writeln!(text, "\n== Decidability by enrollment condition ==");
    for (condition, d) in &summary.d_prime_by_enrollment {
        let _ = writeln!(text, "  {condition}: d' = {d:.3}");
    }
    let _ = writeln!(text, "\n== Probe-feature correlations with HD ==");
    for row in &summary.correlations {
        let fmt = |v: Option<f64>| {
            v.map(|r| format!("{r:+.3}")).unwrap_or_else(|| "undefined".into())
        };
        let _ = writeln!(
            text,
            "  {:<12} genuine r = {} (n={}), impostor r = {} (n={})",
            row.feature,
            fmt(row.genuine_r),
            row.genuine_n,
            fmt(row.impostor_r),
            row.impostor_n
        );
    }
    let _ = writeln!(text, "\n== Quality-gate sweep ==");
    for sweep in &summary.gate {
        let _ = writeln!(text, "  model {}", sweep.model);
        let _ = writeln!(text, "    rate%   FMR%            FNMR%");
        for row in &sweep.rows {
            let _ = writeln!(
                text,
                "    {:<7.1} {:.3} [{:.3},{:.3}] {:.2} [{:.2},{:.2}]",
                row.discard_rate * 100.0,
                row.mean_fmr * 100.0,
                row.fmr_ci_lo * 100.0,
                row.fmr_ci_hi * 100.0,
                row.mean_fnmr * 100.0,
                row.fnmr_ci_lo * 100.0,
                row.fnmr_ci_hi * 100.0
            );
        }
    }
    let _ = writeln!(
        text,
        "\nboxplot groups written: pir {} | mrd1 {} | via {}",
        pir_rows.len(),
        mrd_rows.len(),
        via_rows.len()
    );
    for warning in &warnings {
        let _ = writeln!(text, "warning: {warning}");
    }
    fs::write(report_dir.join("report.txt"), &text)
        .map_err(|e| Error::io(report_dir.join("report.txt"), e))?;

    Ok(Report {
        text,
        warnings,
        out_dir: report_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> ExperimentConfig {
        let mut config = ExperimentConfig {
            master_seed: 5,
            ..ExperimentConfig::default()
        };
        config.cohort.identity_count = 2;
        config.gate.resamples = 25;
        config.gate.discard_rates = vec![0.0, 0.05];
        // Two identities give few impostor pairs; loosen the FMR target so
        // the threshold stays meaningful.
        config.gate.fmr_target = 0.02;
        config
    }

    #[test]
    fn pipeline_smoke_produces_all_artifacts() {
        let dir = tempdir().unwrap();
        let config = small_config();
        let summary = run_pipeline(&config, dir.path()).unwrap();
        for name in [
            "config.json",
            "manifest.csv",
            "metrics.csv",
            "pairs.csv",
            "decision_env.json",
            "correlations.csv",
            "gate_sweep.csv",
            "models.json",
            "summary.json",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        assert!(!dir.path().join(FAILED_MARKER).exists());
        assert!(summary.genuine_pairs > 0);
        assert!(summary.impostor_pairs > 0);
        assert_eq!(
            summary.capture_counts.values().map(|c| c.generated).sum::<u32>(),
            24
        );

        // summary.json round-trips through its schema.
        let loaded = PipelineSummary::load(&dir.path().join("summary.json")).unwrap();
        assert_eq!(loaded, summary);

        // metrics.csv round-trips.
        let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 24);

        // pairs.csv round-trips against the metrics map.
        let metrics_map: HashMap<String, MetricSet> = rows
            .iter()
            .filter_map(|q| q.metrics.clone().map(|m| (q.meta.capture_id.clone(), m)))
            .collect();
        let pairs = read_pairs_csv(&dir.path().join("pairs.csv"), &metrics_map).unwrap();
        assert_eq!(pairs.len() as u64, summary.genuine_pairs + summary.impostor_pairs);

        // report runs over the artifacts.
        let rep = report(dir.path()).unwrap();
        assert!(rep.text.contains("Quality-gate sweep"));
        assert!(dir.path().join("report/pir_by_dilation.csv").exists());
        assert!(dir.path().join("report/hd_histograms.csv").exists());
    }

    #[test]
    fn identical_configs_give_identical_bytes() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let config = small_config();
        run_pipeline(&config, dir_a.path()).unwrap();
        run_pipeline(&config, dir_b.path()).unwrap();
        for name in ["summary.json", "gate_sweep.csv", "pairs.csv", "metrics.csv"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn impossible_sharpness_floor_fails_every_capture() {
        let dir = tempdir().unwrap();
        let mut config = small_config();
        config.validator.sharpness_min = 1e9;
        let summary = run_pipeline(&config, dir.path()).unwrap();
        assert_eq!(summary.usable_captures, 0);
        let total: u32 = summary.capture_counts.values().map(|c| c.generated).sum();
        let failed: u32 = summary.capture_counts.values().map(|c| c.failed).sum();
        assert_eq!(total, failed);
        assert_eq!(summary.capture_counts.len(), 6, "grouped by condition");
        for count in summary.capture_counts.values() {
            assert_eq!(count.failure_counts.get("TooBlurry"), Some(&count.failed));
        }
        assert!(!summary.notes.is_empty());
        assert!(summary.hd_threshold.is_none());
    }

    #[test]
    fn report_names_missing_artifacts() {
        let dir = tempdir().unwrap();
        match report(dir.path()) {
            Err(Error::Invalid(msg)) => {
                assert!(msg.contains("metrics.csv"), "{msg}");
                assert!(msg.contains("summary.json"), "{msg}");
            }
            other => panic!("expected missing-artifact error, got {other:?}"),
        }
    }
}
