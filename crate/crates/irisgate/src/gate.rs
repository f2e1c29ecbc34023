//! Logistic-regression quality gate and the FMR-constrained discard sweep.
//!
//! Per bootstrap resample (resampling unit: probe images, pairs follow
//! their probes): fix the HD threshold from the resampled impostor
//! distribution, fit a logistic model on genuine pairs labeled by correct
//! acceptance at that threshold, average per-pair probabilities into
//! per-probe quality scores, then sweep discard rates and re-measure
//! FMR/FNMR over the surviving pairs.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{fmr_fnmr, threshold_for_fmr, ComparisonPair, Feature};
use crate::seeding::{derive_seed_str, rng_from_seed};
use crate::stats::percentile_sorted;

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Fitted L2-penalized logistic model. Coefficients live in standardized
/// feature space; prediction applies the stored standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    /// Intercept followed by one weight per feature.
    pub coefficients: Vec<f64>,
    /// Per-feature means subtracted before applying weights.
    pub means: Vec<f64>,
    /// Per-feature scales divided out before applying weights.
    pub scales: Vec<f64>,
    pub regularization: f64,
    pub converged: bool,
    pub iterations: u32,
}

impl LogisticModel {
    /// Predicted probability for one raw feature row.
    pub fn predict(&self, features: &[f64]) -> f64 {
        assert_eq!(features.len(), self.feature_names.len());
        let mut z = self.coefficients[0];
        for (j, &x) in features.iter().enumerate() {
            z += self.coefficients[j + 1] * (x - self.means[j]) / self.scales[j];
        }
        sigmoid(z)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: u32 = 100;
const PROB_CLAMP: f64 = 1e-12;

/// Default L2 strength: just enough to keep coefficients finite under
/// perfect separation.
pub const DEFAULT_L2: f64 = 1e-6;

/// Penalized log-likelihood (intercept unpenalized) of coefficients `beta`
/// over a standardized design.
fn penalized_ll(design: &DMatrix<f64>, labels: &[f64], beta: &DVector<f64>, reg: f64) -> f64 {
    let z = design * beta;
    let mut ll = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = sigmoid(z[i]).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        ll += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * reg * penalty
}

/// Fit by iteratively reweighted least squares with step halving.
///
/// `standardize = false` assumes the caller pre-standardized the features;
/// the stored means/scales are then identity.
pub fn fit_logistic_opts(
    features: &[Vec<f64>],
    labels: &[bool],
    reg: f64,
    feature_names: Vec<String>,
    standardize: bool,
) -> Result<LogisticModel> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::Invalid("features/labels length mismatch".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives < 2 || n - positives < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples of each class, got {positives} positive / {} negative",
            n - positives
        )));
    }
    let d = features[0].len();
    for row in features {
        if row.len() != d {
            return Err(Error::Invalid("ragged feature matrix".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
    }
    if reg < 0.0 || !reg.is_finite() {
        return Err(Error::Invalid("regularization must be finite and >= 0".into()));
    }

    let (means, scales) = if standardize {
        let mut means = vec![0.0; d];
        let mut scales = vec![0.0; d];
        for j in 0..d {
            let m: f64 = features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var: f64 =
                features.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n as f64;
            means[j] = m;
            scales[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        (means, scales)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };

    let mut design = DMatrix::zeros(n, d + 1);
    for (i, row) in features.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for j in 0..d {
            design[(i, j + 1)] = (row[j] - means[j]) / scales[j];
        }
    }
    let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();

    let mut beta = DVector::zeros(d + 1);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..IRLS_MAX_ITER {
        iterations = iter + 1;
        let z = &design * &beta;
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();

        // Gradient of the penalized log-likelihood.
        let mut grad = DVector::zeros(d + 1);
        for i in 0..n {
            let resid = y[i] - p[i];
            for j in 0..=d {
                grad[j] += design[(i, j)] * resid;
            }
        }
        for j in 1..=d {
            grad[j] -= reg * beta[j];
        }

        // Hessian: X^T W X + reg on the weight block.
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let w = (p[i] * (1.0 - p[i])).max(PROB_CLAMP);
            for j in 0..=d {
                let xw = design[(i, j)] * w;
                for k in j..=d {
                    hess[(j, k)] += xw * design[(i, k)];
                }
            }
        }
        for j in 0..=d {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
        }
        for j in 1..=d {
            hess[(j, j)] += reg;
        }

        let step = match Cholesky::new(hess.clone()) {
            Some(ch) => ch.solve(&grad),
            None => hess
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Degenerate("singular IRLS system".into()))?,
        };

        // Step halving keeps the penalized likelihood non-decreasing.
        let current = penalized_ll(&design, &y, &beta, reg);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * alpha;
            if penalized_ll(&design, &y, &candidate, reg) >= current - 1e-12 {
                beta = candidate;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if step.iter().map(|v| (v * alpha).abs()).fold(0.0, f64::max) < IRLS_TOL {
            converged = true;
            break;
        }
    }

    Ok(LogisticModel {
        feature_names,
        coefficients: beta.iter().copied().collect(),
        means,
        scales,
        regularization: reg,
        converged,
        iterations,
    })
}

/// Fit with internal standardization (the default path).
pub fn fit_logistic(features: &[Vec<f64>], labels: &[bool], reg: f64) -> Result<LogisticModel> {
    let names = (0..features.first().map_or(0, Vec::len))
        .map(|j| format!("x{j}"))
        .collect();
    fit_logistic_opts(features, labels, reg, names, true)
}

// ---------------------------------------------------------------------------
// Probe scores
// ---------------------------------------------------------------------------

fn feature_row(pair: &ComparisonPair, features: &[Feature]) -> Result<Vec<f64>> {
    let empty = HashMap::new();
    features
        .iter()
        .map(|f| {
            f.value(pair, &empty).ok_or_else(|| {
                Error::Invalid(format!("feature `{}` unavailable on pair", f.as_str()))
            })
        })
        .collect()
}

/// Average each probe's predicted correct-acceptance probability over all
/// of its genuine pairings. Probes with no genuine pairing are absent.
pub fn probe_quality_scores(
    model: &LogisticModel,
    features: &[Feature],
    genuine_pairs: &[ComparisonPair],
) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for pair in genuine_pairs.iter().filter(|p| p.genuine) {
        let row = feature_row(pair, features)?;
        let p = model.predict(&row);
        let entry = sums.entry(pair.probe_id.clone()).or_insert((0.0, 0));
        entry.0 += p;
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(id, (sum, count))| (id, sum / count as f64))
        .collect())
}

// ---------------------------------------------------------------------------
// Gate sweep
// ---------------------------------------------------------------------------

/// One row of the discard-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSweepRow {
    pub discard_rate: f64,
    pub mean_fmr: f64,
    pub mean_fnmr: f64,
    pub fmr_ci_lo: f64,
    pub fmr_ci_hi: f64,
    pub fnmr_ci_lo: f64,
    pub fnmr_ci_hi: f64,
}

/// Gate sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub features: Vec<Feature>,
    pub discard_rates: Vec<f64>,
    pub fmr_target: f64,
    pub resamples: u32,
    pub regularization: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            features: vec![Feature::Via],
            discard_rates: (0..=7).map(|i| i as f64 / 100.0).collect(),
            fmr_target: 0.001,
            resamples: 500,
            regularization: DEFAULT_L2,
        }
    }
}

const RESAMPLE_RETRIES: u32 = 20;

/// Pairs indexed by probe: the bootstrap resamples probes, and each drawn
/// probe instance carries all of that probe's pairs.
struct ProbeIndex<'a> {
    pairs: &'a [ComparisonPair],
    probe_ids: Vec<String>,
    pair_idx_by_probe: Vec<Vec<usize>>,
}

impl<'a> ProbeIndex<'a> {
    fn build(pairs: &'a [ComparisonPair]) -> Self {
        let mut by_probe: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, pair) in pairs.iter().enumerate() {
            by_probe.entry(pair.probe_id.clone()).or_default().push(i);
        }
        let probe_ids: Vec<String> = by_probe.keys().cloned().collect();
        let pair_idx_by_probe = by_probe.into_values().collect();
        Self {
            pairs,
            probe_ids,
            pair_idx_by_probe,
        }
    }
}

struct ResampleOutcome {
    /// (fmr, fnmr) per discard rate.
    rates: Vec<(f64, f64)>,
    model: Option<LogisticModel>,
    threshold: f64,
}

/// Constant fallback when a resample's genuine labels cannot support a fit
/// (single-class or near-single-class): every probe scores the smoothed
/// prevalence, so gating degenerates to the deterministic tie order.
fn constant_model(features: &[Feature], prevalence: f64) -> LogisticModel {
    let p = prevalence.clamp(1e-6, 1.0 - 1e-6);
    let d = features.len();
    LogisticModel {
        feature_names: features.iter().map(|f| f.as_str().to_string()).collect(),
        coefficients: std::iter::once((p / (1.0 - p)).ln())
            .chain(std::iter::repeat_n(0.0, d))
            .collect(),
        means: vec![0.0; d],
        scales: vec![1.0; d],
        regularization: 0.0,
        converged: true,
        iterations: 0,
    }
}

fn run_resample(
    index: &ProbeIndex<'_>,
    cfg: &GateConfig,
    gated: bool,
    seed: u64,
) -> Result<ResampleOutcome> {
    let universe = index.probe_ids.len();
    for attempt in 0..RESAMPLE_RETRIES {
        let mut rng = rng_from_seed(derive_seed_str(seed, "draw", &[attempt as u64]));
        let draws: Vec<usize> = (0..universe).map(|_| rng.gen_range(0..universe)).collect();

        let mut genuine_pair_idx: Vec<(usize, usize)> = Vec::new(); // (draw slot, pair idx)
        let mut impostor_pair_idx: Vec<(usize, usize)> = Vec::new();
        for (slot, &probe) in draws.iter().enumerate() {
            for &pi in &index.pair_idx_by_probe[probe] {
                if index.pairs[pi].genuine {
                    genuine_pair_idx.push((slot, pi));
                } else {
                    impostor_pair_idx.push((slot, pi));
                }
            }
        }
        if genuine_pair_idx.is_empty() || impostor_pair_idx.is_empty() {
            continue; // redraw
        }

        let impostor_hds: Vec<f64> = impostor_pair_idx
            .iter()
            .map(|&(_, pi)| index.pairs[pi].hd)
            .collect();
        let threshold = threshold_for_fmr(&impostor_hds, cfg.fmr_target)?;

        // Fit on genuine pairs: label = accepted at the fixed threshold.
        let mut rows = Vec::with_capacity(genuine_pair_idx.len());
        let mut labels = Vec::with_capacity(genuine_pair_idx.len());
        for &(_, pi) in &genuine_pair_idx {
            rows.push(feature_row(&index.pairs[pi], &cfg.features)?);
            labels.push(index.pairs[pi].hd <= threshold);
        }
        let prevalence = labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64;
        let names = cfg.features.iter().map(|f| f.as_str().to_string()).collect();
        let model = if gated {
            match fit_logistic_opts(&rows, &labels, cfg.regularization, names, true) {
                Ok(m) => m,
                Err(Error::Degenerate(_)) => constant_model(&cfg.features, prevalence),
                Err(e) => return Err(e),
            }
        } else {
            constant_model(&cfg.features, prevalence)
        };

        // Score distinct probes over their genuine pairs in this resample.
        let mut score_by_probe: HashMap<usize, f64> = HashMap::new();
        {
            let mut sums: HashMap<usize, (f64, u64)> = HashMap::new();
            for &(slot, pi) in &genuine_pair_idx {
                let probe = draws[slot];
                let row = feature_row(&index.pairs[pi], &cfg.features)?;
                let p = model.predict(&row);
                let e = sums.entry(probe).or_insert((0.0, 0));
                e.0 += p;
                e.1 += 1;
            }
            // Deduplicate: repeated draws of one probe share one score.
            let mut per_probe: HashMap<usize, (f64, u64)> = HashMap::new();
            for (probe, (sum, count)) in sums {
                let e = per_probe.entry(probe).or_insert((0.0, 0));
                e.0 += sum;
                e.1 += count;
            }
            for (probe, (sum, count)) in per_probe {
                score_by_probe.insert(probe, sum / count as f64);
            }
        }

        // Scored instances sorted worst-first; ties break on probe id, then
        // draw slot, so discard order is fully deterministic.
        let mut scored_slots: Vec<(usize, usize)> = draws
            .iter()
            .enumerate()
            .filter(|(_, probe)| score_by_probe.contains_key(probe))
            .map(|(slot, &probe)| (slot, probe))
            .collect();
        scored_slots.sort_by(|&(slot_a, probe_a), &(slot_b, probe_b)| {
            let sa = score_by_probe[&probe_a];
            let sb = score_by_probe[&probe_b];
            sa.partial_cmp(&sb)
                .expect("finite scores")
                .then_with(|| index.probe_ids[probe_a].cmp(&index.probe_ids[probe_b]))
                .then_with(|| slot_a.cmp(&slot_b))
        });

        let mut rates = Vec::with_capacity(cfg.discard_rates.len());
        let mut dropped = vec![false; universe.max(draws.len())];
        let mut failed = false;
        for &rate in &cfg.discard_rates {
            dropped.iter_mut().for_each(|d| *d = false);
            if gated {
                let k = (rate * scored_slots.len() as f64).floor() as usize;
                for &(slot, _) in scored_slots.iter().take(k) {
                    dropped[slot] = true;
                }
            }
            let genuine: Vec<f64> = genuine_pair_idx
                .iter()
                .filter(|&&(slot, _)| !dropped[slot])
                .map(|&(_, pi)| index.pairs[pi].hd)
                .collect();
            let impostor: Vec<f64> = impostor_pair_idx
                .iter()
                .filter(|&&(slot, _)| !dropped[slot])
                .map(|&(_, pi)| index.pairs[pi].hd)
                .collect();
            if genuine.is_empty() || impostor.is_empty() {
                failed = true;
                break;
            }
            rates.push(fmr_fnmr(&genuine, &impostor, threshold)?);
        }
        if failed {
            continue; // redraw: gating emptied a class
        }

        return Ok(ResampleOutcome {
            rates,
            model: gated.then_some(model),
            threshold,
        });
    }
    Err(Error::Degenerate(format!(
        "no viable resample after {RESAMPLE_RETRIES} attempts"
    )))
}

/// Per-model summary retained from a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub model: String,
    pub features: Vec<Feature>,
    pub rows: Vec<GateSweepRow>,
    /// Mean fitted coefficients (intercept first) across resamples, in
    /// standardized space.
    pub mean_coefficients: Vec<f64>,
    pub mean_threshold: f64,
    pub converged_fraction: f64,
    pub resamples: u32,
}

fn summarize(
    model_name: &str,
    cfg: &GateConfig,
    outcomes: &[ResampleOutcome],
) -> SweepSummary {
    let resamples = outcomes.len();
    let rows = cfg
        .discard_rates
        .iter()
        .enumerate()
        .map(|(ri, &rate)| {
            let fmrs: Vec<f64> = outcomes.iter().map(|o| o.rates[ri].0).collect();
            let fnmrs: Vec<f64> = outcomes.iter().map(|o| o.rates[ri].1).collect();
            let mean_fmr = fmrs.iter().sum::<f64>() / resamples as f64;
            let mean_fnmr = fnmrs.iter().sum::<f64>() / resamples as f64;
            let mut fmr_sorted = fmrs.clone();
            fmr_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mut fnmr_sorted = fnmrs;
            fnmr_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            // Percentile CI, widened if needed so the point estimate is
            // always inside.
            let fmr_lo = percentile_sorted(&fmr_sorted, 0.025).min(mean_fmr);
            let fmr_hi = percentile_sorted(&fmr_sorted, 0.975).max(mean_fmr);
            let fnmr_lo = percentile_sorted(&fnmr_sorted, 0.025).min(mean_fnmr);
            let fnmr_hi = percentile_sorted(&fnmr_sorted, 0.975).max(mean_fnmr);
            GateSweepRow {
                discard_rate: rate,
                mean_fmr,
                mean_fnmr,
                fmr_ci_lo: fmr_lo,
                fmr_ci_hi: fmr_hi,
                fnmr_ci_lo: fnmr_lo,
                fnmr_ci_hi: fnmr_hi,
            }
        })
        .collect();

    let d = cfg.features.len() + 1;
    let mut mean_coefficients = vec![0.0; d];
    let mut fitted = 0usize;
    let mut converged = 0usize;
    for outcome in outcomes {
        if let Some(model) = &outcome.model {
            fitted += 1;
            if model.converged {
                converged += 1;
            }
            for (j, c) in model.coefficients.iter().enumerate() {
                mean_coefficients[j] += c;
            }
        }
    }
    if fitted > 0 {
        for c in &mut mean_coefficients {
            *c /= fitted as f64;
        }
    }
    SweepSummary {
        model: model_name.to_string(),
        features: cfg.features.clone(),
        rows,
        mean_coefficients,
        mean_threshold: outcomes.iter().map(|o| o.threshold).sum::<f64>() / resamples as f64,
        converged_fraction: if fitted == 0 {
            1.0
        } else {
            converged as f64 / fitted as f64
        },
        resamples: resamples as u32,
    }
}

fn sweep_internal(
    pairs: &[ComparisonPair],
    cfg: &GateConfig,
    gated: bool,
    model_name: &str,
    seed: u64,
) -> Result<SweepSummary> {
    if cfg.discard_rates.iter().any(|&r| !(0.0..1.0).contains(&r)) {
        return Err(Error::Invalid("discard rates must lie in [0, 1)".into()));
    }
    if cfg.resamples == 0 {
        return Err(Error::Invalid("resamples must be positive".into()));
    }
    if !pairs.iter().any(|p| p.genuine) {
        return Err(Error::EmptyClass("no genuine pairs"));
    }
    if !pairs.iter().any(|p| !p.genuine) {
        return Err(Error::EmptyClass("no impostor pairs"));
    }
    let index = ProbeIndex::build(pairs);
    let outcomes: Vec<ResampleOutcome> = (0..cfg.resamples)
        .into_par_iter()
        .map(|r| {
            let rs = derive_seed_str(seed, "gate-resample", &[r as u64]);
            run_resample(&index, cfg, gated, rs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(model_name, cfg, &outcomes))
}

/// Bootstrap the gate over the configured discard rates.
pub fn gate_sweep(pairs: &[ComparisonPair], cfg: &GateConfig, seed: u64) -> Result<SweepSummary> {
    sweep_internal(pairs, cfg, true, "gate", seed)
}

/// The configured sweep next to its ungated baseline, sharing resample
/// seeds so the curves are paired.
pub fn gate_sweep_with_baseline(
    pairs: &[ComparisonPair],
    cfg: &GateConfig,
    seed: u64,
) -> Result<Vec<SweepSummary>> {
    Ok(vec![
        sweep_internal(pairs, cfg, false, "M0", seed)?,
        sweep_internal(pairs, cfg, true, "gate", seed)?,
    ])
}

/// Run the standard model family with shared resample seeds so the curves
/// are paired: M0 (no gate), M1 per single feature, M3 (all three).
pub fn model_comparison(
    pairs: &[ComparisonPair],
    base: &GateConfig,
    seed: u64,
) -> Result<Vec<SweepSummary>> {
    let families: [(&str, Vec<Feature>, bool); 5] = [
        ("M0", vec![Feature::Via], false),
        ("M1_VIA", vec![Feature::Via], true),
        ("M1_PIR", vec![Feature::Pir], true),
        ("M1_MRD1", vec![Feature::Mrd1], true),
        ("M3", vec![Feature::Via, Feature::Pir, Feature::Mrd1], true),
    ];
    families
        .into_iter()
        .map(|(name, features, gated)| {
            let cfg = GateConfig {
                features,
                ..base.clone()
            };
            sweep_internal(pairs, &cfg, gated, name, seed)
        })
        .collect()
}
