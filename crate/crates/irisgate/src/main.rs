//! Command-line front end for the iris quality-gate workbench.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use irisgate::config::ExperimentConfig;
use irisgate::error::{Error, Result};
use irisgate::eval::{
    build_pair_specs, correlation_report, decision_environment, CaptureMeta, Feature,
};
use irisgate::gate::{gate_sweep_with_baseline, GateConfig};
use irisgate::matcher::rotation_min_hd;
use irisgate::model::load_manifest;
use irisgate::pipeline::{
    self, compute_quality, encode_captures, load_codes, read_metrics_csv, read_pairs_csv,
    write_correlations_csv, write_gate_csv, write_matches_csv, write_metrics_csv, write_pairs_csv,
    MatchCache,
};
use irisgate::seeding::derive_seed_str;
use irisgate::synth::generate_cohort;

#[derive(Parser)]
#[command(
    name = "irisgate",
    version,
    about = "Synthetic iris cohort generation, quality metrics, iris-code matching, and FMR-constrained quality-gate evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (images, masks, manifest).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "irisgate-out")]
        out: PathBuf,
    },
    /// Compute quality metrics and validator outcomes for a manifest.
    Metrics {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Output CSV path.
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Normalize and encode every capture of a manifest into iris codes.
    Encode {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the .ircd code files.
        #[arg(long, default_value = "codes")]
        out: PathBuf,
    },
    /// Match iris codes: an explicit pair list or a gallery x probes cross
    /// product.
    Match {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding <capture_id>.ircd files.
        #[arg(long)]
        codes: PathBuf,
        /// CSV of enroll_id,probe_id rows (with header).
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// File with one enrollment capture id per line.
        #[arg(long, requires = "probes")]
        gallery: Option<PathBuf>,
        /// File with one probe capture id per line.
        #[arg(long, requires = "gallery")]
        probes: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "matches.csv")]
        out: PathBuf,
    },
    /// Pair a dataset under the enrollment policy, match it, and write
    /// pairs.csv, decision_env.json, and correlations.csv.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codes: PathBuf,
        /// metrics.csv produced by the metrics subcommand.
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Bootstrap the logistic quality gate over discard rates.
    Gate {
        /// pairs.csv produced by evaluate or run.
        #[arg(long)]
        pairs: PathBuf,
        /// metrics.csv with probe metrics.
        #[arg(long)]
        metrics: PathBuf,
        /// Comma-separated feature list (via,pir,mrd1); omit to run the
        /// full M0/M1/M3 comparison.
        #[arg(long)]
        features: Option<String>,
        /// Discard rates: start:end:step (e.g. 0:0.07:0.01) or a comma
        /// list.
        #[arg(long, default_value = "0:0.07:0.01")]
        rates: String,
        #[arg(long, default_value_t = 0.001)]
        fmr_target: f64,
        #[arg(long, default_value_t = 500)]
        resamples: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for gate_sweep.csv and models.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the full pipeline: synth, metrics, encode, match, evaluate,
    /// gate, summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "irisgate-out")]
        out: PathBuf,
    },
    /// Produce plot-ready CSVs and a text report from pipeline artifacts.
    Report {
        /// Artifact directory written by `run`.
        #[arg(long)]
        artifacts: PathBuf,
    },
}

fn parse_features(spec: &str) -> Result<Vec<Feature>> {
    spec.split(',')
        .map(|token| match token.trim() {
            "via" => Ok(Feature::Via),
            "pir" => Ok(Feature::Pir),
            "mrd1" => Ok(Feature::Mrd1),
            "mrd2" => Ok(Feature::Mrd2),
            "sharpness" => Ok(Feature::Sharpness),
            "code_length" => Ok(Feature::CodeLength),
            other => Err(Error::Config(format!("unknown feature `{other}`"))),
        })
        .collect()
}

fn parse_rates(spec: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        f64::from_str(s.trim()).map_err(|_| Error::Config(format!("bad rate `{s}`")))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config("rates must be start:end:step".into()));
        }
        let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if step <= 0.0 || end < start {
            return Err(Error::Config("rates must have positive step, end >= start".into()));
        }
        let n = ((end - start) / step).round() as usize;
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        spec.split(',').map(parse).collect()
    }
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = config.load()?;
            let mut cohort = cfg.cohort.clone();
            cohort.master_seed = cfg.master_seed;
            let manifest = generate_cohort(&cohort, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Metrics {
            config,
            manifest,
            out,
        } => {
            let cfg = config.load()?;
            let entries = load_manifest(&manifest)?;
            let quality = compute_quality(&entries, &cfg.validator)?;
            write_metrics_csv(&out, &quality)?;
            let failed = quality.iter().filter(|q| !q.passed).count();
            println!(
                "wrote {} ({} captures, {} failed validation)",
                out.display(),
                quality.len(),
                failed
            );
        }
        Command::Encode {
            config,
            manifest,
            out,
        } => {
            let cfg = config.load()?;
            let entries = load_manifest(&manifest)?;
            let ids: HashSet<String> = entries.iter().map(|e| e.capture_id.clone()).collect();
            let (lengths, errors) = encode_captures(&entries, &ids, &cfg.encoder, &out)?;
            println!(
                "encoded {} codes into {} ({} failures)",
                lengths.len(),
                out.display(),
                errors.len()
            );
            for (id, msg) in errors {
                eprintln!("  {id}: {msg}");
            }
        }
        Command::Match {
            config,
            codes,
            pairs,
            gallery,
            probes,
            out,
        } => {
            let cfg = config.load()?;
            let mut id_pairs: Vec<(String, String)> = Vec::new();
            if let Some(pairs_path) = pairs {
                let mut reader = csv::Reader::from_path(&pairs_path)
                    .map_err(|e| Error::Config(format!("{}: {e}", pairs_path.display())))?;
                for record in reader.records() {
                    let record = record?;
                    if record.len() < 2 {
                        return Err(Error::Config("pair rows need enroll_id,probe_id".into()));
                    }
                    id_pairs.push((record[0].to_string(), record[1].to_string()));
                }
            } else if let (Some(gallery), Some(probes)) = (gallery, probes) {
                let gallery = read_id_list(&gallery)?;
                let probes = read_id_list(&probes)?;
                for g in &gallery {
                    for p in &probes {
                        id_pairs.push((g.clone(), p.clone()));
                    }
                }
            } else {
                return Err(Error::Config(
                    "match needs --pairs or --gallery/--probes".into(),
                ));
            }
            let ids: HashSet<String> = id_pairs
                .iter()
                .flat_map(|(a, b)| [a.clone(), b.clone()])
                .collect();
            let packed = load_codes(&codes, &ids)?;
            let mut rows = Vec::with_capacity(id_pairs.len());
            for (enroll, probe) in &id_pairs {
                let a = packed
                    .get(enroll)
                    .ok_or_else(|| Error::Invalid(format!("no code for `{enroll}`")))?;
                let b = packed
                    .get(probe)
                    .ok_or_else(|| Error::Invalid(format!("no code for `{probe}`")))?;
                rows.push((enroll.clone(), probe.clone(), rotation_min_hd(a, b, &cfg.matcher)?));
            }
            write_matches_csv(&out, &rows)?;
            println!("wrote {} ({} comparisons)", out.display(), rows.len());
        }
        Command::Evaluate {
            config,
            manifest,
            codes,
            metrics,
            out,
        } => {
            let cfg = config.load()?;
            let entries = load_manifest(&manifest)?;
            let quality = read_metrics_csv(&metrics)?;
            let mut metrics_map: HashMap<String, irisgate::model::MetricSet> = quality
                .iter()
                .filter_map(|q| q.metrics.clone().map(|m| (q.meta.capture_id.clone(), m)))
                .collect();
            let usable: Vec<CaptureMeta> = entries
                .iter()
                .filter(|e| metrics_map.contains_key(&e.capture_id))
                .map(CaptureMeta::from)
                .collect();
            let ids: HashSet<String> = usable.iter().map(|m| m.capture_id.clone()).collect();
            let packed = load_codes(&codes, &ids)?;
            for (id, code) in &packed {
                if let Some(m) = metrics_map.get_mut(id) {
                    m.code_length = Some(code.usable_bits());
                }
            }
            let mut policy = cfg.pairing;
            policy.label_seed = derive_seed_str(cfg.master_seed, "pairing", &[]);
            let specs = build_pair_specs(&usable, &policy)?;
            let mut cache = MatchCache::default();
            let pairs = cache.complete(&specs, &packed, &metrics_map, &cfg.matcher)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_pairs_csv(&out.join("pairs.csv"), &pairs)?;
            let env = decision_environment(
                &pairs,
                cfg.bin_width,
                derive_seed_str(cfg.master_seed, "decision-env", &[]),
            )?;
            std::fs::write(
                out.join("decision_env.json"),
                serde_json::to_string_pretty(&env).map_err(Error::from)? + "\n",
            )
            .map_err(|e| Error::io(out.join("decision_env.json"), e))?;
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
            let report = correlation_report(&pairs, &features, &enrollment_via);
            write_correlations_csv(&out.join("correlations.csv"), &report)?;
            println!(
                "evaluated {} pairs (d' = {:.3}); wrote pairs.csv, decision_env.json, correlations.csv",
                pairs.len(),
                env.d_prime
            );
        }
        Command::Gate {
            pairs,
            metrics,
            features,
            rates,
            fmr_target,
            resamples,
            seed,
            out,
        } => {
            let gate_cfg = GateConfig {
                features: features
                    .as_deref()
                    .map(parse_features)
                    .transpose()?
                    .unwrap_or_else(|| vec![Feature::Via]),
                discard_rates: parse_rates(&rates)?,
                fmr_target,
                resamples,
                ..GateConfig::default()
            };
            let quality = read_metrics_csv(&metrics)?;
            let metrics_map: HashMap<String, irisgate::model::MetricSet> = quality
                .iter()
                .filter_map(|q| q.metrics.clone().map(|m| (q.meta.capture_id.clone(), m)))
                .collect();
            let pairs = read_pairs_csv(&pairs, &metrics_map)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let sweeps = if features.is_some() {
                gate_sweep_with_baseline(&pairs, &gate_cfg, seed)?
            } else {
                irisgate::gate::model_comparison(&pairs, &gate_cfg, seed)?
            };
            write_gate_csv(&out.join("gate_sweep.csv"), &sweeps)?;
            std::fs::write(
                out.join("models.json"),
                serde_json::to_string_pretty(&sweeps).map_err(Error::from)? + "\n",
            )
            .map_err(|e| Error::io(out.join("models.json"), e))?;
            println!("wrote gate_sweep.csv and models.json under {}", out.display());
        }
        Command::Run { config, out } => {
            let cfg = config.load()?;
            let summary = pipeline::run_pipeline(&cfg, &out)?;
            println!(
                "pipeline complete: {} usable captures, {} genuine / {} impostor pairs",
                summary.usable_captures, summary.genuine_pairs, summary.impostor_pairs
            );
            println!("summary: {}", out.join("summary.json").display());
        }
        Command::Report { artifacts } => {
            let report = pipeline::report(&artifacts)?;
            print!("{}", report.text);
            eprintln!("plot-ready CSVs under {}", report.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Invalid(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}
