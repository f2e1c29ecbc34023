//! Calibration probe: prints the statistics the texture and filter
//! defaults were tuned against. Ignored in normal runs; invoke with
//! `cargo test --test dev_calibration -- --ignored --nocapture`.

use irisgate::config::ExperimentConfig;
use irisgate::encode::{encode, normalize, GaborParams};
use irisgate::eval::pearson_r;
use irisgate::matcher::{fractional_hd, pack, rotation_min_hd, MatcherConfig};
use irisgate::pipeline::run_pipeline;
use irisgate::synth::{generate_identity, render_capture, CaptureParams};

#[test]
#[ignore]
fn print_statistics() {
    let params = GaborParams::default();
    let cfg = MatcherConfig::default();

    // Cross-seed field correlation.
    let a = generate_identity(0).sample_polar(16, 200);
    let b = generate_identity(1).sample_polar(16, 200);
    let xs: Vec<f64> = a.intensities().iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = b.intensities().iter().map(|&v| v as f64).collect();
    println!("field r(seed0, seed1) = {:+.4}", pearson_r(&xs, &ys).unwrap());

    // Impostor HD statistics over synthetic-identity codes.
    let n = 500;
    let codes: Vec<_> = (0..2 * n)
        .map(|s| pack(&encode(&generate_identity(1000 + s).sample_polar(16, 200), &params).unwrap()))
        .collect();
    let mut sum0 = 0.0;
    let mut summin = 0.0;
    let mut min_hd: f64 = 1.0;
    let mut max0: f64 = 0.0;
    for i in 0..n {
        let (x, y) = (&codes[2 * i as usize], &codes[2 * i as usize + 1]);
        let h0 = fractional_hd(x, y, cfg.min_overlap).unwrap().hd;
        let hm = rotation_min_hd(x, y, &cfg).unwrap().hd;
        sum0 += h0;
        summin += hm;
        min_hd = min_hd.min(hm);
        max0 = max0.max(h0);
    }
    println!(
        "impostor shift-0 mean = {:.4}, rotation-min mean = {:.4} (min {:.3}, max0 {:.3})",
        sum0 / n as f64,
        summin / n as f64,
        min_hd,
        max0
    );

    // Genuine HD across dilation at render level.
    let mut worst: f64 = 0.0;
    let mut sum = 0.0;
    let k = 20;
    for s in 0..k {
        let id = generate_identity(7000 + s);
        let code = |frac: f64| {
            let p = CaptureParams::open_eye(320, 240, id.iris_radius * frac);
            let (image, masks) = render_capture(&id, &p).unwrap();
            pack(&encode(&normalize(&image, &masks, 16, 200).unwrap(), &params).unwrap())
        };
        let hd = rotation_min_hd(&code(0.3), &code(0.6), &cfg).unwrap().hd;
        worst = worst.max(hd);
        sum += hd;
    }
    println!(
        "genuine PIR 0.3 vs 0.6: mean {:.4}, worst {:.4}",
        sum / k as f64,
        worst
    );

    // Sharpness range across blur levels.
    let id = generate_identity(42);
    for blur in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
        let p = CaptureParams {
            blur_sigma: blur,
            noise_sigma: 3.0,
            ..CaptureParams::open_eye(320, 240, id.iris_radius * 0.4)
        };
        let (image, _) = render_capture(&id, &p).unwrap();
        println!(
            "sharpness at blur {blur}: {:.1}",
            irisgate::metrics::sharpness(&image).unwrap()
        );
    }
}

#[test]
#[ignore]
fn print_cohort_trends() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        master_seed: 2024,
        ..ExperimentConfig::default()
    };
    let summary = run_pipeline(&config, dir.path()).unwrap();
    println!("pipeline took {:.1?}", start.elapsed());
    println!(
        "usable {} of 600; genuine {} impostor {}",
        summary.usable_captures, summary.genuine_pairs, summary.impostor_pairs
    );
    for (condition, count) in &summary.capture_counts {
        println!("  {condition}: failed {} {:?}", count.failed, count.failure_counts);
    }
    println!("threshold {:?}", summary.hd_threshold);
    for (condition, d) in &summary.d_prime_by_enrollment {
        println!("  d'({condition}) = {d:.3}");
    }
    for row in &summary.correlations {
        println!(
            "  r({}) genuine {:?} (n {}), impostor {:?}",
            row.feature, row.genuine_r, row.genuine_n, row.impostor_r
        );
    }
    for sweep in &summary.gate {
        let r0 = &sweep.rows[0];
        let r5 = sweep
            .rows
            .iter()
            .find(|r| (r.discard_rate - 0.05).abs() < 1e-9)
            .unwrap();
        let r7 = sweep.rows.last().unwrap();
        println!(
            "  {}: fnmr {:.4} -> {:.4} (5%) -> {:.4} (7%); fmr {:.5} -> {:.5} (5%)",
            sweep.model, r0.mean_fnmr, r5.mean_fnmr, r7.mean_fnmr, r0.mean_fmr, r5.mean_fmr
        );
    }
}
