//! Acceptance criteria. Run with `cargo test --test acceptance -- --nocapture`
//! to see one PASS/FAIL line per criterion.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use specprint::evaluation::{
    accuracy, bootstrap_ci, confusion_matrix, cross_config_eval, enumerate_configs, evaluate, weighted_f1,
    CrossConfigReport, EvalOptions, EvalReport,
};
use specprint::imaging::{normalize_spectrogram, AugmentConfig, PercentileBounds, CHANNELS};
use specprint::matrix::Matrix;
use specprint::pipeline::{build_datasets, extract_features, FeatureConfig, Prepared};
use specprint::segment::{mean_center, segment_trace, stride_for, Segment, SegmentationParams};
use specprint::seed::rng;
use specprint::spectral::{cwt, stft, CwtParams, Method, Spectrogram, StftParams};
use specprint::synth::{demo_profiles, generate_traces};
use specprint::trace::PacketTrace;
use specprint::training::{train, SplitKind, SplitSpec, TrainConfig, TrainHistory};
use specprint::vit::{backward, forward_logits, loss_from_logits, VitConfig, VitModel};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn centered_segment(values: Vec<f64>) -> Segment<f64> {
    mean_center(&Segment {
        device_id: 0,
        segment_index: 0,
        start: 0,
        values,
        centered: false,
        segment_mean: 0.0,
    })
    .unwrap()
}

fn random_packets(r: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(43..=1500) as f64).collect()
}

/// Entrywise error relative to the reference magnitude, floored at 1 so
/// near-zero reference bins compare absolutely.
fn rel_err(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn ac1_stft_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for res in [16usize, 32, 64] {
        let params = StftParams::new(res, 0.5).unwrap();
        for _ in 0..100 {
            let seg = centered_segment(random_packets(&mut r, 100));
            let got = stft(&seg, &params).map_err(|e| e.to_string())?;
            let x = &seg.values;
            let hop = res / 2;
            let frames = (x.len() - res) / hop + 1;
            check(got.rows == frames && got.cols == res / 2 + 1, format!("R={res}: shape {}x{}", got.rows, got.cols))?;
            for m in 0..frames {
                for k in 0..=res / 2 {
                    let mut want = Complex64::new(0.0, 0.0);
                    for n in 0..res {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / (res - 1) as f64).cos();
                        let phase = -2.0 * PI * (k * n) as f64 / res as f64;
                        want += Complex64::new(phase.cos(), phase.sin()) * (w * x[m * hop + n]);
                    }
                    worst = worst.max(rel_err(got.get(m, k), want));
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst <= 1e-9, format!("max relative error {worst:.2e} > 1e-9"))?;
    check(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!("max rel err {worst:.2e} over 300 segments, {secs:.2} s"))
}

fn ac2_cwt_oracle() -> Outcome {
    let t0 = Instant::now();
    let res = 16usize;
    let fc = 0.8125;
    let params = CwtParams::new(res).unwrap();
    let (f_min, f_max) = (1.0 / (2.0 * res as f64), 0.5);
    let scales: Vec<f64> = (0..res)
        .map(|i| fc / (f_min * (f_max / f_min).powf(i as f64 / (res - 1) as f64)))
        .collect();
    let psi_conj = |t: f64| {
        let a = PI.powf(-0.25) * (-t * t / 2.0).exp();
        Complex64::new(a * (2.0 * PI * fc * t).cos(), -a * (2.0 * PI * fc * t).sin())
    };
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let len = r.random_range(16..=200);
        let seg = centered_segment(random_packets(&mut r, len));
        let got = cwt(&seg, &params).map_err(|e| e.to_string())?;
        check(got.rows == res && got.cols == len, "shape")?;
        // Row 0 holds the largest scale.
        let mut desc = scales.clone();
        desc.sort_by(|a, b| b.total_cmp(a));
        for (j, &s) in desc.iter().enumerate() {
            for n in 0..len {
                let mut want = Complex64::new(0.0, 0.0);
                for (np, &x) in seg.values.iter().enumerate() {
                    want += psi_conj((np as f64 - n as f64) / s) * (x / s.sqrt());
                }
                worst = worst.max(rel_err(got.get(j, n), want));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst <= 1e-9, format!("max relative error {worst:.2e} > 1e-9"))?;
    check(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("max rel err {worst:.2e} over 50 segments, {secs:.2} s"))
}

fn ac3_scale_law() -> Outcome {
    let mut n = 0;
    for res in 2..=256usize {
        let p = CwtParams::new(res).unwrap();
        for (i, (&s, &f)) in p.scales.iter().zip(&p.freqs).enumerate() {
            check(s * f == 0.8125, format!("R={res} i={i}: {s} * {f} = {}", s * f))?;
            n += 1;
        }
    }
    for res in [16usize, 32, 64] {
        let f = StftParams::new(res, 0.5).unwrap().freq_axis::<f64>();
        check(f.len() == res / 2 + 1 && f[0] == 0.0, format!("R={res}: axis start"))?;
        for k in 1..f.len() {
            check(f[k] - f[k - 1] == 1.0 / res as f64, format!("R={res}: spacing at bin {k}"))?;
        }
    }
    Ok(format!("{n} scale/frequency products exact; STFT spacing exactly 1/R"))
}

fn ac4_gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-5;
    let t0 = Instant::now();
    let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
    let model = VitModel::<f64>::init_with_std(cfg, 404, 0.3).unwrap();
    let mut r = rng(405);
    let imgs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..cfg.input_len()).map(|_| r.random_range(-1.5..1.5)).collect())
        .collect();
    let batch: Vec<(&[f64], usize)> = imgs.iter().map(Vec::as_slice).zip(0..4).collect();
    let loss = |m: &VitModel<f64>| {
        batch
            .iter()
            .map(|&(x, y)| loss_from_logits(&forward_logits(x, m).unwrap(), y, 0.1).unwrap())
            .sum::<f64>()
            / batch.len() as f64
    };
    let g = backward(&model, &batch, 0.1).map_err(|e| e.to_string())?;
    let grads = g.grads.tensors();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (ti, (name, t)) in model.tensors().iter().enumerate() {
        let mut idx: Vec<usize> = (0..t.len()).collect();
        for i in 0..idx.len().min(200) {
            let j = r.random_range(i..idx.len());
            idx.swap(i, j);
        }
        for &k in idx.iter().take(200) {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].1.data[k] += STEP;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].1.data[k] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let analytic = grads[ti].1.data[k];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{k}]"));
            }
            checked += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst.0 <= 1e-5, format!("relative error {:.2e} at {}", worst.0, worst.1))?;
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("{checked} coordinates, max rel err {:.2e} ({}), {secs:.1} s", worst.0, worst.1))
}

fn small_features() -> (specprint::pipeline::Features<f64>, FeatureConfig, SplitSpec) {
    let cfg = FeatureConfig {
        image_size: 32,
        max_segments: 40,
        ..FeatureConfig::default()
    };
    let traces = generate_traces(&demo_profiles(55), 2100).unwrap();
    let features = extract_features::<f64>(&traces, &cfg).unwrap();
    let split = SplitSpec {
        seed: 56,
        ..SplitSpec::default()
    };
    (features, cfg, split)
}

fn ac5_leakage() -> Outcome {
    let (features, cfg, split) = small_features();
    let base = build_datasets(&features, &split, &cfg).map_err(|e| e.to_string())?;

    // Scramble every val/test spectrogram.
    let mut r = rng(57);
    let mut mutated = features.clone();
    let mut touched = 0;
    for (d, s) in base.split.devices.iter().enumerate() {
        for &i in s.val.iter().chain(&s.test) {
            for v in &mut mutated.spectrograms[d][i].power_db.data {
                *v = r.random_range(-300.0..300.0);
            }
            touched += 1;
        }
    }
    let again = build_datasets(&mutated, &split, &cfg).map_err(|e| e.to_string())?;
    check(again.stats == base.stats, "statistics changed when only val/test data changed")?;
    check(again.split == base.split, "split changed")?;

    // Control: touching one training spectrogram does move them.
    let mut control = features.clone();
    let first = base.split.devices[0].train[0];
    control.spectrograms[0][first].power_db.data.iter_mut().for_each(|v| *v += 500.0);
    let moved = build_datasets(&control, &split, &cfg).map_err(|e| e.to_string())?;
    check(moved.stats != base.stats, "training data does not reach the statistics")?;

    // Clipping lands exactly on 0 and 1.
    let spec = Spectrogram {
        method: Method::Stft,
        power_db: Matrix::from_vec(2, 3, vec![-50.0, 0.0, 5.0, 10.0, 20.0, 999.0]).unwrap(),
        time_axis: vec![0.0, 1.0],
        freq_axis: vec![0.0, 0.1, 0.2],
        device_id: 0,
        segment_index: 0,
    };
    let bounds = PercentileBounds {
        device_id: Some(0),
        v_min: 0.0,
        v_max: 10.0,
        fitted_on: 1,
    };
    let n = normalize_spectrogram(&spec, &bounds).map_err(|e| e.to_string())?;
    let mut vals = n.data.clone();
    vals.sort_by(f64::total_cmp);
    check(vals == vec![0.0, 0.0, 0.5, 1.0, 1.0, 1.0], format!("normalized {vals:?}"))?;

    // Standardized training channels are zero mean, unit variance.
    let ex = base.datasets.examples(SplitKind::Train);
    let mut worst = 0.0f64;
    for c in 0..CHANNELS {
        let xs: Vec<f64> = ex.iter().flat_map(|e| e.input.iter().skip(c).step_by(CHANNELS).copied()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        worst = worst.max(mean.abs()).max((std - 1.0).abs());
    }
    check(worst <= 1e-6, format!("channel moments off by {worst:.2e}"))?;
    Ok(format!("{touched} val/test spectrograms scrambled, stats unchanged; moments within {worst:.1e}"))
}

fn ac6_count_law() -> Outcome {
    check(stride_for(100, 0.5).ok() == Some(50), "stride(100, 0.5) != 50")?;
    let p = SegmentationParams::new(100, 0.0).unwrap();
    check(p.segment_count(40000) == 400, "40000 packets at L=100, p=0")?;
    let mut r = rng(606);
    for case in 0..1000 {
        let seg_len = r.random_range(1..=600usize);
        let overlap = if case % 2 == 0 {
            [0.0, 0.25, 0.5, 0.75][r.random_range(0..4)]
        } else {
            r.random_range(0.0..0.95)
        };
        let n = r.random_range(seg_len..=seg_len * 12 + 50);
        let params = SegmentationParams::new(seg_len, overlap).map_err(|e| e.to_string())?;
        let s = params.stride();
        check(s >= 1 && s == ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1), format!("stride {s}"))?;
        let mut windows = 0;
        let mut start = 0;
        while start + seg_len <= n {
            windows += 1;
            start += s;
        }
        check(windows == (n - seg_len) / s + 1, format!("case {case}: formula"))?;
        check(params.segment_count(n) == windows, format!("case {case}: L={seg_len} p={overlap} N={n}"))?;
        if case < 200 {
            let trace = PacketTrace::new(0, "t", (0..n as u32).map(|i| 43 + i % 1400).collect()).unwrap();
            let segs = segment_trace::<f64>(&trace, &params).map_err(|e| e.to_string())?;
            check(segs.len() == windows, format!("case {case}: segment_trace gave {}", segs.len()))?;
            for (i, sg) in segs.iter().enumerate() {
                check(sg.start == i * s && sg.values.len() == seg_len, format!("case {case}: window {i}"))?;
            }
        }
    }
    Ok("1000 cases agree with floor((N-L)/s)+1; stride(100, 0.5) = 50".into())
}

const E2E_SEED: u64 = 0;

struct E2e {
    traces: Vec<PacketTrace>,
    cfg: FeatureConfig,
    prepared: Prepared<f32>,
    model: VitModel<f32>,
    history: TrainHistory,
    report: EvalReport,
    elapsed: Duration,
}

impl E2e {
    fn history_csv(&self) -> Vec<u8> {
        let mut b = Vec::new();
        self.history.write_csv(&mut b).unwrap();
        b
    }

    fn report_csv(&self) -> Vec<u8> {
        let mut b = Vec::new();
        self.report.write_summary_csv(&mut b).unwrap();
        self.report.write_per_class_csv(&mut b).unwrap();
        self.report.write_confusion_csv(&mut b).unwrap();
        b
    }
}

/// The scaled four-device reproduction, on a single worker thread.
fn e2e_run() -> E2e {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let t0 = Instant::now();
        let traces = generate_traces(&demo_profiles(E2E_SEED), 10050 + 6000).unwrap();
        let cfg = FeatureConfig {
            image_size: 64,
            max_segments: 200,
            ood_packets: 6000,
            ..FeatureConfig::default()
        };
        let split = SplitSpec {
            seed: 1,
            ..SplitSpec::default()
        };
        let features = extract_features::<f32>(&traces, &cfg).unwrap();
        let prepared = build_datasets(&features, &split, &cfg).unwrap();
        let model = VitModel::<f32>::init(VitConfig::tiny(64, 32, 2, 2, 4), 2).unwrap();
        let tc = TrainConfig {
            seed: 3,
            peak_lr: 2e-3,
            augmentation: AugmentConfig {
                vflip_prob: 0.0,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, history) = train(model, &prepared.datasets, &tc).unwrap();
        let opts = EvalOptions {
            seed: 4,
            ..EvalOptions::default()
        };
        let report = evaluate(&model, &prepared.datasets.examples(SplitKind::Test), &opts).unwrap();
        E2e {
            traces,
            cfg,
            prepared,
            model,
            history,
            report,
            elapsed: t0.elapsed(),
        }
    })
}

fn ac7_end_to_end(run: &E2e) -> Outcome {
    let r = &run.report;
    let secs = run.elapsed.as_secs_f64();
    let summary = format!(
        "test acc {:.2}% (n={}), CI [{:.2}, {:.2}] width {:.2}, F1 {:.4}, best epoch {} of {}, {secs:.0} s",
        r.accuracy_pct,
        r.n_test,
        r.ci.low,
        r.ci.high,
        r.ci.width,
        r.weighted_f1,
        run.history.best_epoch,
        run.history.epochs.len()
    );
    check(r.accuracy_pct >= 90.0, format!("accuracy below 90%: {summary}"))?;
    check(r.ci.width < 10.0, format!("CI too wide: {summary}"))?;
    check(secs < 600.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

fn ac8_cross_config(run: &E2e) -> Outcome {
    let report: CrossConfigReport = cross_config_eval(
        &run.model,
        &run.prepared.stats,
        &run.cfg,
        &run.traces,
        &run.prepared.regions,
        &[100, 200, 500],
        &[0.0, 0.25, 0.5, 0.75],
        0,
    )
    .map_err(|e| e.to_string())?;
    check(report.cells.len() == 12 && report.cells.iter().all(|c| c.n > 0), "incomplete grid")?;
    let matched = report.matched().ok_or("no matched cell")?.accuracy_pct;
    let cells: Vec<String> = report
        .cells
        .iter()
        .map(|c| format!("{}={:.1}", c.label(), c.accuracy_pct))
        .collect();
    for p in [0.0, 0.25, 0.75] {
        let c = report.cell(100, p).ok_or("missing L=100 cell")?;
        check(
            (c.accuracy_pct - matched).abs() <= 5.0,
            format!("{} is {:.2} vs matched {matched:.2}; {}", c.label(), c.accuracy_pct, cells.join(" ")),
        )?;
    }
    Ok(format!("matched {matched:.1}; {}", cells.join(" ")))
}

fn ac9_evaluation_algebra() -> Outcome {
    let mut r = rng(909);
    for case in 0..500 {
        let k = r.random_range(2..=14usize);
        let n = r.random_range(1..=300usize);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&y| if r.random_bool(0.7) { y } else { r.random_range(0..k) })
            .collect();
        let cm = confusion_matrix(&preds, &labels, k).map_err(|e| e.to_string())?;
        let total: usize = cm.iter().flatten().sum();
        let diag: usize = (0..k).map(|i| cm[i][i]).sum();
        let acc = accuracy(&preds, &labels).map_err(|e| e.to_string())?;
        check(total == n, format!("case {case}: total {total}"))?;
        check((100.0 * diag as f64 / total as f64 - acc).abs() < 1e-12, format!("case {case}: trace/total"))?;
    }
    let labels: Vec<usize> = (0..200).map(|i| i % 7).collect();
    let ci = bootstrap_ci(&labels, &labels, 1000, 0.95, 3).map_err(|e| e.to_string())?;
    let f1 = weighted_f1(&labels, &labels).map_err(|e| e.to_string())?;
    check(ci.width == 0.0 && ci.low == 100.0, format!("all-correct CI {ci:?}"))?;
    check(f1 == 1.0, format!("all-correct F1 {f1}"))?;
    let configs = enumerate_configs();
    let distinct: HashSet<String> = configs.iter().map(|c| c.to_string()).collect();
    check(configs.len() == 24 && distinct.len() == 24, format!("{} configs, {} distinct", configs.len(), distinct.len()))?;
    Ok("trace/total = accuracy over 500 cases; perfect stream CI width 0, F1 1; 24 configs".into())
}

fn ac10_determinism(first: &E2e) -> Outcome {
    let second = e2e_run();
    check(first.history_csv() == second.history_csv(), "history.csv differs between runs")?;
    check(first.report_csv() == second.report_csv(), "evaluation report differs between runs")?;
    Ok(format!(
        "history ({} bytes) and report ({} bytes) identical",
        first.history_csv().len(),
        first.report_csv().len()
    ))
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .map_or("panicked".into(), |m| format!("panicked: {m}")))
    });
    let secs = t0.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => println!("{id} PASS {name}: {detail} [{secs:.1}s]"),
        Err(why) => println!("{id} FAIL {name}: {why} [{secs:.1}s]"),
    }
    outcome.is_ok()
}

#[test]
fn acceptance() {
    println!();
    let mut passed = vec![
        run("AC1", "STFT matches the naive DFT", ac1_stft_oracle),
        run("AC2", "CWT matches dense convolution", ac2_cwt_oracle),
        run("AC3", "scale law and bin spacing", ac3_scale_law),
        run("AC4", "ViT gradient check", ac4_gradient_check),
        run("AC5", "normalization and leakage", ac5_leakage),
        run("AC6", "segmentation count law", ac6_count_law),
    ];
    let e2e = catch_unwind(e2e_run).ok();
    let missing = || Err::<String, _>("end-to-end run panicked".to_string());
    passed.push(run("AC7", "synthetic end-to-end reproduction", || {
        e2e.as_ref().map_or_else(missing, ac7_end_to_end)
    }));
    passed.push(run("AC8", "cross-configuration direction", || {
        e2e.as_ref().map_or_else(missing, ac8_cross_config)
    }));
    passed.push(run("AC9", "evaluation algebra", ac9_evaluation_algebra));
    passed.push(run("AC10", "determinism", || e2e.as_ref().map_or_else(missing, ac10_determinism)));
    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
