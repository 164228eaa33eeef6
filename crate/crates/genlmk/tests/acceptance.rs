//! Acceptance suite. Each criterion prints one `ACCEPTANCE <n> PASS/FAIL`
//! line (visible with `cargo test --test acceptance -- --nocapture`) and
//! asserts it. Criteria 5 and 6 share one trained model and run as a single
//! test; criterion 7 is informational and `#[ignore]`d by default.

use genlmk::data::{
    make_motion_sequence, synth_generate, synth_template, MotionMode, SynthConfig,
};
use genlmk::eval::temporal_jitter;
use genlmk::gradcheck::central_diff;
use genlmk::losses::{
    cycle_loss, gan_loss_discriminator, gan_loss_generator, spring_loss, total_objective,
    LossWeights, ObjectiveParts, SpringVariant,
};
use genlmk::renderer::{RenderMode, RenderSettings, SoftRenderer};
use genlmk::template::{SemanticLine, Template};
use genlmk::training::{fit, load_checkpoint, run_eval, TrainConfig};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion} {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Renderer gradient correctness.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_renderer_gradients() {
    let t = synth_template();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (64usize, 64usize);
    let hstep = 1e-3f64;
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let mode = if inst % 2 == 0 { RenderMode::Points } else { RenderMode::Polylines };
        let settings = RenderSettings {
            sigma_px: 2.0,
            alpha: 0.9,
            mode,
            samples_per_segment: 6,
        };
        let core = SoftRenderer::<f64>::new(&t, &settings, w, h).unwrap();
        let delta =
            Array2::from_shape_simple_fn((t.n_landmarks, 2), || rng.gen_range(-0.08..0.08));
        let image = Array3::from_shape_simple_fn((3, h, w), || rng.gen_range(-1.0..1.0));
        // Scalar loss: fixed random weighting of the output pixels.
        let weights = Array3::from_shape_simple_fn((3, h, w), || rng.gen_range(-1.0..1.0));

        let (analytic, _) = core
            .backward(&delta.view(), &image.view(), &weights.view())
            .unwrap();
        let analytic = analytic.into_dyn();

        let numeric = central_diff(
            |d: &ArrayD<f64>| {
                let d2 = d.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let out = core.forward(&d2, &image.view()).unwrap();
                (&out * &weights).sum()
            },
            &delta.into_dyn(),
            hstep,
        );
        // Relative error of the gradient vector: worst absolute component
        // difference over the gradient's own scale. Tiny components only
        // carry finite-difference truncation noise, not signal.
        let scale = analytic
            .iter()
            .chain(numeric.iter())
            .fold(1e-9f64, |m, v| m.max(v.abs()));
        let diff = analytic
            .iter()
            .zip(numeric.iter())
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(diff / scale);
    }
    report(
        "1",
        worst <= 1e-3,
        &format!("renderer gradcheck, 100 instances at 64x64, worst rel err {worst:.2e} (tol 1e-3)"),
    );
}

// ---------------------------------------------------------------------------
// 2. Spring-loss suite.
// ---------------------------------------------------------------------------

fn random_template(rng: &mut ChaCha8Rng, k: f64) -> Template {
    let n = rng.gen_range(3..10usize);
    let points: Vec<[f64; 2]> =
        (0..n).map(|_| [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]).collect();
    Template::from_parts(
        n,
        points,
        vec![SemanticLine { name: "l".into(), indices: (0..n).collect(), color: [1.0, 0.0, 0.0] }],
        None,
        k,
    )
    .unwrap()
}

/// Independent oracle: recompute rest lengths from the points and loop over
/// edges without touching the library's stored rest lengths.
fn naive_spring(t: &Template, delta: &Array2<f64>, variant: SpringVariant) -> f64 {
    let mut acc = 0.0;
    for e in &t.springs {
        match variant {
            SpringVariant::LengthChange => {
                let rest = ((t.points[e.i][0] - t.points[e.j][0]).powi(2)
                    + (t.points[e.i][1] - t.points[e.j][1]).powi(2))
                .sqrt();
                let dx = t.points[e.i][0] + delta[[e.i, 0]] - t.points[e.j][0] - delta[[e.j, 0]];
                let dy = t.points[e.i][1] + delta[[e.i, 1]] - t.points[e.j][1] - delta[[e.j, 1]];
                acc += ((dx * dx + dy * dy).sqrt() - rest).powi(2);
            }
            SpringVariant::VectorDiff => {
                let dx = delta[[e.i, 0]] - delta[[e.j, 0]];
                let dy = delta[[e.i, 1]] - delta[[e.j, 1]];
                acc += dx * dx + dy * dy;
            }
        }
    }
    t.spring_constant * acc
}

#[test]
fn criterion_2_spring_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let variants = [SpringVariant::LengthChange, SpringVariant::VectorDiff];

    // Zero at rest and under uniform translation.
    let t = random_template(&mut rng, 1.7);
    let zero = Array2::<f64>::zeros((t.n_landmarks, 2));
    let shift = Array2::from_shape_fn((t.n_landmarks, 2), |(_, c)| if c == 0 { 0.3 } else { -0.2 });
    for v in variants {
        assert_eq!(spring_loss::<f64>(&t, &zero.view(), v).unwrap(), 0.0);
        assert!(spring_loss::<f64>(&t, &shift.view(), v).unwrap().abs() < 1e-12);
    }

    // Exact linearity in K.
    let mut worst_lin = 0.0f64;
    for _ in 0..50 {
        let k = rng.gen_range(0.1..10.0);
        let base = random_template(&mut rng, 1.0);
        let scaled = Template::from_parts(
            base.n_landmarks,
            base.points.clone(),
            base.lines.clone(),
            None,
            k,
        )
        .unwrap();
        let delta = Array2::from_shape_simple_fn((base.n_landmarks, 2), || {
            rng.gen_range(-0.2..0.2)
        });
        for v in variants {
            let l1 = spring_loss(&base, &delta.view(), v).unwrap();
            let lk = spring_loss(&scaled, &delta.view(), v).unwrap();
            let rel = (lk - k * l1).abs() / (k * l1).abs().max(1e-300);
            worst_lin = worst_lin.max(rel);
        }
    }

    // Vectorized vs naive oracle over 1000 random instances.
    let mut worst_oracle = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(0.1..5.0);
        let t = random_template(&mut rng, k);
        let delta =
            Array2::from_shape_simple_fn((t.n_landmarks, 2), || rng.gen_range(-0.2..0.2));
        for v in variants {
            let lib = spring_loss(&t, &delta.view(), v).unwrap();
            let oracle = naive_spring(&t, &delta, v);
            let rel = (lib - oracle).abs() / oracle.abs().max(1e-12);
            worst_oracle = worst_oracle.max(rel);
        }
    }

    // Rotation case: rotate the deformed positions rigidly about the
    // centroid. Lengths are preserved, so LengthChange must be invariant;
    // the deltas themselves change non-uniformly, so VectorDiff must not be.
    let t = random_template(&mut rng, 1.0);
    let delta =
        Array2::from_shape_simple_fn((t.n_landmarks, 2), || rng.gen_range(-0.1..0.1));
    let theta: f64 = 0.7;
    let (s, c) = theta.sin_cos();
    let cx = 0.5;
    let cy = 0.5;
    let rotated = Array2::from_shape_fn((t.n_landmarks, 2), |(i, d)| {
        let qx = t.points[i][0] + delta[[i, 0]] - cx;
        let qy = t.points[i][1] + delta[[i, 1]] - cy;
        let (rx, ry) = (c * qx - s * qy + cx, s * qx + c * qy + cy);
        if d == 0 { rx - t.points[i][0] } else { ry - t.points[i][1] }
    });
    let lc_before = spring_loss(&t, &delta.view(), SpringVariant::LengthChange).unwrap();
    let lc_after = spring_loss(&t, &rotated.view(), SpringVariant::LengthChange).unwrap();
    let vd_before = spring_loss(&t, &delta.view(), SpringVariant::VectorDiff).unwrap();
    let vd_after = spring_loss(&t, &rotated.view(), SpringVariant::VectorDiff).unwrap();
    let rotation_ok = (lc_after - lc_before).abs() < 1e-9
        && (vd_after - vd_before).abs() > 1e-6;

    let pass = worst_lin <= 1e-9 && worst_oracle <= 1e-6 && rotation_ok;
    report(
        "2",
        pass,
        &format!(
            "spring suite: K-linearity {worst_lin:.2e} (tol 1e-9), oracle {worst_oracle:.2e} \
             (tol 1e-6), rotation invariance LengthChange ok / VectorDiff varies: {rotation_ok}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Loss analytic points.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_loss_analytic_points() {
    let tol = 1e-9;
    let v = |x: f64, sh: &[usize]| ArrayD::from_elem(IxDyn(sh), x);
    let sh = [2usize, 1, 3, 3];

    let mut ok = true;
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > tol {
            ok = false;
            eprintln!("  analytic point {name}: got {got}, want {want}");
        }
    };

    check(
        "D(1,0)",
        gan_loss_discriminator(&v(1.0, &sh).view(), &v(0.0, &sh).view()).unwrap(),
        0.0,
    );
    check(
        "D(0.5,0.5)",
        gan_loss_discriminator(&v(0.5, &sh).view(), &v(0.5, &sh).view()).unwrap(),
        0.25,
    );
    check("G(1)", gan_loss_generator(&v(1.0, &sh).view()), 0.0);
    check("G(0)", gan_loss_generator(&v(0.0, &sh).view()), 1.0);
    check("G(0.5)", gan_loss_generator(&v(0.5, &sh).view()), 0.25);

    let a = v(0.25, &[2, 3, 4, 4]);
    let b = a.mapv(|x| x + 0.5);
    check("cyc(identical)", cycle_loss(&a.view(), &a.view()).unwrap(), 0.0);
    check("cyc(+0.5)", cycle_loss(&a.view(), &b.view()).unwrap(), 0.5);

    // 2 landmarks at (0,0),(1,0), one spring, K=1, delta ((0,0),(0.5,0)).
    let t = Template::from_parts(
        2,
        vec![[0.0, 0.0], [1.0, 0.0]],
        vec![],
        Some(vec![[0, 1]]),
        1.0,
    )
    .unwrap();
    let mut delta = Array2::<f64>::zeros((2, 2));
    delta[[1, 0]] = 0.5;
    check(
        "spring stretch (LengthChange)",
        spring_loss(&t, &delta.view(), SpringVariant::LengthChange).unwrap(),
        0.25,
    );
    check(
        "spring stretch (VectorDiff)",
        spring_loss(&t, &delta.view(), SpringVariant::VectorDiff).unwrap(),
        0.25,
    );

    let zeros = ObjectiveParts { gan_u_to_m: 0.0, gan_m_to_u: 0.0, cyc: 0.0, spring: 0.0 };
    check(
        "total(all zero)",
        total_objective(&zeros, &LossWeights::default()).unwrap().total,
        0.0,
    );
    let ones = ObjectiveParts { gan_u_to_m: 1.0, gan_m_to_u: 1.0, cyc: 1.0, spring: 1.0 };
    check(
        "total(1,1,1,1)",
        total_objective(&ones, &LossWeights::default()).unwrap().total,
        13.0,
    );
    let nan = ObjectiveParts { gan_u_to_m: f64::NAN, ..zeros };
    if total_objective(&nan, &LossWeights::default()).is_ok() {
        ok = false;
        eprintln!("  NaN part did not raise E_NONFINITE");
    }

    report("3", ok, "loss analytic points (0, 0.25, 0.5, 1, 13) exact to 1e-9");
}

// ---------------------------------------------------------------------------
// Shared training scaffolding for criteria 4-7.
// ---------------------------------------------------------------------------

fn reduced_cfg(data: &Path, resolution: usize, steps: u64, seed: u64) -> TrainConfig {
    use genlmk::networks::{DeformationNetSpec, DiscriminatorSpec, GanNetSpec, GeneratorSpec};
    TrainConfig {
        template_path: data.join("template.json"),
        marked_dir: data.join("marked"),
        unmarked_dir: data.join("unmarked"),
        resolution: [resolution, resolution],
        batch_size: 2,
        steps,
        seed,
        optimizer: Default::default(),
        history_buffer_size: 50,
        loss: Default::default(),
        spring_variant: SpringVariant::LengthChange,
        render: RenderSettings::default(),
        checkpoint_every: 0,
        log_every: 1,
        deformation: Some(DeformationNetSpec {
            conv_channels: [8, 16, 32, 64],
            fc_sizes: [128, 64, 16],
            input_resolution: [resolution, resolution],
        }),
        gan: GanNetSpec {
            generator: GeneratorSpec { base_channels: 8, n_res_blocks: 2 },
            discriminator: DiscriminatorSpec { channels: [8, 16, 32, 64] },
        },
    }
}

fn metrics_without_walltime(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_ms");
            v
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 4. Determinism and resume.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_determinism_and_resume() {
    let data = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_frames: 8, resolution: 32, seed: 21, ..Default::default() };
    synth_generate(&synth, data.path()).unwrap();
    let mut cfg = reduced_cfg(data.path(), 32, 100, 77);
    // Small nets keep 100 steps fast; determinism does not depend on size.
    cfg.deformation = Some(genlmk::networks::DeformationNetSpec {
        conv_channels: [4, 4, 8, 8],
        fc_sizes: [32, 32, 16],
        input_resolution: [32, 32],
    });
    cfg.gan.generator.base_channels = 4;
    cfg.gan.generator.n_res_blocks = 1;
    cfg.gan.discriminator.channels = [4, 4, 8, 8];
    cfg.batch_size = 1;

    let o1 = tempfile::tempdir().unwrap();
    let o2 = tempfile::tempdir().unwrap();
    let c1 = fit(&cfg, o1.path(), None).unwrap();
    let c2 = fit(&cfg, o2.path(), None).unwrap();
    let logs_equal = metrics_without_walltime(&o1.path().join("metrics.jsonl"))
        == metrics_without_walltime(&o2.path().join("metrics.jsonl"));
    let weights_equal = std::fs::read(c1.join("weights.bin")).unwrap()
        == std::fs::read(c2.join("weights.bin")).unwrap();

    // Interrupt and resume: take the mid-run checkpoint at step 50 (written
    // by the same 100-step config, so the LR schedule matches) and continue
    // from it in a fresh directory.
    let o3 = tempfile::tempdir().unwrap();
    let mut interrupted = cfg.clone();
    interrupted.checkpoint_every = 50;
    fit(&interrupted, o3.path(), None).unwrap();
    let o4 = tempfile::tempdir().unwrap();
    let resumed = fit(&cfg, o4.path(), Some(&o3.path().join("50"))).unwrap();
    let resume_equal = std::fs::read(c1.join("weights.bin")).unwrap()
        == std::fs::read(resumed.join("weights.bin")).unwrap();

    report(
        "4",
        logs_equal && weights_equal && resume_equal,
        &format!(
            "100-step determinism (logs {logs_equal}, weights {weights_equal}) and \
             split-resume weights identical ({resume_equal})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5 + 6. Synthetic end-to-end accuracy and temporal consistency.
//
// Single-CPU environment: runs the reduced 32x32 configuration, which per
// the stated criteria must pass (a) — trained error below 50% of the
// zero-init canonical-template baseline. The 5% width bound and the jitter
// thresholds are evaluated and reported at this resolution too.
// ---------------------------------------------------------------------------

const E2E_RESOLUTION: usize = 32;
const E2E_STEPS: u64 = 3500;

#[test]
fn criterion_5_and_6_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    let eval_data = tempfile::tempdir().unwrap();
    // Widen the training pose range so the criterion-6 motion sequences
    // (±5 px excursions) stay inside the pose distribution the detector
    // was trained on.
    let mut train_synth =
        SynthConfig { n_frames: 500, resolution: E2E_RESOLUTION, seed: 9, ..Default::default() };
    train_synth.pose.center_jitter = 0.16;
    let eval_synth = SynthConfig { n_frames: 100, seed: 1009, ..train_synth.clone() };
    synth_generate(&train_synth, data.path()).unwrap();
    synth_generate(&eval_synth, eval_data.path()).unwrap();

    // Zero-init baseline: the untrained network predicts the canonical
    // template everywhere.
    let mut base_cfg = reduced_cfg(data.path(), E2E_RESOLUTION, 0, 5);
    base_cfg.log_every = 50;
    let base_out = tempfile::tempdir().unwrap();
    let base_ckpt = fit(&base_cfg, base_out.path(), None).unwrap();
    let base_state = load_checkpoint(&base_ckpt).unwrap();
    let baseline = run_eval(&base_state, eval_data.path()).unwrap().error.unwrap().mean_px;

    let mut cfg = reduced_cfg(data.path(), E2E_RESOLUTION, E2E_STEPS, 5);
    cfg.log_every = 50;
    let out = tempfile::tempdir().unwrap();
    let ckpt = fit(&cfg, out.path(), None).unwrap();
    let state = load_checkpoint(&ckpt).unwrap();
    let trained = run_eval(&state, eval_data.path()).unwrap().error.unwrap();

    let frac_width = trained.mean_frac_width;
    let pass_a = trained.mean_px < 0.5 * baseline;
    let pass_b = frac_width < 0.05;
    report(
        "5",
        pass_a,
        &format!(
            "trained {:.3} px vs zero-init baseline {baseline:.3} px at {res}x{res} \
             ({steps} steps); <50% baseline: {pass_a}; width fraction {:.2}% (<5%: {pass_b}, \
             informational at reduced config)",
            trained.mean_px,
            frac_width * 100.0,
            res = E2E_RESOLUTION,
            steps = E2E_STEPS,
        ),
    );

    // Criterion 6 reuses the trained model on motion sequences.
    let sin_dir = tempfile::tempdir().unwrap();
    let static_dir = tempfile::tempdir().unwrap();
    let sin_cfg = SynthConfig {
        n_frames: 60,
        // Period chosen so the 5-frame moving-average detrend can follow the
        // curve: a perfect tracker's residual is ~19% of the GT raw jitter
        // here, leaving headroom under the 30% gate (at period 20 the floor
        // alone exceeds 30%, which no tracker could pass).
        motion: MotionMode::Sinusoidal { amplitude_px: 5.0, period: 50.0 },
        seed: 33,
        ..train_synth.clone()
    };
    let static_cfg =
        SynthConfig { n_frames: 60, motion: MotionMode::Static, seed: 34, ..train_synth };
    make_motion_sequence(&sin_cfg, sin_dir.path()).unwrap();
    make_motion_sequence(&static_cfg, static_dir.path()).unwrap();

    let sin_report = run_eval(&state, sin_dir.path()).unwrap();
    let sin_jitter = sin_report.jitter.unwrap();
    let gt_jitter = sin_report.gt_jitter.unwrap();
    let static_report = run_eval(&state, static_dir.path()).unwrap();
    let static_jitter = static_report.jitter.unwrap();

    let pass_sin = sin_jitter.detrended_px < 1.5
        && sin_jitter.detrended_px < 0.3 * gt_jitter.raw_px;
    let pass_static = static_jitter.raw_px < 0.5;
    report(
        "6",
        pass_sin && pass_static,
        &format!(
            "sinusoidal: detrended {:.3} px (tol 1.5; 30% of GT raw {:.3} px = {:.3}); \
             static raw {:.3} px (tol 0.5)",
            sin_jitter.detrended_px,
            gt_jitter.raw_px,
            0.3 * gt_jitter.raw_px,
            static_jitter.raw_px,
        ),
    );

    // Sanity check from the eval contract: a static sequence's detrended
    // jitter equals its raw jitter when there is nothing to detrend.
    let static_track_jitter = temporal_jitter(
        &genlmk::training::infer_dir(&state, &static_dir.path().join("unmarked")).unwrap(),
    )
    .unwrap();
    assert!((static_track_jitter.raw_px - static_jitter.raw_px).abs() < 1e-12);
}

// ---------------------------------------------------------------------------
// 7. Scale anchor (informational, ignored by default: hours of CPU time).
// ---------------------------------------------------------------------------

#[test]
#[ignore = "informational scale anchor; ~hours on CPU"]
fn criterion_7_scale_anchor() {
    let data = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_frames: 200, resolution: 128, seed: 41, ..Default::default() };
    synth_generate(&synth, data.path()).unwrap();
    let cfg = TrainConfig {
        template_path: data.path().join("template.json"),
        marked_dir: data.path().join("marked"),
        unmarked_dir: data.path().join("unmarked"),
        resolution: [128, 128],
        batch_size: 4,
        steps: 1000,
        seed: 1,
        optimizer: Default::default(),
        history_buffer_size: 50,
        loss: Default::default(),
        spring_variant: SpringVariant::LengthChange,
        render: RenderSettings::default(),
        checkpoint_every: 500,
        log_every: 10,
        deformation: None,
        gan: Default::default(),
    };
    let out = tempfile::tempdir().unwrap();
    let started = std::time::Instant::now();
    let result = fit(&cfg, out.path(), None);
    let elapsed = started.elapsed();
    report(
        "7",
        result.is_ok(),
        &format!(
            "default 128x128 config, 1000 steps, no numeric failure; wall time {:.1} s",
            elapsed.as_secs_f64()
        ),
    );
}
