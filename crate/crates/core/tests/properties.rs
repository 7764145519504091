use latent_ransac::bench::{run_bench, BenchConfig};
use latent_ransac::embedding::{embed_homography, embed_rigid, linf, recover_homography, recover_rigid, so3_log};
use latent_ransac::geometry::{residual, Point2, Point3};
use latent_ransac::synth::{random_homography, random_rigid};
use latent_ransac::{
    estimate, synth, EmbeddingConfig, EstimatorConfig, InstanceSpec, LatentVector, Match2D, Match3D, Mode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturb<R: Rng>(rng: &mut R, v: &LatentVector, delta: f64) -> LatentVector {
    let values: Vec<f64> = v.as_slice().iter().map(|x| x + rng.random_range(-delta..=delta)).collect();
    LatentVector::new(v.kind(), &values).unwrap()
}

#[test]
fn homography_residual_change_is_bounded_by_corner_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = EmbeddingConfig::default();
    let spec = InstanceSpec::homography(10, 1.0, 0.0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let h1 = random_homography(&mut rng, &spec);
        let v1 = embed_homography(&h1, &cfg).unwrap();
        let v2 = perturb(&mut rng, &v1, 2.0);
        let Ok(h2) = recover_homography(&v2, &cfg) else { continue };
        let delta = linf(v1.as_slice(), v2.as_slice());
        for _ in 0..50 {
            let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let q = Point2::new(rng.random_range(-100.0..740.0), rng.random_range(-100.0..580.0));
            let m = Match2D::new(p, q);
            let diff = (residual(&h1, &m).unwrap() - residual(&h2, &m).unwrap()).abs();
            worst = worst.max(diff / delta);
        }
    }
    eprintln!("homography coupling constant C = {worst:.3}");
    assert!(worst.is_finite() && worst > 0.0);
}

#[test]
fn rigid_residual_change_is_bounded_by_latent_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let rho = 50.0;
    let cfg = EmbeddingConfig { rho, ..EmbeddingConfig::default() };
    let spec = InstanceSpec::rigid(10, 1.0, 0.0, 0);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 300 {
        let f1 = random_rigid(&mut rng, &spec);
        if so3_log(f1.rotation()).norm() > 2.5 {
            continue;
        }
        pairs += 1;
        let v1 = embed_rigid(&f1, &cfg);
        let v2 = perturb(&mut rng, &v1, 0.05);
        let f2 = recover_rigid(&v2, &cfg).unwrap();
        let d = linf(v1.as_slice(), v2.as_slice());
        for _ in 0..50 {
            let p = loop {
                let p = Point3::new(
                    rng.random_range(-rho..rho),
                    rng.random_range(-rho..rho),
                    rng.random_range(-rho..rho),
                );
                if p.coords.norm() <= rho {
                    break p;
                }
            };
            let q = f1.apply(&p) + nalgebra::Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let m = Match3D::new(p, q);
            let diff = (residual(&f1, &m).unwrap() - residual(&f2, &m).unwrap()).abs();
            worst = worst.max(diff / d);
        }
    }
    eprintln!("rigid coupling constant K = {worst:.3} (rho = {rho})");
    assert!(worst.is_finite() && worst <= 4.0 * rho, "K = {worst}");
}

fn success_rate(spec: InstanceSpec, mode: Mode, tolerance: f64) -> f64 {
    let trials = 200;
    let report = run_bench(&BenchConfig {
        spec,
        trials,
        modes: vec![mode],
        estimator: EstimatorConfig {
            tolerance,
            table_bits: Some(14),
            max_iterations: 200_000,
            ..EstimatorConfig::default()
        },
        jobs: 1,
        calibrate_quantile: None,
    })
    .unwrap();
    report.rows.iter().filter(|r| r.success).count() as f64 / trials as f64
}

fn success_floor(p0: f64, trials: f64) -> f64 {
    p0 - 3.0 * (p0 * (1.0 - p0) / trials).sqrt()
}

#[test]
fn stopping_rules_meet_their_confidence() {
    let floor = success_floor(0.99, 200.0);
    let cases = [
        (InstanceSpec::homography(200, 0.3, 0.0, 31), 1.0),
        (InstanceSpec::rigid(200, 0.3, 0.0, 32), 0.01),
    ];
    for (spec, t) in cases {
        for mode in [Mode::Vanilla, Mode::Latent] {
            let rate = success_rate(spec, mode, t);
            eprintln!("{} {mode}: success {rate:.3} (floor {floor:.4})", spec.problem);
            assert!(rate >= floor, "{} {mode}: {rate}", spec.problem);
        }
    }
}

#[test]
fn estimation_is_deterministic_per_seed() {
    for spec in [InstanceSpec::homography(300, 0.3, 1.0, 5), InstanceSpec::rigid(300, 0.3, 0.5, 5)] {
        let inst = synth(&spec).unwrap();
        for mode in [Mode::Vanilla, Mode::Latent] {
            let cfg = EstimatorConfig {
                mode,
                seed: 77,
                tolerance: 50.0,
                threshold: 3.0,
                table_bits: Some(14),
                ..EstimatorConfig::default()
            };
            let mut a = estimate(&inst.matches, &cfg).unwrap();
            let mut b = estimate(&inst.matches, &cfg).unwrap();
            a.timing_ms = Default::default();
            b.timing_ms = Default::default();
            assert_eq!(a, b);
            assert_eq!(a.inlier_mask, b.inlier_mask);
        }
    }
}

#[test]
fn modes_agree_on_high_inlier_rate() {
    for (spec, t) in [
        (InstanceSpec::homography(400, 0.3, 0.0, 9), 1.0),
        (InstanceSpec::homography(400, 0.6, 0.0, 10), 1.0),
        (InstanceSpec::rigid(400, 0.3, 0.0, 9), 0.01),
    ] {
        let inst = synth(&spec).unwrap();
        let count = |mode| {
            let cfg = EstimatorConfig {
                mode,
                seed: 3,
                tolerance: t,
                threshold: 3.0,
                table_bits: Some(14),
                ..EstimatorConfig::default()
            };
            estimate(&inst.matches, &cfg).unwrap().best_inlier_count as i64
        };
        let (v, l) = (count(Mode::Vanilla), count(Mode::Latent));
        assert!((v - l).abs() <= 1, "{}: {v} vs {l}", spec.problem);
        assert_eq!(v as usize, spec.inlier_count());
    }
}
