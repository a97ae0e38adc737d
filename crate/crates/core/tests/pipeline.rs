use proptest::prelude::*;
use tomoforge::dose::{counts_to_sinogram, simulate_counts, Background, RngSeed};
use tomoforge::fbp::{fbp_reconstruct, FilterSpec};
use tomoforge::io::{read_image, write_image};
use tomoforge::metrics::{psnr, ssim, SsimConfig};
use tomoforge::nn::NetworkSpec;
use tomoforge::recon::{reconstruct, CheckpointMode, ReconConfig};
use tomoforge::tv::{tv_reconstruct_with_history, TvConfig};
use tomoforge::{phantom, projector, FanBeamGeometry, Image, Sinogram};

fn noisy(n: usize, angles: usize, intensity: f64, seed: u64) -> (FanBeamGeometry, Image, Sinogram) {
    let geom = FanBeamGeometry::desk(n, angles).unwrap();
    let truth = phantom::shepp_logan(n).unwrap();
    let counts = simulate_counts(&truth, &geom, intensity, &Background::default(), RngSeed(seed)).unwrap();
    (geom, truth, counts_to_sinogram(&counts).unwrap())
}

#[test]
fn fbp_degrades_with_dose() {
    let geom = FanBeamGeometry::desk(128, 360).unwrap();
    let truth = phantom::shepp_logan(128).unwrap();
    let spec = FilterSpec::default();
    let clean = fbp_reconstruct(&projector::project(&truth, &geom).unwrap(), &geom, &spec).unwrap();
    let clean = psnr(&clean, &truth).unwrap();
    let mean_psnr = |intensity: f64| {
        let scores: Vec<f64> = (0..4)
            .map(|seed| {
                let (_, _, y) = noisy(128, 360, intensity, seed);
                psnr(&fbp_reconstruct(&y, &geom, &spec).unwrap(), &truth).unwrap()
            })
            .collect();
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let (mid, low) = (mean_psnr(1e3), mean_psnr(1e2));
    assert!(mid <= clean, "{mid} > {clean}");
    assert!(low < mid, "{low} >= {mid}");
}

#[test]
fn tv_decreases_its_objective_and_beats_fbp_at_low_dose() {
    let (geom, truth, y) = noisy(32, 64, 1e3, 11);
    let x0 = fbp_reconstruct(&y, &geom, &FilterSpec::default()).unwrap();
    let cfg = TvConfig { lambda: 0.1, iterations: 200, step_ratio: 1.0 };
    let res = tv_reconstruct_with_history(&y, &geom, &cfg, &x0).unwrap();
    assert!(res.objective.last().unwrap() < &res.objective[0]);
    assert!(psnr(&res.image, &truth).unwrap() > psnr(&x0, &truth).unwrap());
}

#[test]
fn proposed_reconstruction_is_deterministic_and_reduces_loss() {
    let (geom, truth, y) = noisy(32, 64, 1e4, 5);
    let cfg = ReconConfig {
        iterations: 40,
        checkpoint_mode: CheckpointMode::BestPsnr,
        network: NetworkSpec { depth: 4, width: 8, ..NetworkSpec::default() },
        ..ReconConfig::default()
    };
    let spec = FilterSpec::default();
    let a = reconstruct(&y, &geom, &spec, &cfg, Some(&truth)).unwrap();
    let b = reconstruct(&y, &geom, &spec, &cfg, Some(&truth)).unwrap();
    assert_eq!(a.final_image, b.final_image);
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.loss_curve.len(), 40);
    assert!(a.loss_curve.last().unwrap() < &a.loss_curve[0]);

    let best = a.best_iteration.unwrap();
    let curve = a.psnr_curve.as_ref().unwrap();
    assert_eq!(psnr(&a.final_image, &truth).unwrap(), curve[best]);
    assert!(curve.iter().all(|&p| p <= curve[best]));
    assert!(ssim(&a.final_image, &truth, &SsimConfig::default()).unwrap() <= 1.0);
}

#[test]
fn images_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = phantom::shepp_logan(32).unwrap();
    let raw = dir.path().join("x.f32");
    write_image(&img, &raw).unwrap();
    let back = read_image(&raw).unwrap();
    assert_eq!(back.dims(), [32, 32]);
    for (a, b) in back.data().iter().zip(img.data()) {
        assert!((a - b).abs() <= 1e-7);
    }
    let pgm = dir.path().join("x.pgm");
    write_image(&img, &pgm).unwrap();
    let back = read_image(&pgm).unwrap();
    for (a, b) in back.data().iter().zip(img.data()) {
        assert!((a - b).abs() <= 1.0 / 65535.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fbp_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let geom = FanBeamGeometry::desk(16, 24).unwrap();
        let [na, nb] = [geom.num_angles, geom.num_bins];
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let u = Sinogram::from_vec(na, nb, (0..na * nb).map(|_| next()).collect()).unwrap();
        let v = Sinogram::from_vec(na, nb, (0..na * nb).map(|_| next()).collect()).unwrap();
        let w = Sinogram::from_vec(
            na,
            nb,
            u.data().iter().zip(v.data()).map(|(a, b)| alpha * a + b).collect(),
        )
        .unwrap();
        let spec = FilterSpec::default();
        let (fu, fv, fw) = (
            fbp_reconstruct(&u, &geom, &spec).unwrap(),
            fbp_reconstruct(&v, &geom, &spec).unwrap(),
            fbp_reconstruct(&w, &geom, &spec).unwrap(),
        );
        let err: f64 = fw
            .data()
            .iter()
            .zip(fu.data().iter().zip(fv.data()))
            .map(|(w, (u, v))| (w - alpha * u - v).powi(2))
            .sum::<f64>()
            .sqrt();
        prop_assert!(err <= 1e-10 * fw.norm().max(1e-12));
    }

    #[test]
    fn projections_are_nonnegative_for_nonnegative_images(values in prop::collection::vec(0.0f64..1.0, 64)) {
        let geom = FanBeamGeometry::desk(8, 12).unwrap();
        let img = Image::from_vec(8, 8, values).unwrap();
        let sino = projector::project(&img, &geom).unwrap();
        prop_assert!(sino.data().iter().all(|&v| v >= 0.0));
    }
}
