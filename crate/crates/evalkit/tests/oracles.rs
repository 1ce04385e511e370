//! Monte Carlo oracles and geometry invariants for the metric suite.

use evalkit::{assemble_report, frechet_distance, nway_topk, ClipPair, ReportInputs};
use numcore::rng::RngStream;
use numcore::Tensor;

#[test]
fn two_way_chance_level() {
    // independent queries and gallery: 2-way accuracy 0.50 ± 0.02
    let mut rng = RngStream::new(101, 0);
    let n = 100;
    let q = Tensor::from_fn(&[n, 16], |_| rng.normal_f64() as f32);
    let g = Tensor::from_fn(&[n, 16], |_| rng.normal_f64() as f32);
    let acc = nway_topk(&q, &g, 2, 1, 100, &mut RngStream::new(7, 0)).unwrap();
    assert!((acc - 0.5).abs() <= 0.02, "2-way chance {acc}");
}

#[test]
fn fifty_way_chance_level() {
    // 50-way top-1 chance is 1/50 = 0.02 ± 0.01
    let mut rng = RngStream::new(103, 0);
    let n = 120;
    let q = Tensor::from_fn(&[n, 16], |_| rng.normal_f64() as f32);
    let g = Tensor::from_fn(&[n, 16], |_| rng.normal_f64() as f32);
    let acc = nway_topk(&q, &g, 50, 1, 100, &mut RngStream::new(9, 0)).unwrap();
    assert!((acc - 0.02).abs() <= 0.01, "50-way chance {acc}");
}

#[test]
fn nway_rejects_oversized_n() {
    let q = Tensor::zeros(&[10, 4]);
    assert!(nway_topk(&q, &q, 11, 1, 10, &mut RngStream::new(1, 0)).is_err());
}

#[test]
fn frechet_between_shifted_isotropic_gaussians() {
    // equal covariance: distance reduces to ‖Δμ‖² = δ²
    let d = 8;
    let n = 10_000;
    let delta = 1.7f64;
    let shift = delta / (d as f64).sqrt();
    let mut rng = RngStream::new(107, 0);
    let a = Tensor::from_fn(&[n, d], |_| rng.normal_f64() as f32);
    let b = Tensor::from_fn(&[n, d], |_| (rng.normal_f64() + shift) as f32);
    let fd = frechet_distance(&a, &b).unwrap();
    let expect = delta * delta;
    assert!(
        (fd - expect).abs() / expect < 0.05,
        "Fréchet {fd:.4} vs δ² {expect:.4}"
    );
}

#[test]
fn retrieval_invariant_to_joint_orthogonal_transform() {
    let d = 12;
    let n = 40;
    let mut rng = RngStream::new(109, 0);
    let q = Tensor::from_fn(&[n, d], |_| rng.normal_f64() as f32);
    let g = Tensor::from_fn(&[n, d], |_| (rng.normal_f64() * 0.5) as f32);

    let base = nway_topk(&q, &g, 10, 3, 50, &mut RngStream::new(3, 0)).unwrap();

    // joint rotation of queries and gallery leaves cosine rankings unchanged
    let rot64 = numcore::linalg::random_orthonormal(d, &mut RngStream::new(11, 0));
    let rot = Tensor::from_vec(&[d, d], rot64.iter().map(|&x| x as f32).collect()).unwrap();
    let qr = q.matmul(&rot).unwrap();
    let gr = g.matmul(&rot).unwrap();
    let rotated = nway_topk(&qr, &gr, 10, 3, 50, &mut RngStream::new(3, 0)).unwrap();
    assert!((base - rotated).abs() < 1e-12, "{base} vs {rotated}");

    // positive rescaling before normalization also leaves rankings unchanged
    let scaled = nway_topk(&q.scale(4.2), &g.scale(0.3), 10, 3, 50, &mut RngStream::new(3, 0)).unwrap();
    assert!((base - scaled).abs() < 1e-12);
}

#[test]
fn report_aggregate_is_mean_of_clips() {
    let mut rng = RngStream::new(113, 0);
    let n = 6;
    let frames = 4;
    let pairs: Vec<ClipPair> = (0..n)
        .map(|i| {
            let truth = Tensor::from_fn(&[frames, 16, 16, 3], |_| rng.uniform_f64() as f32);
            let recon = truth.map(|v| (v + 0.05).clamp(0.0, 1.0));
            ClipPair {
                clip_index: i,
                recon,
                truth,
            }
        })
        .collect();
    let queries = Tensor::from_fn(&[n, 8], |_| rng.normal_f64() as f32);
    let gallery = Tensor::from_fn(&[n, 8], |_| rng.normal_f64() as f32);
    let report = assemble_report(&ReportInputs {
        pairs: &pairs,
        video_queries: queries,
        video_gallery: gallery,
        config_hash: "deadbeef".into(),
        split: "test".into(),
        metric_seed: 5,
        trials: 20,
    })
    .unwrap();

    for (field, agg) in [
        (report.clips.iter().map(|c| c.ssim).sum::<f64>(), report.aggregate.ssim),
        (report.clips.iter().map(|c| c.psnr).sum::<f64>(), report.aggregate.psnr),
        (report.clips.iter().map(|c| c.dtc).sum::<f64>(), report.aggregate.dtc),
        (report.clips.iter().map(|c| c.ctc).sum::<f64>(), report.aggregate.ctc),
    ] {
        assert!((field / n as f64 - agg).abs() < 1e-9);
    }
    assert!(report.aggregate.video_2way >= 0.0 && report.aggregate.video_2way <= 1.0);
    assert!(report.aggregate.frechet >= 0.0);

    // serialization is stable
    assert_eq!(report.to_json(), report.to_json());
    let row = report.csv_row("demo");
    assert!(row.starts_with("demo,"));
}
