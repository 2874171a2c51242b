use lasr::registration::{
    apply_rigid, registration_error, srlp_params, srlp_register, Interpolation, Point,
    RigidTransform,
};
use lasr::segmentation::{fit_threshold, segment_frame, SegmentConfig};
use lasr::synthgen::{gen_misaligned_pair, BlobSpec, PhantomSpec};
use lasr::Frame;

fn segmented(f: &Frame) -> Frame {
    let t = fit_threshold(f, &SegmentConfig::default()).unwrap().threshold;
    segment_frame(f, t)
}

fn square(n: usize, blob: BlobSpec, seed: u64) -> PhantomSpec {
    PhantomSpec { rows: n, cols: n, blob, seed, ..PhantomSpec::default() }
}

fn slim() -> BlobSpec {
    BlobSpec { radii: (0.42, 0.07), peak_width: 0.5, ..BlobSpec::default() }
}

fn grid(n: usize) -> Vec<Point> {
    (0..n * n).map(|i| Point::pixel_center(i / n, i % n)).collect()
}

#[test]
fn rotated_slim_blob_angle_is_recovered() {
    let n = 128;
    let c = Point::new(n as f64 / 2.0, n as f64 / 2.0);
    for (seed, phi) in [(1, 0.2), (2, -0.15), (3, 0.05)] {
        let spec = square(n, slim(), seed);
        let (_, moved, _) = gen_misaligned_pair(&spec, &RigidTransform::rotation_about(c, phi)).unwrap();
        let pose = srlp_params(&segmented(&moved)).unwrap();
        assert!((pose.theta - phi).abs() < 0.01, "phi {phi}: theta {}", pose.theta);
    }
}

#[test]
fn rigidly_moved_phantoms_register_onto_each_other() {
    let n = 64;
    let spec = square(n, slim(), 7);
    let c = Point::new(32.0, 32.0);
    let pose = RigidTransform::translation(3.0, -2.0).compose(&RigidTransform::rotation_about(c, 0.12));
    let (a, b, truth) = gen_misaligned_pair(&spec, &pose).unwrap();
    let (sa, sb) = (segmented(&a), segmented(&b));
    let pa = srlp_params(&sa).unwrap();
    let anchor = pa.self_anchor(n);
    let ta = pa.to_canonical(anchor);
    let tb = srlp_params(&sb).unwrap().to_canonical(anchor);
    // b-space point p corresponds to a-space truth^-1(p)
    let pairs: Vec<(Point, Point)> = grid(n)
        .into_iter()
        .filter(|p| sb.support()[(p.y as usize) * n + p.x as usize])
        .map(|p| (p, truth.true_pose.inverse().apply(p)))
        .collect();
    let before = registration_error(&RigidTransform::identity(), &pairs).unwrap();
    let estimate = ta.inverse().compose(&tb);
    let after = registration_error(&estimate, &pairs).unwrap();
    assert!(before > 10.0, "{before}");
    assert!(after <= 1.0, "{after}");
}

#[test]
fn quarter_turn_session_registers_to_canonical() {
    let n = 64;
    let spec = square(n, BlobSpec::default(), 11);
    let c = Point::new(32.0, 32.0);
    let (a, b, _) =
        gen_misaligned_pair(&spec, &RigidTransform::rotation_about(c, std::f64::consts::FRAC_PI_2)).unwrap();
    let (sa, sb) = (segmented(&a), segmented(&b));
    let pa = srlp_params(&sa).unwrap();
    let pb = srlp_params(&sb).unwrap();
    let anchor = pa.self_anchor(n);
    let ra = apply_rigid(&sa, &pa.to_canonical(anchor), Interpolation::Bilinear);
    let rb = apply_rigid(&sb, &pb.to_canonical(anchor), Interpolation::Bilinear);
    let (ma, mb) = (ra.support(), rb.support());
    let both = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let either = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    assert!(both as f64 / either as f64 > 0.95, "{both}/{either}");
    let peak_err: f64 = ra
        .values()
        .iter()
        .zip(rb.values())
        .zip(ma.iter().zip(&mb))
        .filter(|(_, (x, y))| **x && **y)
        .map(|((p, q), _)| (p - q).abs())
        .sum::<f64>()
        / both as f64;
    // mean absolute difference at the level of the pixel noise
    assert!(peak_err < 4.0, "{peak_err}");
}

#[test]
fn srlp_is_idempotent_on_phantoms() {
    let n = 64;
    let c = Point::new(32.0, 32.0);
    let spec = square(n, slim(), 5);
    let (_, b, _) = gen_misaligned_pair(&spec, &RigidTransform::rotation_about(c, 0.3)).unwrap();
    let (once, _) = srlp_register(&segmented(&b)).unwrap();
    let again = srlp_params(&once).unwrap();
    let t = again.to_canonical(again.self_anchor(n));
    assert!(t.theta.abs() < 0.02, "{t:?}");
    assert!(t.u.hypot(t.v) < 1.0, "{t:?}");
}
