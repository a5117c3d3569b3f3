use bodynfc::geometry::{
    deform, discretize, make_meander, make_twin_meander, place, CoilPath, MeanderSpec, MotionMode,
    MotionPerturbation, Placement, TwinMeanderSpec,
};
use bodynfc::num::Mat3;
use bodynfc::Vec3;
use proptest::prelude::*;

fn arb_path() -> impl Strategy<Value = CoilPath<f64>> {
    prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64, -0.2..0.2f64), 3..12).prop_filter_map("distinct", |pts| {
        CoilPath::new(pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect(), false, 1e-3).ok()
    })
}

fn arb_placement() -> impl Strategy<Value = Placement<f64>> {
    ((-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), -3.2..3.2f64, (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)).prop_map(
        |((ax, ay, az), angle, (tx, ty, tz))| Placement {
            translation: Vec3::new(tx, ty, tz),
            rotation: Mat3::rotation(Vec3::new(ax, ay, az), angle),
        },
    )
}

fn arb_meander() -> impl Strategy<Value = MeanderSpec<f64>> {
    (2usize..8, 0.05..0.5f64, 0.02..0.06f64).prop_map(|(n, h, s)| MeanderSpec {
        panel_width: s * (n - 1) as f64 + 0.02,
        panel_height: h,
        wire_spacing: s,
        wire_radius: 0.005,
        n_runs: n,
    })
}

proptest! {
    #[test]
    fn rigid_transforms_preserve_distances(path in arb_path(), pl in arb_placement()) {
        let moved = place(&path, &pl);
        let (p, q) = (path.points(), moved.points());
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let d0 = p[i].distance(p[j]);
                prop_assert!((q[i].distance(q[j]) - d0).abs() <= 1e-12 * d0.max(1.0));
            }
        }
    }

    #[test]
    fn discretize_preserves_length_and_is_deterministic(path in arb_path(), h in 0.001..0.1f64) {
        let a = discretize(&path, h).unwrap();
        let b = discretize(&path, h).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.total_length() - path.length()).abs() <= 1e-9 * path.length());
        prop_assert!(a.segments().iter().all(|s| s.0.distance(s.1) <= h * (1.0 + 1e-12)));
    }

    #[test]
    fn twin_halves_are_congruent(m in arb_meander(), sep in 0.0..0.1f64) {
        let (a, b) = make_twin_meander(&TwinMeanderSpec { half: m, separation: sep }).unwrap();
        let mut la = a.edge_lengths();
        let mut lb = b.edge_lengths();
        la.sort_by(f64::total_cmp);
        lb.sort_by(f64::total_cmp);
        prop_assert_eq!(la.len(), lb.len());
        for (x, y) in la.iter().zip(&lb) {
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn zero_motion_is_identity(m in arb_meander(), seed in any::<u64>(), mode in 0usize..3) {
        let path = make_meander(&m).unwrap();
        let mode = [MotionMode::Stretch, MotionMode::Bend, MotionMode::RandomSmooth][mode];
        let p = MotionPerturbation { mode, amplitude: 0.0, spatial_wavelength: 0.2, seed };
        prop_assert_eq!(deform(&path, &p), path.clone());
        let q = MotionPerturbation { amplitude: 0.004, ..p };
        prop_assert_eq!(deform(&path, &q), deform(&path, &q));
    }
}
