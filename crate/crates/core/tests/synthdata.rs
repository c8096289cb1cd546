use cpm_core::architecture::{design, DesignOptions};
use cpm_core::synthdata::{
    augment, default_sigma, make_training_pair, sample_pose, segment_distance, warp, Affine, DataConfig, Dataset,
    Manifest, RenderConfig, Skeleton,
};
use proptest::prelude::*;

const CANVAS: (usize, usize) = (64, 64);

#[test]
fn same_seed_same_sample() {
    let sk = Skeleton::toy();
    let r = RenderConfig::default();
    for seed in 0..20 {
        let a = sample_pose(seed, &sk, CANVAS, &r);
        let b = sample_pose(seed, &sk, CANVAS, &r);
        assert_eq!(a, b);
        assert!(a.image.data().iter().zip(b.image.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_ne!(sample_pose(1, &sk, CANVAS, &r).image, sample_pose(2, &sk, CANVAS, &r).image);
}

#[test]
fn zero_clutter_background_is_exact() {
    let sk = Skeleton::toy();
    let r = RenderConfig::zero_clutter();
    for seed in 0..30 {
        let s = sample_pose(seed, &sk, CANVAS, &r);
        assert!(s.others.is_empty());
        let f = &s.figure;
        let reach = f.thickness / 2.0 + 0.5;
        for y in 0..CANVAS.0 {
            for x in 0..CANVAS.1 {
                let p = [x as f32 + 0.5, y as f32 + 0.5];
                let near_limb = f.bones.iter().any(|&(c, q)| segment_distance(p, f.joints[c], f.joints[q]) < reach);
                let h = f.joints[f.head];
                let near_head = ((p[0] - h[0]).powi(2) + (p[1] - h[1]).powi(2)).sqrt() < f.head_radius + 0.5;
                if !near_limb && !near_head {
                    assert_eq!(s.image.data()[y * CANVAS.1 + x], s.background, "seed {seed} pixel {x},{y}");
                }
            }
        }
    }
}

/// Forward kinematics recomputed from the stored lengths and directions.
#[test]
fn keypoints_match_geometry() {
    let sk = Skeleton::toy();
    let r = RenderConfig { noise_std: 0.0, ..RenderConfig::default() };
    for seed in 0..50 {
        let s = sample_pose(seed, &sk, CANVAS, &r);
        let f = &s.figure;
        let root = sk.joints.iter().position(|j| j.parent.is_none()).unwrap();
        let mut pos = vec![[0.0f64; 2]; sk.joints.len()];
        pos[root] = [f.joints[root][0] as f64, f.joints[root][1] as f64];
        for (i, j) in sk.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                let phi = (f.directions[i] as f64).to_radians();
                let len = f.lengths[i] as f64;
                assert!(len >= j.length[0] as f64 && len <= j.length[1] as f64);
                pos[i] = [pos[p][0] + len * phi.cos(), pos[p][1] + len * phi.sin()];
            }
        }
        for (i, j) in sk.joints.iter().enumerate() {
            let Some(part) = j.part else { continue };
            if let Some(k) = s.keypoints.get(part) {
                assert!((k[0] as f64 - pos[i][0]).abs() < 0.5 && (k[1] as f64 - pos[i][1]).abs() < 0.5);
                // the limb passes through the keypoint, so its pixel is inked
                if !s.occluded_parts.contains(&part) {
                    let px = s.image.data()[k[1] as usize * 64 + k[0] as usize];
                    assert!(px > s.background);
                }
            }
        }
        assert!(s.center[0] > 0.0 && s.center[0] < 64.0 && s.center[1] > 0.0 && s.center[1] < 64.0);
    }
}

#[test]
fn default_figure_fits() {
    let sk = Skeleton::toy();
    let r = RenderConfig::default();
    for seed in 0..200 {
        let s = sample_pose(seed, &sk, CANVAS, &r);
        assert!(s.keypoints.points.iter().all(Option::is_some), "seed {seed}");
    }
}

#[test]
fn identity_augment_is_exact() {
    let sk = Skeleton::toy();
    let s = sample_pose(3, &sk, CANVAS, &RenderConfig::default());
    let a = augment(&s, 99, 0.0, [1.0, 1.0], false, &sk);
    for (x, y) in a.image.data().iter().zip(s.image.data()) {
        assert!((x - y).abs() <= 1e-6);
    }
    assert_eq!(a.keypoints, s.keypoints);
}

#[test]
fn quarter_turn_convention() {
    let m = Affine { center: [32.0, 32.0], rotation: 90.0, scale: 1.0, flip: false };
    let q = m.apply([42.0, 32.0]);
    assert!((q[0] - 32.0).abs() < 1e-5 && (q[1] - 42.0).abs() < 1e-5);
}

#[test]
fn double_flip_restores_labels() {
    let sk = Skeleton::toy();
    let s = sample_pose(5, &sk, CANVAS, &RenderConfig::default());
    let flip = Affine { center: [32.0, 32.0], rotation: 0.0, scale: 1.0, flip: true };
    let once = warp(&s, &flip, &sk);
    // left elbow of the flipped figure is the mirrored right elbow
    let r = s.keypoints.get(3).unwrap();
    let l = once.keypoints.get(2).unwrap();
    assert!((l[0] - (64.0 - r[0])).abs() < 1e-5 && (l[1] - r[1]).abs() < 1e-5);
    let twice = warp(&once, &flip, &sk);
    for p in 0..5 {
        let (a, b) = (twice.keypoints.get(p).unwrap(), s.keypoints.get(p).unwrap());
        assert!((a[0] - b[0]).abs() < 0.5 && (a[1] - b[1]).abs() < 0.5);
    }
    assert_eq!(twice.image, s.image);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn augmented_keypoints_follow_the_affine(seed in 0u64..1000, aug in 0u64..1000) {
        let sk = Skeleton::toy();
        let s = sample_pose(seed, &sk, CANVAS, &RenderConfig::default());
        let a = augment(&s, aug, 40.0, [0.7, 1.3], true, &sk);
        let m = cpm_core::synthdata::draw_affine(aug, CANVAS, 40.0, [0.7, 1.3], true);
        let perm = if m.flip { sk.flip_permutation() } else { (0..5).collect() };
        for p in 0..5 {
            // independent f64 affine
            let src = s.keypoints.get(perm[p]).unwrap();
            let (sn, cs) = (m.rotation as f64).to_radians().sin_cos();
            let (du, dv) = ((src[0] as f64 - 32.0) * m.scale as f64, (src[1] as f64 - 32.0) * m.scale as f64);
            let mut u = cs * du - sn * dv;
            if m.flip { u = -u; }
            let want = [32.0 + u, 32.0 + sn * du + cs * dv];
            let inside = want[0] >= 0.0 && want[1] >= 0.0 && want[0] < 64.0 && want[1] < 64.0;
            match a.keypoints.get(p) {
                Some(k) => {
                    prop_assert!((k[0] as f64 - want[0]).abs() < 1e-4 && (k[1] as f64 - want[1]).abs() < 1e-4);
                }
                None => prop_assert!(!inside || (want[0].min(want[1]) < 1e-4) || (want[0].max(want[1]) > 64.0 - 1e-4)),
            }
        }
    }
}

#[test]
fn training_pairs() {
    let spec = design(&DesignOptions::toy(3)).unwrap();
    let sk = Skeleton::toy();
    let sigma = default_sigma(64);
    let single = sample_pose(1, &sk, CANVAS, &RenderConfig { second_figure_prob: 0.0, ..RenderConfig::default() });
    let p = make_training_pair(&single, &spec, sigma).unwrap();
    assert_eq!(p.stage1, p.later);
    assert_eq!(p.center.shape(), &[1, 16, 16]);

    let two = RenderConfig { second_figure_prob: 1.0, ..RenderConfig::default() };
    let mut seen_difference = false;
    for seed in 0..10 {
        let s = sample_pose(seed, &sk, CANVAS, &two);
        assert_eq!(s.others.len(), 1);
        let p = make_training_pair(&s, &spec, sigma).unwrap();
        for c in 0..5 {
            for (a, b) in p.stage1.channel(c).iter().zip(p.later.channel(c)) {
                assert!(a >= b);
                seen_difference |= a > b;
            }
        }
    }
    assert!(seen_difference);

    let mut s = single.clone();
    s.keypoints.points[2] = None;
    let p = make_training_pair(&s, &spec, sigma).unwrap();
    assert!(p.stage1.channel(2).iter().chain(p.later.channel(2)).all(|&v| v == 0.0));
}

#[test]
fn dataset_regenerates_bitwise() {
    let cfg = DataConfig { train: 20, test: 5, ..DataConfig::default() };
    let a = Dataset::generate(&cfg).unwrap();
    let b = Dataset::generate(&cfg).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    a.manifest().save(&path).unwrap();
    let m = Manifest::load(&path).unwrap();
    assert_eq!(m, a.manifest());
    assert_eq!(m.train.len(), 20);
    assert_eq!(m.dataset().unwrap().test, a.test);
}
