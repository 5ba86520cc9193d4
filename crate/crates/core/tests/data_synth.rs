use ipgnet::data_synth::{
    check_disjoint, export_scene, generate_scene, generate_split, ShapeKind, IMAGE_SIZE, MAX_OBJECTS, MAX_SIDE,
    MIN_SIDE, N_CLASSES, SMALL_SIDE,
};
use ipgnet::detector::parse_detections;
use ipgnet::Error;
use proptest::prelude::*;

#[test]
fn scenes_are_deterministic() {
    for s in [0, 1, 999, u64::MAX / 3] {
        let a = generate_scene(s);
        let b = generate_scene(s);
        assert!(a.image.bitwise_eq(&b.image));
        assert_eq!(a.boxes, b.boxes);
        assert_eq!(a.seed, s);
    }
    assert!(!generate_scene(0).image.bitwise_eq(&generate_scene(1).image));
}

#[test]
fn every_class_appears() {
    let mut seen = [0usize; N_CLASSES];
    for s in 0..100 {
        for b in generate_scene(s).boxes {
            seen[b.class_idx] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}

#[test]
fn invariants_over_a_thousand_seeds() {
    let n = IMAGE_SIZE as f64;
    let mut total = 0usize;
    let mut small = 0usize;
    for s in 0..1000 {
        let scene = generate_scene(s);
        assert_eq!(scene.image.shape().0, [1, 3, IMAGE_SIZE, IMAGE_SIZE]);
        assert!(scene.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((1..=MAX_OBJECTS).contains(&scene.boxes.len()), "seed {s}");
        for (i, g) in scene.boxes.iter().enumerate() {
            let b = g.bounds;
            assert!(b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= n && b.y_max <= n, "seed {s}");
            assert!((b.width() - b.height()).abs() < 1e-12);
            assert!((MIN_SIDE..=MAX_SIDE).contains(&b.width()), "seed {s}");
            assert!(g.class_idx < N_CLASSES);
            for other in &scene.boxes[i + 1..] {
                assert_eq!(b.iou(&other.bounds), 0.0, "seed {s}: objects overlap");
            }
            total += 1;
            if b.side() <= SMALL_SIDE {
                small += 1;
            }
        }
    }
    let frac = small as f64 / total as f64;
    assert!(frac >= 0.4, "small fraction {frac}");
}

#[test]
fn labels_match_rendered_pixels() {
    // Pixels with nonzero coverage span the box to within one pixel, and the
    // centre pixel carries the class colour.
    for s in 0..200 {
        let scene = generate_scene(s);
        for g in &scene.boxes {
            let b = g.bounds;
            let kind = ShapeKind::from_class(g.class_idx).unwrap();
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            for py in 0..IMAGE_SIZE {
                for px in 0..IMAGE_SIZE {
                    if kind.coverage(&b, px, py) > 0.0 {
                        x0 = x0.min(px);
                        y0 = y0.min(py);
                        x1 = x1.max(px + 1);
                        y1 = y1.max(py + 1);
                    }
                }
            }
            assert!((x0 as f64 - b.x_min).abs() <= 1.0, "seed {s}");
            assert!((y0 as f64 - b.y_min).abs() <= 1.0, "seed {s}");
            assert!((x1 as f64 - b.x_max).abs() <= 1.0, "seed {s}");
            assert!((y1 as f64 - b.y_max).abs() <= 1.0, "seed {s}");

            let (cx, cy) = b.center();
            let (px, py) = (cx.floor() as usize, cy.floor() as usize);
            if kind.coverage(&b, px, py) < 1.0 {
                continue;
            }
            let rgb: Vec<f64> = (0..3).map(|c| scene.image.at(0, c, py, px)).collect();
            match kind {
                ShapeKind::Square => assert!(rgb[0] > 0.85 && rgb[1] < 0.35, "seed {s}: {rgb:?}"),
                ShapeKind::Disc => assert!(rgb[1] > 0.7 && rgb[0] < 0.2, "seed {s}: {rgb:?}"),
                ShapeKind::Cross => assert!(rgb.iter().all(|&v| v > 0.8), "seed {s}: {rgb:?}"),
            }
        }
    }
}

#[test]
fn splits_are_disjoint_and_regenerate() {
    let train = generate_split("train", 64, 0).unwrap();
    let val = generate_split("val", 16, 10_000).unwrap();
    let test = generate_split("test", 16, 20_000).unwrap();
    check_disjoint(&[&train, &val, &test]).unwrap();
    assert_eq!(val.seeds(), 10_000..10_016);
    let again = generate_split("val", 16, 10_000).unwrap();
    for (a, b) in val.iter().zip(again.iter()) {
        assert!(a.image.bitwise_eq(&b.image));
        assert_eq!(a.boxes, b.boxes);
    }
    assert_eq!(val.scene(3).seed, 10_003);

    let clash = generate_split("val", 16, 60).unwrap();
    assert!(matches!(check_disjoint(&[&train, &clash]), Err(Error::Config(_))));
    assert!(matches!(generate_split("x", 0, 0), Err(Error::Config(_))));
    assert!(generate_split("x", 2, u64::MAX).is_err());
}

#[test]
fn export_writes_image_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(5);
    export_scene(&scene, dir.path()).unwrap();
    let pfm = std::fs::read(dir.path().join("scene_5.pfm")).unwrap();
    let header = format!("PF\n{IMAGE_SIZE} {IMAGE_SIZE}\n-1.0\n");
    assert!(pfm.starts_with(header.as_bytes()));
    assert_eq!(pfm.len(), header.len() + IMAGE_SIZE * IMAGE_SIZE * 3 * 4);
    let text = std::fs::read_to_string(dir.path().join("scene_5.txt")).unwrap();
    let back = parse_detections(&text).unwrap();
    assert_eq!(back.len(), scene.boxes.len());
    for ((id, d), g) in back.iter().zip(&scene.boxes) {
        assert_eq!(*id, 5);
        assert_eq!(d.class_idx, g.class_idx);
        assert!((d.bounds.x_min - g.bounds.x_min).abs() <= 5e-7);
        assert!((d.bounds.y_max - g.bounds.y_max).abs() <= 5e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_seed_is_well_formed(seed in any::<u64>()) {
        let s = generate_scene(seed);
        prop_assert!((1..=MAX_OBJECTS).contains(&s.boxes.len()));
        prop_assert!(s.image.is_finite());
        for g in &s.boxes {
            prop_assert!(g.bounds.is_valid());
            prop_assert!(g.bounds.x_max <= IMAGE_SIZE as f64 && g.bounds.y_max <= IMAGE_SIZE as f64);
        }
    }
}
