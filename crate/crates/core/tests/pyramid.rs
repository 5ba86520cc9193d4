use ipgnet::gradcheck::random_tensor;
use ipgnet::pyramid::normalize_image;
use ipgnet::{build_pyramid, Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn four_levels_halve_each_time() {
    let img = random_tensor(&mut ChaCha8Rng::seed_from_u64(0), [1, 3, 128, 128]);
    let p = build_pyramid(&img, 4).unwrap();
    let sides: Vec<usize> = p.levels().iter().map(|l| l.shape().h()).collect();
    assert_eq!(sides, vec![128, 64, 32, 16]);
    assert!(p.levels().iter().all(|l| l.shape().w() == l.shape().h() && l.shape().c() == 3));
    assert!(p.level(0).unwrap().bitwise_eq(&img));
}

#[test]
fn single_level_is_rejected() {
    let img = Tensor::zeros([1, 3, 16, 16]);
    assert!(matches!(build_pyramid(&img, 1), Err(Error::Precondition(_))));
}

#[test]
fn indivisible_size_names_the_multiple() {
    let img = Tensor::zeros([1, 3, 20, 16]);
    match build_pyramid(&img, 4) {
        Err(Error::Precondition(m)) => assert!(m.contains('8'), "{m}"),
        other => panic!("expected precondition error, got {other:?}"),
    }
}

#[test]
fn normalisation_is_per_channel() {
    let img = Tensor::from_fn([1, 2, 2, 2], |_, c, _, _| if c == 0 { 0.75 } else { 0.25 });
    let n = normalize_image(&img, &[0.5, 0.5], &[0.25, 0.5]).unwrap();
    assert_eq!(n.data(), &[1.0, 1.0, 1.0, 1.0, -0.5, -0.5, -0.5, -0.5]);
    assert!(normalize_image(&img, &[0.5], &[0.25]).is_err());
}

proptest! {
    #[test]
    fn constant_image_stays_constant(v in -5.0f64..5.0, levels in 2..5usize, side in 1..4usize) {
        let s = side << (levels - 1);
        let img = Tensor::full([2, 3, s, s], v);
        let p = build_pyramid(&img, levels).unwrap();
        prop_assert_eq!(p.len(), levels);
        for (i, l) in p.levels().iter().enumerate() {
            prop_assert_eq!(l.shape().spatial(), (s >> i, s >> i));
            prop_assert!(l.data().iter().all(|x| *x == v));
        }
    }

    #[test]
    fn linear_ramp_keeps_its_mean(a in -1.0f64..1.0, bx in -1.0f64..1.0, by in -1.0f64..1.0, levels in 2..5usize) {
        let s = 8 << (levels - 1);
        let img = Tensor::from_fn([1, 1, s, s], |_, _, y, x| a + bx * x as f64 / s as f64 + by * y as f64 / s as f64);
        let p = build_pyramid(&img, levels).unwrap();
        let m0 = p.level(0).unwrap().mean();
        for l in p.levels() {
            prop_assert!((l.mean() - m0).abs() < 1e-9);
        }
    }

    #[test]
    fn level_zero_is_the_input(seed in any::<u64>()) {
        let img = random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), [1, 3, 16, 32]);
        let p = build_pyramid(&img, 3).unwrap();
        prop_assert!(p.level(0).unwrap().bitwise_eq(&img));
    }
}
