//! Property tests over the spec-level invariants that hold for arbitrary
//! inputs, not just the hand-picked cases.

use proptest::prelude::*;

use dln_core::DegradationSpec;
use dln_core::metrics::{l2, psnr};
use dln_core::tensor::{backward, GradMode};
use dln_core::Tensor;

fn image_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_application_is_idempotent(r in 0.0f64..1.0, seed in any::<u64>(), img in image_strategy(64)) {
        let x = Tensor::from_vec(&[1, 1, 8, 8], img).unwrap();
        let spec = DegradationSpec::interpolate(8, 8, r, seed).unwrap();
        let once = spec.apply_deterministic(&x).unwrap();
        let twice = spec.apply_deterministic(&once).unwrap();
        prop_assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn downsample_upsample_are_adjoint(x in image_strategy(64), y in image_strategy(64), t in 1usize..=2) {
        // <down(x), y> == <x, up(y)> for matching shapes
        let (h, w) = (8 / t * t, 8 / t * t);
        let xt = Tensor::from_vec(&[1, 1, 8, 8], x).unwrap();
        let down = xt.downsample(t).unwrap();
        let ny = down.numel();
        let yt = Tensor::from_vec(down.shape(), y[..ny].to_vec()).unwrap();
        let lhs = down.mul(&yt).unwrap().sum().item().unwrap();
        let up = yt.upsample_zero(t).unwrap();
        prop_assert_eq!(up.shape(), &[1, 1, h, w]);
        let rhs = up.mul(&xt).unwrap().sum().item().unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn adjoint_linearity_over_random_leaves(a in image_strategy(12), b in image_strategy(12)) {
        let x = Tensor::from_vec(&[12], a).unwrap().requiring_grad();
        let w = Tensor::from_vec(&[12], b).unwrap();
        let r1 = x.sq_norm();
        let r2 = x.mul(&w).unwrap().sum();
        let combined = backward(&r1.add(&r2).unwrap(), GradMode::EVAL).unwrap();
        let g1 = backward(&r1, GradMode::EVAL).unwrap();
        let g2 = backward(&r2, GradMode::EVAL).unwrap();
        let separate = g1.get(&x).unwrap().add(g2.get(&x).unwrap()).unwrap();
        prop_assert_eq!(combined.get(&x).unwrap().data(), separate.data());
    }

    #[test]
    fn psnr_decreases_with_nested_perturbations(img in image_strategy(64), noise in image_strategy(64)) {
        let x = Tensor::from_vec(&[1, 1, 8, 8], img.clone()).unwrap();
        let mut last = f64::INFINITY;
        for amp in [0.0, 0.1, 0.2, 0.4] {
            let data: Vec<f64> = img.iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            let xh = Tensor::from_vec(&[1, 1, 8, 8], data).unwrap();
            let p = psnr(&xh, &x).unwrap();
            let e = l2(&xh, &x).unwrap();
            // l2 = 0 iff the infinity sentinel
            prop_assert_eq!(e == 0.0, p.is_infinite());
            prop_assert!(p <= last + 1e-12);
            last = p;
        }
    }

    #[test]
    fn spec_records_round_trip(s in 1usize..=12, dy in -3i64..=3, dx in -3i64..=3, seed in any::<u64>(), r in 0.0f64..=0.75, u in 0.0f64..=3.0) {
        let specs = [
            DegradationSpec::inpaint(32, 32, s, (dy, dx)).unwrap(),
            DegradationSpec::interpolate(32, 32, r, seed).unwrap(),
            DegradationSpec::blur_downsample(u, 2, 0.0, seed).unwrap(),
        ];
        for spec in specs {
            let line = spec.record();
            let back = DegradationSpec::parse_record(&line, 32, 32).unwrap();
            prop_assert_eq!(back.record(), line);
            match (&back.mask, &spec.mask) {
                (Some(a), Some(b)) => prop_assert_eq!(a.data(), b.data()),
                (None, None) => {}
                _ => prop_assert!(false, "mask presence changed"),
            }
        }
    }
}
