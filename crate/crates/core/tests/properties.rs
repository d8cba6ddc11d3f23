//! Property tests over randomized inputs.

use proptest::prelude::*;

use hsiseg_core::cube::{load_cube, save_cube, HsiCube};
use hsiseg_core::metrics::pair_metrics;
use hsiseg_core::model::{responsibilities, UnconstrainedParams};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_roundtrip_is_bit_identical(
        h in 1usize..5,
        w in 1usize..5,
        bands in 1usize..6,
        seed in 0u32..1000,
    ) {
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(1664525).wrapping_add(1013904223);
            (state >> 8) as f32 / (1u32 << 24) as f32 - 0.5
        };
        let wavelengths: Vec<f64> = (0..bands).map(|b| 400.0 + 10.0 * b as f64).collect();
        let data: Vec<f32> = (0..h * w * bands).map(|_| next()).collect();
        let cube = HsiCube::new(h, w, wavelengths, data).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("cube.hdr");
        save_cube(&cube, &hdr).unwrap();
        let back = load_cube(&hdr).unwrap();

        prop_assert_eq!(back.height(), cube.height());
        prop_assert_eq!(back.width(), cube.width());
        prop_assert_eq!(back.wavelengths(), cube.wavelengths());
        let bits = |c: &HsiCube| c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&cube));
        prop_assert_eq!(back.mask(), cube.mask());
    }

    #[test]
    fn pair_metrics_swap_exchanges_os_and_us(
        r0 in 0usize..6, c0 in 0usize..6, rh in 1usize..6, rw in 1usize..6,
        s0 in 0usize..6, sc in 0usize..6, sh in 1usize..6, sw in 1usize..6,
    ) {
        let rect = |r0: usize, c0: usize, h: usize, w: usize| -> Vec<(usize, usize)> {
            (r0..r0 + h).flat_map(|r| (c0..c0 + w).map(move |c| (r, c))).collect()
        };
        let a = rect(r0, c0, rh, rw);
        let b = rect(s0, sc, sh, sw);
        let ab = pair_metrics(&a, &b).unwrap();
        let ba = pair_metrics(&b, &a).unwrap();
        prop_assert_eq!(ab.os, ba.us);
        prop_assert_eq!(ab.us, ba.os);
        prop_assert!((ab.ed - ba.ed).abs() < 1e-15);
    }

    #[test]
    fn growing_one_side_is_monotone(
        extra in 0usize..8,
    ) {
        let rect = |w: usize| -> Vec<(usize, usize)> {
            (0..3).flat_map(|r| (0..w).map(move |c| (r, c))).collect()
        };
        let region = rect(3);
        let base = pair_metrics(&region, &rect(3)).unwrap();
        let grown = pair_metrics(&region, &rect(3 + extra)).unwrap();
        // Growing the segment around a fixed intersection never lowers US.
        prop_assert!(grown.us >= base.us);
        // And symmetrically for OS with a grown region.
        let grown_region = pair_metrics(&rect(3 + extra), &region).unwrap();
        prop_assert!(grown_region.os >= base.os);
    }

    #[test]
    fn responsibilities_form_a_simplex(
        seed in 0u64..500,
        k in 1usize..6,
        d in 1usize..6,
    ) {
        let mut rng = hsiseg_core::rng::PortableRng::new(seed);
        let mut u = UnconstrainedParams::zeros(k, d);
        for v in u
            .pi_logits
            .iter_mut()
            .chain(&mut u.mu)
            .chain(&mut u.log_sigma2)
            .chain(&mut u.log_alpha)
        {
            *v = rng.normal();
        }
        let theta = u.constrain().unwrap();
        let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
        let r = responsibilities(&theta, &x).unwrap();
        prop_assert!(r.iter().all(|&v| v >= 0.0));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
