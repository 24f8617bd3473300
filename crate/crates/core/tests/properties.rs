//! Property tests for the structural invariants: file round trips, the
//! perturbation-pair construction, and sample arithmetic.

use pld_core::io::{read_pgm, read_tensor, write_pgm, write_tensor};
use pld_core::losses::build_perturbation;
use pld_core::noise::{corrupt_observation, NoiseSpec};
use pld_core::rng::SeededRng;
use pld_core::tensor::Tensor;
use pld_core::Real;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// PLDT round trip reproduces values to f32 precision for any shape.
    #[test]
    fn pldt_round_trip(
        dims in prop::collection::vec(1usize..6, 1..4),
        seed in any::<u64>(),
    ) {
        let n: usize = dims.iter().product();
        let mut rng = SeededRng::new(seed);
        let data: Vec<Real> = (0..n).map(|_| rng.uniform_in(-10.0, 10.0)).collect();
        let t = Tensor::from_vec(&dims, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pldt");
        write_tensor(&path, &t).unwrap();
        let back: Tensor<Real> = read_tensor(&path).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(*a, *b as f32 as Real);
        }
    }

    /// write(read(file)) is byte-identical for any valid binary PGM.
    #[test]
    fn pgm_round_trip(
        w in 1usize..20,
        h in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let mut raster = format!("P5\n{w} {h}\n255\n").into_bytes();
        for _ in 0..w * h {
            raster.push(rng.uniform_usize(256) as u8);
        }
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.pgm");
        std::fs::write(&src, &raster).unwrap();
        let img: Tensor<Real> = read_pgm(&src).unwrap();
        let dst = dir.path().join("dst.pgm");
        write_pgm(&dst, &img).unwrap();
        prop_assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
    }

    /// Tensor arithmetic agrees exactly with the naive elementwise loops.
    #[test]
    fn tensor_arithmetic_matches_naive(
        data_a in prop::collection::vec(-100.0f64..100.0, 1..200),
        scale in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let n = data_a.len();
        let mut rng = SeededRng::new(seed);
        let data_b: Vec<Real> = (0..n).map(|_| rng.uniform_in(-100.0, 100.0)).collect();
        let a = Tensor::from_vec(&[n], data_a.clone()).unwrap();
        let b = Tensor::from_vec(&[n], data_b.clone()).unwrap();

        let sum = a.add(&b).unwrap();
        let dot = a.dot(&b).unwrap();
        let scaled = a.scale(scale);

        let mut naive_dot = 0.0;
        for i in 0..n {
            prop_assert_eq!(sum.data()[i], data_a[i] + data_b[i]);
            prop_assert_eq!(scaled.data()[i], data_a[i] * scale);
            naive_dot += data_a[i] * data_b[i];
        }
        prop_assert_eq!(dot, naive_dot);
    }

    /// Corrupted samples are pure arithmetic on their stored fields.
    #[test]
    fn corrupted_sample_fields_consistent(
        sigma in 0.01f64..0.5,
        alpha in prop::sample::select(vec![-1.0, -0.25, 0.1, 0.25, 0.5, 1.0]),
        seed in any::<u64>(),
    ) {
        let spec = NoiseSpec::gaussian(sigma);
        let mut rng = SeededRng::new(seed);
        let y = pld_core::rng::gaussian_samples(&mut rng, &[1, 4, 4], 0.5, 0.3).unwrap();
        let s = corrupt_observation(&y, &spec, alpha, &mut rng).unwrap();
        let y_hat = s.y.zip_with(&s.z, |a, b| a + alpha * b).unwrap();
        let target = s.y.zip_with(&s.z, |a, b| a - b / alpha).unwrap();
        prop_assert_eq!(y_hat.data(), s.y_hat.data());
        prop_assert_eq!(target.data(), s.target.data());
    }

    /// Perturbation pairs keep their contract on arbitrary inputs: the
    /// convex identity is bitwise, the touched pixels are sparse and
    /// spread out, and both perturbed versions respect the clip range.
    #[test]
    fn perturbation_pair_invariants(
        h in 5usize..36,
        w in 5usize..36,
        sigma in 0.02f64..0.4,
        seed in any::<u64>(),
    ) {
        let spec = NoiseSpec::gaussian(sigma);
        let mut rng = SeededRng::new(seed);
        let y = pld_core::rng::gaussian_samples(&mut rng, &[1, h, w], 0.5, 0.25).unwrap();
        let s = corrupt_observation(&y, &spec, 1.0, &mut rng).unwrap();
        let pair = build_perturbation(&s.y_hat, &spec, &s.y, sigma, &mut rng).unwrap();

        // bitwise convex identity on the recombined reference
        let rec = pair
            .q1
            .zip_with(&pair.q2, |a, b| pair.tau1 * a + pair.tau2() * b)
            .unwrap();
        prop_assert_eq!(rec.data(), pair.y_hat.data());

        // sparsity: at most ceil(m / 25) nonzero, pairwise distance >= 4
        let m = h * w;
        let mut coords = Vec::new();
        for yy in 0..h {
            for xx in 0..w {
                if pair.q.at(0, yy, xx) != 0.0 {
                    coords.push((yy as isize, xx as isize));
                }
            }
        }
        prop_assert!(coords.len() <= m.div_ceil(25));
        for i in 0..coords.len() {
            for j in 0..i {
                let d = (coords[i].0 - coords[j].0)
                    .abs()
                    .max((coords[i].1 - coords[j].1).abs());
                prop_assert!(d >= 4);
            }
        }

        // clip range and mask support
        let a = s.y_hat.min_value();
        let b = s.y_hat.max_value();
        let (lo, hi) = (1.2 * a - 0.2 * b, 1.2 * b - 0.2 * a);
        for v in pair.q1.data().iter().chain(pair.q2.data()) {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
        for (mv, qv) in pair.mask_m.data().iter().zip(pair.q.data()) {
            if *qv == 0.0 {
                prop_assert_eq!(*mv, 0.0);
            } else {
                prop_assert!(*mv > 0.0);
            }
        }
    }

    /// PSNR is invariant under a common rescaling of both images and the
    /// peak value (power-of-two scales keep it exact).
    #[test]
    fn psnr_scale_homogeneity(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = pld_core::rng::gaussian_samples::<Real>(&mut rng, &[1, 6, 6], 0.5, 0.1).unwrap();
        let b = pld_core::rng::gaussian_samples::<Real>(&mut rng, &[1, 6, 6], 0.5, 0.1).unwrap();
        let p1 = pld_core::metrics::psnr(&a, &b, 1.0).unwrap();
        let p2 = pld_core::metrics::psnr(&a.scale(0.5), &b.scale(0.5), 0.5).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
    }
}
