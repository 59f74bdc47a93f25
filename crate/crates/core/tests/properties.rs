use num_complex::Complex64;
use proptest::prelude::*;

use mxl::aden::hermitian_layer;
use mxl::asn::{asn_penalty, hard_select, is_mt_hot, soft_select, top_indices};
use mxl::beam_codebook::{build_codebook, optimal_beam, InnerProduct};
use mxl::channel_sim::{compute_ccm, generate_channel, steering_vector, ArrayGeometry, Path, PathParams};
use mxl::container::{decode, encode, Payload};
use mxl::grad::{AdamConfig, AdamState, Tensor};
use mxl::trainer::{hermitian_eigenvalues, nmse, pack_real_imag, split_indices, unpack_real_imag};

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn path(alpha: f64, phase: f64, delay: f64, az: f64, el: f64) -> Path {
    Path {
        alpha,
        phase,
        delay,
        aod_azimuth: az,
        aod_elevation: el,
        aoa_azimuth: 0.0,
        aoa_elevation: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steering_entries_have_unit_modulus(az in -3.2..3.2f64, el in 0.0..3.2f64, nx in 1usize..5, ny in 1usize..5) {
        let a = steering_vector(az, el, &ArrayGeometry::upa(nx, ny)).unwrap();
        prop_assert_eq!(a.len(), nx * ny);
        prop_assert_eq!(a[0], Complex64::new(1.0, 0.0));
        for v in a {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_is_linear_in_gains(
        gains in prop::collection::vec(0.0..2.0f64, 1..5),
        k in 0.1..4.0f64,
        az in -3.0..3.0f64,
    ) {
        let geom = ArrayGeometry::upa(3, 2);
        let mk = |scale: f64| PathParams {
            paths: gains
                .iter()
                .enumerate()
                .map(|(i, &g)| path(scale * g, 0.3 * i as f64, 1e-9 * i as f64, az + 0.2 * i as f64, 1.0))
                .collect(),
            bandwidth: 2e8,
        };
        let h1 = generate_channel(&mk(1.0), &geom).unwrap();
        let hk = generate_channel(&mk(k), &geom).unwrap();
        for (a, b) in h1.iter().zip(&hk) {
            prop_assert!((a * k - b).norm() < 1e-9);
        }
    }

    #[test]
    fn hard_and_soft_selection(p in probs(12), m in 1usize..12) {
        let s = hard_select(&p, m).unwrap();
        prop_assert_eq!(s.iter().filter(|&&v| v == 1.0).count(), m);
        prop_assert!(s.iter().all(|&v| v == 0.0 || v == 1.0));
        let idx = top_indices(&p, m).unwrap();
        let smallest_kept = idx.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
        for (i, &v) in p.iter().enumerate() {
            if !idx.contains(&i) {
                prop_assert!(v <= smallest_kept);
            }
        }
        let soft = soft_select(&p, m);
        prop_assert!((soft.iter().sum::<f64>() - m as f64).abs() < 1e-10);
        prop_assert!(soft.iter().all(|&v| (0.0..=m as f64).contains(&v)));
    }

    #[test]
    fn penalty_vanishes_on_hot_vectors_only(p in probs(8), m in 1usize..8) {
        let s = hard_select(&p, m).unwrap();
        prop_assert_eq!(asn_penalty(&s, m, 1.0, 1.0), 0.0);
        prop_assert!(is_mt_hot(&s, m, 0.0));
        let soft = soft_select(&p, m);
        // strictly positive entries: the scaled softmax output is never hot
        prop_assert!(!is_mt_hot(&soft, m, 1e-9) || asn_penalty(&soft, m, 1.0, 1.0) < 1e-12);
        prop_assert!(asn_penalty(&soft, m, 1.0, 1.0) >= 0.0);
    }

    #[test]
    fn hermitian_layer_is_exactly_hermitian(n in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let packed: Vec<f64> = (0..2 * n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let h = hermitian_layer(&packed, n).unwrap();
        let (re, im) = h.split_at(n * n);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(re[i * n + j], re[j * n + i]);
                prop_assert_eq!(im[i * n + j], -im[j * n + i]);
            }
        }
        prop_assert!(hermitian_eigenvalues(&h, n).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn covariance_is_hermitian_with_mean_power_trace(hs in prop::collection::vec(complex_vec(4), 1..6)) {
        let r = compute_ccm(&hs).unwrap();
        prop_assert!(r.is_hermitian());
        let mean: f64 = hs.iter().map(|h| h.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum::<f64>() / hs.len() as f64;
        prop_assert!((r.trace() - mean).abs() <= 1e-9 * mean.max(1.0));
    }

    #[test]
    fn packing_round_trips(u in complex_vec(7)) {
        let packed = pack_real_imag(&u);
        prop_assert_eq!(packed.len(), 14);
        prop_assert_eq!(unpack_real_imag(&packed).unwrap(), u);
    }

    #[test]
    fn nmse_is_scale_invariant(u in complex_vec(5), v in complex_vec(5), k in 0.1..10.0f64) {
        prop_assume!(u.iter().any(|x| x.norm() > 1e-3));
        let a = nmse(std::slice::from_ref(&u), std::slice::from_ref(&v)).unwrap();
        let su: Vec<_> = u.iter().map(|x| x * k).collect();
        let sv: Vec<_> = v.iter().map(|x| x * k).collect();
        let b = nmse(&[su], &[sv]).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn split_is_a_partition(n in 2usize..300, frac in 0.05..0.95f64, seed in any::<u64>()) {
        let (train, hold) = split_indices(n, frac, seed).unwrap();
        prop_assert!(!train.is_empty() && !hold.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn channel_containers_round_trip(hs in prop::collection::vec(complex_vec(3), 0..5), label in 0u32..9) {
        let samples: Vec<_> = hs
            .into_iter()
            .enumerate()
            .map(|(i, h)| mxl::channel_sim::ChannelSample { position: [i as f64, 0.5, -1.0], h, beam_label: label })
            .collect();
        let p = Payload::Channels(samples);
        let bytes = encode(3, &p).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), (3, p));
        prop_assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn aligned_channel_picks_its_own_beam(beam in 0usize..16, gain in 0.1..5.0f64) {
        let geom = ArrayGeometry::upa(4, 4);
        let cb = build_codebook(&geom, 1).unwrap();
        // conjugate of a codeword aligns under the bilinear form
        let h: Vec<Complex64> = cb.vectors[beam].iter().map(|v| v.conj() * gain).collect();
        prop_assert_eq!(optimal_beam(&h, &cb, 1.0, InnerProduct::Bilinear).unwrap(), beam);
        let h: Vec<Complex64> = cb.vectors[beam].iter().map(|v| v * gain).collect();
        prop_assert_eq!(optimal_beam(&h, &cb, 1.0, InnerProduct::Conjugate).unwrap(), beam);
    }

    #[test]
    fn adam_with_zero_rate_is_a_no_op(vals in prop::collection::vec(-3.0..3.0f64, 1..6), g in -2.0..2.0f64) {
        let mut params = vec![Tensor::vector(vals.clone())];
        let grads = vec![Tensor::vector(vec![g; vals.len()])];
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &params);
        for _ in 0..5 {
            adam.step(&mut params, &grads).unwrap();
        }
        prop_assert_eq!(params[0].data(), vals.as_slice());
    }
}
