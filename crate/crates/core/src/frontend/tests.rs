use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_difference_grad, relative_error, Graph};
use crate::signal::dft_real;

fn input(data: &[f64]) -> Tensor {
    Tensor::new(vec![1, data.len()], data.to_vec()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_kernel(kind: FrontendKind, len: usize, rng: &mut ChaCha8Rng) -> FrontendKernel {
    let params = match kind {
        FrontendKind::Gammatone => vec![
            rng.random_range(0.5..2.0),
            rng.random_range(2.0..4.0),
            rng.random_range(0.01..0.05),
            rng.random_range(0.05..0.3),
        ],
        _ => random_vec(rng, kind.param_count(len)),
    };
    FrontendKernel::new(kind, len, params).unwrap()
}

fn random_bank(kind: FrontendKind, len: usize, rng: &mut ChaCha8Rng) -> Filterbank {
    Filterbank::new(
        (0..BRANCHES)
            .map(|_| random_kernel(kind, len, rng))
            .collect(),
    )
    .unwrap()
}

/// `sum(w * y) + 0.5 * sum(y^2)` over the front-end output.
fn loss(bank: &Filterbank, x: &Tensor, w: &[f64]) -> f64 {
    let (y, _) = frontend_forward(x, bank).unwrap();
    y.data()
        .iter()
        .zip(w)
        .map(|(y, w)| w * y + 0.5 * y * y)
        .sum()
}

fn loss_grad(bank: &Filterbank, x: &Tensor, w: &[f64]) -> Tensor {
    let (y, _) = frontend_forward(x, bank).unwrap();
    let g = y.data().iter().zip(w).map(|(y, w)| w + y).collect();
    Tensor::new(y.shape().to_vec(), g).unwrap()
}

fn with_params(bank: &Filterbank, b: usize, params: &[f64]) -> Filterbank {
    let mut kernels = bank.kernels().to_vec();
    kernels[b] = FrontendKernel::new(bank.kind(), bank.kernel_len(), params.to_vec()).unwrap();
    Filterbank::new(kernels).unwrap()
}

#[test]
fn delta_kernels_copy_input() {
    let x = [0.5, -1.0, 2.0, 3.0, -0.25, 1.0, 0.0];
    let bank = Filterbank::uniform(
        FrontendKernel::new(FrontendKind::Free, 3, vec![0.0, 1.0, 0.0]).unwrap(),
    );
    let (y, _) = frontend_forward(&input(&x), &bank).unwrap();
    assert_eq!(y.shape(), &[4, 7]);
    for b in 0..4 {
        assert_eq!(&y.data()[b * 7..(b + 1) * 7], &x);
    }
}

#[test]
fn zero_phase_delta_gives_centered_autocorrelation() {
    let mut x = vec![0.0; 9];
    x[4] = 1.0;
    let bank = Filterbank::uniform(
        FrontendKernel::new(FrontendKind::ZeroPhase, 2, vec![1.0, 1.0]).unwrap(),
    );
    let (y, _) = frontend_forward(&input(&x), &bank).unwrap();
    assert_eq!(
        &y.data()[..9],
        &[0.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 0.0]
    );
}

#[test]
fn unit_dc_type_i_preserves_constant() {
    let bank =
        Filterbank::uniform(FrontendKernel::new(FrontendKind::TypeI, 3, vec![0.25, 0.5]).unwrap());
    let (y, _) = frontend_forward(&input(&[2.0; 10]), &bank).unwrap();
    // Interior samples see the full kernel; the ends are zero padded.
    assert!(y.data()[1..9].iter().all(|&v| v == 2.0));
}

#[test]
fn batched_input_matches_per_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bank = random_bank(FrontendKind::TypeII, 6, &mut rng);
    let a = random_vec(&mut rng, 20);
    let b = random_vec(&mut rng, 20);
    let batch = Tensor::new(vec![2, 1, 20], [a.clone(), b.clone()].concat()).unwrap();
    let (y, _) = frontend_forward(&batch, &bank).unwrap();
    assert_eq!(y.shape(), &[2, 4, 20]);
    let (ya, _) = frontend_forward(&input(&a), &bank).unwrap();
    let (yb, _) = frontend_forward(&input(&b), &bank).unwrap();
    assert_eq!(&y.data()[..80], ya.data());
    assert_eq!(&y.data()[80..], yb.data());
}

#[test]
fn gradients_match_finite_differences_for_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for kind in FrontendKind::ALL {
        for len in [4usize, 5, 16, 17] {
            if kind.check_len(len).is_err() {
                continue;
            }
            let bank = random_bank(kind, len, &mut rng);
            let n = 40;
            let x = Tensor::new(vec![2, 1, n], random_vec(&mut rng, 2 * n)).unwrap();
            let w = random_vec(&mut rng, 2 * BRANCHES * n);
            let (_, cache) = frontend_forward(&x, &bank).unwrap();
            let grads = frontend_backward(&loss_grad(&bank, &x, &w), &cache, &bank, true).unwrap();

            for b in 0..BRANCHES {
                let p = Tensor::from_vec(bank.kernel(b).params().to_vec()).unwrap();
                let fd = finite_difference_grad(
                    |q| loss(&with_params(&bank, b, q.data()), &x, &w),
                    &p,
                    1e-6,
                );
                let err = relative_error(&grads.params[b], fd.data());
                assert!(err < 1e-4, "{kind} K={len} branch {b}: rel err {err}");
            }
            let fd_x = finite_difference_grad(|q| loss(&bank, q, &w), &x, 1e-6);
            let err = relative_error(grads.input.as_ref().unwrap().data(), fd_x.data());
            assert!(err < 1e-4, "{kind} K={len} input: rel err {err}");
        }
    }
}

#[test]
fn type_i_shared_gradient_is_sum_of_mirrored_taps() {
    // Input and upstream are both symmetric about the same sample, so
    // mirrored taps see identical raw gradients.
    let x: Vec<f64> = (0..11).map(|n| 1.0 + (n as f64 - 5.0).powi(2)).collect();
    let up: Vec<f64> = (0..4 * 11).map(|m| ((m % 11) as f64 - 5.0).abs()).collect();
    let bank = Filterbank::uniform(
        FrontendKernel::new(FrontendKind::TypeI, 5, vec![0.3, -0.2, 0.7]).unwrap(),
    );
    let (_, cache) = frontend_forward(&input(&x), &bank).unwrap();
    let up = Tensor::new(vec![4, 11], up).unwrap();
    let g = frontend_backward(&up, &cache, &bank, false).unwrap();
    let taps = &g.taps[0];
    assert_eq!(taps[0], taps[4]);
    assert_eq!(taps[1], taps[3]);
    assert_eq!(
        g.params[0],
        vec![taps[0] + taps[4], taps[1] + taps[3], taps[2]]
    );
    assert!(g.input.is_none());
}

#[test]
fn type_iii_center_receives_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = random_bank(FrontendKind::TypeIII, 7, &mut rng);
    let x = input(&random_vec(&mut rng, 30));
    let (y, cache) = frontend_forward(&x, &bank).unwrap();
    let g = frontend_backward(&y, &cache, &bank, false).unwrap();
    assert_eq!(g.params[0].len(), 3);
    assert_eq!(g.params[0][0], g.taps[0][0] - g.taps[0][6]);
}

#[test]
fn free_backward_matches_graph_conv1d() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for len in [4usize, 5, 16, 17] {
        let bank = random_bank(FrontendKind::Free, len, &mut rng);
        let n = 50;
        let xs = random_vec(&mut rng, n);
        let up = random_vec(&mut rng, BRANCHES * n);

        let (y, cache) = frontend_forward(&input(&xs), &bank).unwrap();
        let ours = frontend_backward(
            &Tensor::new(vec![4, n], up.clone()).unwrap(),
            &cache,
            &bank,
            true,
        )
        .unwrap();

        let mut g = Graph::new();
        let xv = g.leaf(vec![1, n], xs.clone(), true).unwrap();
        let wdata: Vec<f64> = bank
            .kernels()
            .iter()
            .flat_map(|k| k.params().to_vec())
            .collect();
        let wv = g.leaf(vec![4, 1, len], wdata, true).unwrap();
        let yv = g.conv1d(xv, wv).unwrap();
        let upv = g.leaf(vec![4, n], up, false).unwrap();
        let prod = g.mul(yv, upv).unwrap();
        let l = g.sum(prod);
        let grads = g.backward(l).unwrap();

        assert!(relative_error(y.data(), g.value(yv)) < 1e-12);
        let w_grad = grads.get(wv).unwrap();
        for b in 0..BRANCHES {
            let err = relative_error(&ours.params[b], &w_grad[b * len..(b + 1) * len]);
            assert!(err < 1e-10, "K={len} branch {b}: {err}");
        }
        let err = relative_error(ours.input.as_ref().unwrap().data(), grads.get(xv).unwrap());
        assert!(err < 1e-10, "K={len} input: {err}");
    }
}

#[test]
fn zero_phase_end_to_end_response_has_no_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for len in [6usize, 7, 60, 61] {
        let bank = random_bank(FrontendKind::ZeroPhase, len, &mut rng);
        let n = 256;
        let n0 = n / 2;
        let mut x = vec![0.0; n];
        x[n0] = 1.0;
        let (y, _) = frontend_forward(&input(&x), &bank).unwrap();
        for b in 0..BRANCHES {
            let yb = &y.data()[b * n..(b + 1) * n];
            let rotated: Vec<f64> = (0..n).map(|m| yb[(n0 + m) % n]).collect();
            let spec = dft_real(&rotated, n);
            for k in 0..spec.len() {
                if spec.magnitude(k) > 1e-8 {
                    assert!(
                        spec.phase(k).abs() < 1e-8,
                        "K={len} bin {k}: {}",
                        spec.phase(k)
                    );
                }
            }
        }
    }
}

#[test]
fn backward_rejects_mismatched_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bank = random_bank(FrontendKind::TypeI, 5, &mut rng);
    let (y, cache) = frontend_forward(&input(&random_vec(&mut rng, 12)), &bank).unwrap();
    let wrong = Tensor::zeros(vec![4, 11]).unwrap();
    assert!(matches!(
        frontend_backward(&wrong, &cache, &bank, false),
        Err(FrontendError::UpstreamShape { .. })
    ));
    let other = random_bank(FrontendKind::TypeII, 6, &mut rng);
    assert_eq!(
        frontend_backward(&y, &cache, &other, false),
        Err(FrontendError::StaleCache)
    );
}

#[test]
fn forward_rejects_multichannel_input() {
    let bank = init_filterbank(FrontendKind::Free, 5, 0).unwrap();
    let x = Tensor::zeros(vec![2, 10]).unwrap();
    assert_eq!(
        frontend_forward(&x, &bank).map(|_| ()),
        Err(FrontendError::ChannelMismatch(vec![2, 10]))
    );
    let x = Tensor::zeros(vec![3, 2, 10]).unwrap();
    assert!(frontend_forward(&x, &bank).is_err());
}

#[test]
fn filterbank_requires_four_homogeneous_kernels() {
    let k = FrontendKernel::new(FrontendKind::Free, 3, vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(
        Filterbank::new(vec![k.clone(); 3]),
        Err(FrontendError::KernelCount(3))
    );
    let other = FrontendKernel::new(FrontendKind::Free, 4, vec![0.0; 4]).unwrap();
    assert_eq!(
        Filterbank::new(vec![k.clone(), k.clone(), k, other]),
        Err(FrontendError::Heterogeneous)
    );
}

#[test]
fn gammatone_init_fixes_amplitude_and_order() {
    for seed in [0u64, 1, 42] {
        let bank = init_filterbank(FrontendKind::Gammatone, 61, seed).unwrap();
        for k in bank.kernels() {
            let g = k.gammatone_params().unwrap();
            assert_eq!(g.alpha, 1e5);
            assert_eq!(g.eta, 4.0);
            assert!(g.f >= 0.01 && g.f < 0.4);
            assert!(g.beta > 0.0 && g.beta < 0.1);
        }
        assert_eq!(
            bank,
            init_filterbank(FrontendKind::Gammatone, 61, seed).unwrap()
        );
    }
    assert_ne!(
        init_filterbank(FrontendKind::Gammatone, 61, 0).unwrap(),
        init_filterbank(FrontendKind::Gammatone, 61, 1).unwrap()
    );
}

#[test]
fn static_init_respects_constraints_and_bands() {
    for kind in FrontendKind::ALL {
        if kind == FrontendKind::Gammatone {
            continue;
        }
        let len = kind.default_len();
        let bank = init_filterbank(kind, len, 3).unwrap();
        assert_eq!(bank, init_filterbank(kind, len, 3).unwrap());
        for (kernel, &(lo, hi)) in bank.kernels().iter().zip(&DEFAULT_INIT_BANDS_HZ) {
            let h = kernel.taps().taps();
            for i in 0..len {
                let mirror = h[len - 1 - i];
                match kind {
                    FrontendKind::TypeI | FrontendKind::TypeII => assert_eq!(h[i], mirror),
                    FrontendKind::TypeIII | FrontendKind::TypeIV => assert_eq!(h[i], -mirror),
                    _ => {}
                }
            }
            // The strongest response lies near the band.
            let r = effective_response(kernel, 1024);
            let peak = (0..r.n_bins())
                .max_by(|&a, &b| r.magnitude[a].partial_cmp(&r.magnitude[b]).unwrap())
                .unwrap();
            let peak_hz = r.freq_hz(peak, SAMPLE_RATE_HZ);
            assert!(
                peak_hz > lo - 20.0 && peak_hz < hi + 20.0,
                "{kind} band {lo}-{hi}: peak {peak_hz}"
            );
        }
    }
}

#[test]
fn init_rejects_bad_parity() {
    assert_eq!(
        init_filterbank(FrontendKind::TypeII, 61, 0),
        Err(FrontendError::Parity {
            kind: FrontendKind::TypeII,
            len: 61
        })
    );
    assert!(init_filterbank(FrontendKind::TypeIII, 60, 0).is_err());
}

#[test]
fn export_delta_is_flat() {
    let bank = Filterbank::uniform(FrontendKernel::new(FrontendKind::Free, 1, vec![1.0]).unwrap());
    let ex = export_kernels(&bank);
    assert_eq!(ex.len(), 4);
    assert_eq!(ex[0].response.magnitude.len(), 513);
    assert!(ex[0]
        .response
        .magnitude
        .iter()
        .all(|&m| (m - 1.0).abs() < 1e-12));
    assert_eq!(ex[0].response.freq_hz[512], 500.0);
}

#[test]
fn export_type_ii_has_constant_group_delay() {
    let bank = init_filterbank(FrontendKind::TypeII, 60, 0).unwrap();
    for ex in export_kernels(&bank) {
        assert_eq!(ex.k, 60);
        for (m, gd) in ex.response.magnitude.iter().zip(&ex.response.group_delay) {
            if *m > 1e-8 && gd.is_finite() {
                assert!((gd - 29.5).abs() < 1e-6, "{gd}");
            }
        }
    }
}

#[test]
fn export_zero_phase_is_squared_magnitude() {
    let kernel = FrontendKernel::new(FrontendKind::ZeroPhase, 3, vec![1.0, 0.5, -0.25]).unwrap();
    let ex = export_kernel(&kernel);
    assert!(ex.response.phase_rad.iter().all(|&p| p == 0.0));
    // |H(0)|^2 = (1 + 0.5 - 0.25)^2; |H(pi)|^2 = (1 - 0.5 - 0.25)^2
    assert!((ex.response.magnitude[0] - 1.5625).abs() < 1e-12);
    assert!((ex.response.magnitude[512] - 0.0625).abs() < 1e-12);
}

#[test]
fn export_gammatone_lists_params() {
    let bank = init_filterbank(FrontendKind::Gammatone, 61, 1).unwrap();
    let ex = export_kernel(bank.kernel(0));
    assert_eq!(ex.params["alpha"], ParamValue::Scalar(1e5));
    assert_eq!(ex.params["phi"], ParamValue::Scalar(0.0));
    assert_eq!(ex.kind, "gammatone");
}

fn kind_strategy() -> impl Strategy<Value = FrontendKind> {
    prop::sample::select(
        &[
            FrontendKind::TypeI,
            FrontendKind::TypeII,
            FrontendKind::TypeIII,
            FrontendKind::TypeIV,
        ][..],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetry_survives_arbitrary_updates(kind in kind_strategy(), half in 1usize..20, seed in any::<u64>(), steps in 1usize..10) {
        let len = match kind {
            FrontendKind::TypeI => 2 * half - 1,
            FrontendKind::TypeIII => 2 * half + 1,
            _ => 2 * half,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = random_bank(kind, len, &mut rng);
        for _ in 0..steps {
            let deltas: Vec<Vec<f64>> = (0..BRANCHES).map(|_| random_vec(&mut rng, kind.param_count(len))).collect();
            bank.update(|b, p| p.iter_mut().zip(&deltas[b]).for_each(|(v, d)| *v -= 0.1 * d)).unwrap();
        }
        for k in bank.kernels() {
            let h = k.taps().taps();
            for i in 0..len {
                if kind.is_antisymmetric() {
                    prop_assert_eq!(h[i], -h[len - 1 - i]);
                } else {
                    prop_assert_eq!(h[i], h[len - 1 - i]);
                }
            }
            if kind == FrontendKind::TypeIII {
                prop_assert_eq!(h[len / 2], 0.0);
            }
        }
    }

    #[test]
    fn gammatone_taps_match_pointwise_formula(
        alpha in 1e-3f64..1e5, eta in 1.0f64..6.0, beta in 1e-4f64..0.1, f in 1e-3f64..0.499, len in 1usize..80,
    ) {
        let g = GammatoneParams::new(alpha, eta, beta, f).unwrap();
        let k = FrontendKernel::gammatone(g, len).unwrap();
        for (n, &tap) in k.taps().taps().iter().enumerate() {
            let t = (n + 1) as f64;
            let direct = alpha * t.powf(eta - 1.0) * (-2.0 * core::f64::consts::PI * beta * t).exp()
                * (2.0 * core::f64::consts::PI * f * t).cos();
            prop_assert!((tap - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}
