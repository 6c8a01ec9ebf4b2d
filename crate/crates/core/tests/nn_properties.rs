//! Property tests for the layer, optimizer and checkpoint invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlab_core::nn::checkpoint::{read_checkpoint, write_checkpoint};
use xlab_core::nn::model::random_tensor;
use xlab_core::nn::ops::{conv2d_forward, dense_forward, maxpool2x2_forward, softmax};
use xlab_core::nn::{forward, init_params, AdadeltaConfig, AdadeltaState, ModelConfig, ModelParams, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..8) {
        let logits = random_tensor::<f32, _>(vec![rows, 10], -50.0, 50.0, &mut rng(seed));
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(10) {
            let sum: f64 = row.iter().map(|&x| x as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row sum {}", sum);
        }
        let exact = softmax(&logits.cast::<f64>()).unwrap();
        for (a, e) in p.data().iter().zip(exact.data()) {
            prop_assert!((*a as f64 - e).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariance_exact_inputs(seed in any::<u64>(), shift in -20i32..20) {
        // Integer-valued logits and shifts are exact in f32.
        let logits = random_tensor::<f32, _>(vec![3, 10], -30.0, 30.0, &mut rng(seed));
        let mut ints = logits.clone();
        ints.data_mut().iter_mut().for_each(|x| *x = x.round());
        let mut shifted = ints.clone();
        shifted.data_mut().iter_mut().for_each(|x| *x += shift as f32);
        let (p, q) = (softmax(&ints).unwrap(), softmax(&shifted).unwrap());
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_matches_direct_summation(
        seed in any::<u64>(),
        n in 1usize..3, h in 3usize..7, w in 3usize..7, c in 1usize..4, co in 1usize..4,
    ) {
        let mut r = rng(seed);
        let x = random_tensor::<f64, _>(vec![n, h, w, c], -1.0, 1.0, &mut r);
        let k = random_tensor::<f64, _>(vec![3, 3, c, co], -1.0, 1.0, &mut r);
        let b = random_tensor::<f64, _>(vec![co], -1.0, 1.0, &mut r);
        let y = conv2d_forward(&x, &k, &b).unwrap();
        prop_assert_eq!(y.shape(), &[n, h - 2, w - 2, co]);
        let xi = |s: usize, i: usize, j: usize, ch: usize| x.data()[((s * h + i) * w + j) * c + ch];
        for s in 0..n {
            for i in 0..h - 2 {
                for j in 0..w - 2 {
                    for o in 0..co {
                        let mut acc = b.data()[o];
                        for a in 0..3 {
                            for bb in 0..3 {
                                for ch in 0..c {
                                    acc += xi(s, i + a, j + bb, ch) * k.data()[((a * 3 + bb) * c + ch) * co + o];
                                }
                            }
                        }
                        let got = y.data()[((s * (h - 2) + i) * (w - 2) + j) * co + o];
                        prop_assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_matches_naive(seed in any::<u64>(), n in 1usize..5, fi in 1usize..9, fo in 1usize..9) {
        let mut r = rng(seed);
        let x = random_tensor::<f64, _>(vec![n, fi], -1.0, 1.0, &mut r);
        let wt = random_tensor::<f64, _>(vec![fi, fo], -1.0, 1.0, &mut r);
        let b = random_tensor::<f64, _>(vec![fo], -1.0, 1.0, &mut r);
        let y = dense_forward(&x, &wt, &b).unwrap();
        for s in 0..n {
            for o in 0..fo {
                let acc = b.data()[o] + (0..fi).map(|i| x.data()[s * fi + i] * wt.data()[i * fo + o]).sum::<f64>();
                prop_assert!((y.data()[s * fo + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maxpool_picks_window_maxima(seed in any::<u64>(), h in 1usize..5, w in 1usize..5, c in 1usize..3) {
        let x = random_tensor::<f32, _>(vec![1, 2 * h, 2 * w, c], -1.0, 1.0, &mut rng(seed));
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        prop_assert_eq!(y.shape(), &[1, h, w, c]);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .map(|(a, b)| x.data()[((2 * i + a) * 2 * w + 2 * j + b) * c + ch]);
                    let m = window.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    prop_assert_eq!(y.data()[(i * w + j) * c + ch], m);
                }
            }
        }
    }

    #[test]
    fn adadelta_fixed_point_and_nonnegative_accumulators(seed in any::<u64>(), steps in 1usize..6) {
        let config = ModelConfig::downscaled();
        let mut params: ModelParams<f32> = init_params(&config, seed).unwrap();
        let mut state = AdadeltaState::new(AdadeltaConfig::default(), &params);
        let mut r = rng(seed ^ 1);
        for _ in 0..steps {
            let mut g = params.zeros_like();
            for s in g.slices_mut() {
                let noise = random_tensor::<f32, _>(vec![s.len()], -2.0, 2.0, &mut r);
                s.copy_from_slice(noise.data());
            }
            state.step(&mut params, &g);
            prop_assert!(state.acc_grad.slices().flatten().all(|&a| a >= 0.0));
            prop_assert!(state.acc_update.slices().flatten().all(|&a| a >= 0.0));
        }
        let before = params.clone();
        let zero = params.zeros_like();
        state.step(&mut params, &zero);
        prop_assert_eq!(params, before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), dropout in any::<bool>(), small in any::<bool>()) {
        let config = if small { ModelConfig::downscaled() } else { ModelConfig::table1(dropout) };
        let params: ModelParams<f32> = init_params(&config, seed).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &config, &params).unwrap();
        let (c2, p2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(c2, config);
        prop_assert!(p2.slices().flatten().zip(params.slices().flatten()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn forward_is_finite_on_finite_inputs(seed in any::<u64>()) {
        let config = ModelConfig::downscaled();
        let params: ModelParams<f32> = init_params(&config, seed).unwrap();
        let x: Tensor<f32> = random_tensor(vec![3, 8, 8, 1], -10.0, 10.0, &mut rng(seed));
        let p = forward(&config, &params, &x).unwrap();
        prop_assert!(p.is_finite());
    }
}
