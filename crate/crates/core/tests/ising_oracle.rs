//! Ising sampler against exact enumeration and Monte Carlo oracles.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlab_core::noise::{
    gen_iid, gen_ising_set, generate, ising_sample, Coupling, NoiseKind, NoiseSpec, DEFAULT_SWEEPS,
};

/// Exact Boltzmann weights `exp(beta * J * sum_<ij> s_i s_j)` over all
/// `2^(w*h)` states, free boundaries. State bit `k` is pixel `k` (1 = up).
fn exact_distribution(w: usize, h: usize, beta: f64, j: f64) -> Vec<f64> {
    let n = w * h;
    let mut weights: Vec<f64> = (0..1usize << n)
        .map(|state| {
            let s = |x: usize, y: usize| if state >> (y * w + x) & 1 == 1 { 1.0 } else { -1.0 };
            let mut bond = 0.0;
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        bond += s(x, y) * s(x + 1, y);
                    }
                    if y + 1 < h {
                        bond += s(x, y) * s(x, y + 1);
                    }
                }
            }
            (beta * j * bond).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|p| *p /= z);
    weights
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn empirical_3x3(beta: f64, coupling: Coupling, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; 512];
    for _ in 0..samples {
        let img = ising_sample(3, 3, beta, coupling, DEFAULT_SWEEPS, &mut rng);
        let state = img.iter().enumerate().fold(0usize, |acc, (k, &b)| acc | (b as usize) << k);
        counts[state] += 1;
    }
    counts.iter().map(|&c| c as f64 / samples as f64).collect()
}

#[test]
fn three_by_three_matches_exact_enumeration() {
    let exact = exact_distribution(3, 3, 0.5, 1.0);
    let empirical = empirical_3x3(0.5, Coupling::Ferromagnetic, 1_000_000, 2024);
    let tv = total_variation(&exact, &empirical);
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn antiferromagnetic_sign_matches_its_own_density() {
    let exact = exact_distribution(3, 3, 0.5, -1.0);
    let empirical = empirical_3x3(0.5, Coupling::Antiferromagnetic, 100_000, 7);
    let tv = total_variation(&exact, &empirical);
    // 512 cells at 1e5 samples: sampling noise alone is around 0.03.
    assert!(tv < 0.06, "total variation {tv}");
    let wrong = total_variation(&exact_distribution(3, 3, 0.5, 1.0), &empirical);
    assert!(wrong > 0.3, "J=-1 samples look ferromagnetic: {wrong}");
}

/// Mean of `s_i s_j` over all horizontal and vertical bonds, and its
/// standard error across images.
fn bond_correlation(images: &[f32], w: usize, h: usize) -> (f64, f64) {
    let per_image: Vec<f64> = images
        .chunks(w * h)
        .map(|img| {
            let s = |x: usize, y: usize| 2.0 * img[y * w + x] as f64 - 1.0;
            let (mut sum, mut n) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    if x + 1 < w {
                        sum += s(x, y) * s(x + 1, y);
                        n += 1.0;
                    }
                    if y + 1 < h {
                        sum += s(x, y) * s(x, y + 1);
                        n += 1.0;
                    }
                }
            }
            sum / n
        })
        .collect();
    let m = per_image.len() as f64;
    let mean = per_image.iter().sum::<f64>() / m;
    let var = per_image.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[test]
fn neighbour_correlation_increases_with_beta() {
    let betas = [0.1, 0.3, 0.5];
    let set = gen_ising_set(30_000, &betas, Coupling::Ferromagnetic, DEFAULT_SWEEPS, 99).unwrap();
    let corr: Vec<(f64, f64)> = set
        .strata()
        .iter()
        .map(|(_, idx)| {
            assert_eq!(idx.len(), 10_000);
            let sub = set.select(idx);
            bond_correlation(sub.images.data(), 28, 28)
        })
        .collect();
    for k in 1..corr.len() {
        let ((lo, se_lo), (hi, se_hi)) = (corr[k - 1], corr[k]);
        assert!(hi - lo > 3.0 * (se_lo * se_lo + se_hi * se_hi).sqrt(), "{corr:?}");
    }
    // High-temperature expansion: <s_i s_j> ~ tanh(beta) at small beta.
    assert!((corr[0].0 - 0.1f64.tanh()).abs() < 0.02, "{corr:?}");
}

#[test]
fn beta_zero_is_indistinguishable_from_fair_coins() {
    let ising = gen_ising_set(2000, &[0.0], Coupling::Ferromagnetic, DEFAULT_SWEEPS, 5).unwrap();
    let coins = gen_iid(NoiseKind::BernoulliHalf, 2000, 6).unwrap();
    let mean = |d: &[f32]| d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
    let n = ising.images.len() as f64;
    let se_mean = (0.25 / n).sqrt() * 2f64.sqrt();
    let (mi, mc) = (mean(ising.images.data()), mean(coins.images.data()));
    assert!((mi - mc).abs() < 3.0 * se_mean, "means {mi} vs {mc}");
    let (ci, se_i) = bond_correlation(ising.images.data(), 28, 28);
    let (cc, se_c) = bond_correlation(coins.images.data(), 28, 28);
    assert!((ci - cc).abs() < 3.0 * (se_i * se_i + se_c * se_c).sqrt(), "corr {ci} vs {cc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Same spec, same bits, regardless of the worker count.
    #[test]
    fn generation_is_deterministic_across_thread_counts(
        seed in any::<u64>(),
        kind_idx in 0usize..6,
        threads in 2usize..5,
    ) {
        let kind = NoiseKind::ALL[kind_idx];
        let mut spec = NoiseSpec::new(kind, 20, seed);
        spec.sweeps = 3;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| generate(&spec)).unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| generate(&spec)).unwrap();
        prop_assert!(one.images.data().iter().zip(many.images.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        if kind.is_binary() {
            prop_assert!(one.images.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
