use kljn_core::noise::*;
use kljn_core::rng::{stream, Party};
use kljn_core::Error;

const N: usize = 1 << 20;

fn cfg(seed: u64) -> NoiseConfig {
    NoiseConfig { seed, ..NoiseConfig::default() }
}

/// Standard error of a sample variance of Gaussian data, with `n_eff`
/// independent samples.
fn var_se(var: f64, n_eff: f64) -> f64 {
    var * (2.0 / n_eff).sqrt()
}

/// Number of independent samples: two real degrees of freedom per band bin.
fn n_eff(c: &NoiseConfig, n: usize) -> f64 {
    (n / c.samples_per_bit * 2 * c.band_bins()) as f64
}

#[test]
fn unit_resistor_variance_is_bandwidth() {
    let c = cfg(1);
    let x = gen_johnson_noise(&c, 1.0, N).unwrap();
    let v = variance(&x);
    assert!((v - 1000.0).abs() < 3.0 * var_se(1000.0, n_eff(&c, N)), "variance {v}");
    let mean = x.iter().sum::<f64>() / N as f64;
    assert!(mean.abs() < 4.0 * (1000.0 / n_eff(&c, N)).sqrt());
}

#[test]
fn variance_scales_with_resistance() {
    let c = cfg(2);
    let base = variance(&gen_johnson_noise(&c, 1.0, N).unwrap());
    for (k, r) in [0.5, 2.0, 10.0].into_iter().enumerate() {
        let other = variance(&gen_johnson_noise(&cfg(10 + k as u64), r, N).unwrap());
        let ratio = other / base;
        // Independent draws: relative errors of both estimates add.
        let se = ratio * (2.0 * 2.0 / n_eff(&c, N)).sqrt();
        assert!((ratio - r).abs() < 3.0 * se, "r = {r}: ratio {ratio}");
    }
}

#[test]
fn doubling_resistance_doubles_variance() {
    let a = gen_johnson_noise(&cfg(3), 1.0, N).unwrap();
    let b = gen_johnson_noise(&cfg(3), 2.0, N).unwrap();
    // Same stream: the waveform is scaled by sqrt(2) exactly.
    for (x, y) in a.iter().zip(&b).take(1000) {
        assert!((y - x * 2f64.sqrt()).abs() <= 1e-12 * x.abs().max(1.0));
    }
    assert!((variance(&b) / variance(&a) - 2.0).abs() < 1e-9);
}

#[test]
fn deterministic_for_fixed_seed() {
    let a = gen_johnson_noise(&cfg(4), 3.0, 10_000).unwrap();
    let b = gen_johnson_noise(&cfg(4), 3.0, 10_000).unwrap();
    assert_eq!(a, b);
    let c = gen_johnson_noise(&cfg(5), 3.0, 10_000).unwrap();
    assert_ne!(a, c);
}

#[test]
fn different_seeds_are_uncorrelated() {
    let a = gen_johnson_noise(&cfg(6), 1.0, N).unwrap();
    let b = gen_johnson_noise(&cfg(7), 1.0, N).unwrap();
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let rho = dot / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|y| y * y).sum::<f64>()).sqrt();
    assert!(rho.abs() < 4.0 / (N as f64).sqrt(), "rho = {rho}");
}

#[test]
fn gaussian_moments() {
    let x = gen_johnson_noise(&cfg(8), 1.0, N).unwrap();
    let m = gaussianity_check(&x).unwrap();
    assert!(m.skewness.abs() < 0.02, "skewness {}", m.skewness);
    assert!(m.excess_kurtosis.abs() < 0.05, "kurtosis {}", m.excess_kurtosis);
    assert_eq!(
        gaussianity_check(&x[..999]),
        Err(Error::TooFewSamples { need: MIN_MOMENT_SAMPLES, got: 999 })
    );
}

#[test]
fn psd_flat_in_band_and_empty_above() {
    let c = cfg(9);
    let x = gen_johnson_noise(&c, 1.0, N).unwrap();
    let p = estimate_psd(&x, c.sample_rate_hz, DEFAULT_SEGMENT_LEN, DEFAULT_OVERLAP).unwrap();
    assert!(p.n_segments >= 64);
    assert!(p.psd.iter().all(|v| *v >= 0.0));
    assert!(p.freqs.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*p.freqs.last().unwrap(), c.sample_rate_hz / 2.0);

    // Bin 0 and the bins within the Hann main lobe of the band edge are excluded.
    let lo = p.resolution_hz;
    let hi = c.bandwidth_hz - 2.0 * p.resolution_hz;
    let band: Vec<f64> = p
        .freqs
        .iter()
        .zip(&p.psd)
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .map(|(_, v)| *v)
        .collect();
    let in_band = band.iter().sum::<f64>() / band.len() as f64;
    assert!((in_band - 1.0).abs() < 0.1, "in-band psd {in_band}");
    let (min, max) = band.iter().fold((f64::MAX, 0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(max / min <= 1.25, "flatness {}", max / min);

    let above = p.band_mean(1.25 * c.bandwidth_hz, c.sample_rate_hz / 2.0).unwrap();
    assert!(above <= 0.01 * in_band, "out of band {above}");

    let ms = variance(&x);
    assert!((p.integral() / ms - 1.0).abs() < 0.05);
}

#[test]
fn psd_integral_matches_for_white_input() {
    let mut rng = stream(12, 0, 0, Party::Harness);
    let x: Vec<f64> = (0..1 << 16).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
    let p = estimate_psd(&x, 1000.0, 256, 0.5).unwrap();
    assert!((p.integral() / variance(&x) - 1.0).abs() < 0.05);
    let m = gaussianity_check(&x).unwrap();
    assert!((m.excess_kurtosis + 1.2).abs() < 0.05);
}

#[test]
fn psd_rejects_bad_arguments() {
    let x = vec![1.0; 100];
    assert!(estimate_psd(&x, 1.0, 101, 0.5).is_err());
    assert!(estimate_psd(&x, 1.0, 64, 1.0).is_err());
    assert!(estimate_psd(&x, 1.0, 64, -0.1).is_err());
}
