mod support;

use secnosql::bench::{zeta, ZipfianGenerator, DEFAULT_THETA};
use support::zipf_chi_square;

#[test]
fn chi_square_against_direct_summation() {
    for (items, seed) in [(100, 1), (1000, 2), (7, 3)] {
        let (stat, dof, p) = zipf_chi_square(items, DEFAULT_THETA, 1_000_000, seed);
        assert!(p > 0.001, "N={items}: chi2={stat:.1} dof={dof} p={p:e}");
    }
}

#[test]
fn chi_square_detects_a_wrong_skew() {
    // sampling at 0.9 but testing against 0.99 must fail
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut g = ZipfianGenerator::new(100, 0.9, 4).unwrap();
    let mut counts = [0f64; 100];
    for _ in 0..1_000_000 {
        counts[g.next_index()] += 1.0;
    }
    let z = zeta(100, DEFAULT_THETA);
    let stat: f64 = (0..100)
        .map(|i| {
            let e = 1e6 / ((i + 1) as f64).powf(DEFAULT_THETA) / z;
            (counts[i] - e).powi(2) / e
        })
        .sum();
    assert!(1.0 - ChiSquared::new(99.0).unwrap().cdf(stat) < 1e-6);
}

#[test]
fn empirical_frequencies_fall_with_rank() {
    let mut g = ZipfianGenerator::new(100, DEFAULT_THETA, 5).unwrap();
    let mut counts = [0usize; 100];
    for _ in 0..1_000_000 {
        counts[g.next_index()] += 1;
    }
    // adjacent deep-tail ranks differ by less than sampling noise, so compare
    // blocks of ten
    let blocks: Vec<usize> = counts.chunks(10).map(|c| c.iter().sum()).collect();
    assert!(blocks.windows(2).all(|w| w[0] > w[1]), "{blocks:?}");
    assert!(counts[..10].windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn harmonic_number_matches_closed_forms() {
    assert_eq!(zeta(1, 0.5), 1.0);
    assert!((zeta(2, 0.5) - (1.0 + 0.5f64.sqrt())).abs() < 1e-15);
    let direct: f64 = (1..=10).map(|i| (i as f64).powf(-0.99)).sum();
    assert!((zeta(10, 0.99) - direct).abs() < 1e-12);
}
