use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfmdepth_core::sampling::sample_pairs;

#[test]
fn gap_distribution_is_uniform() {
    let ids: Vec<u32> = (0..=100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs = sample_pairs(&ids, 5, 30, 10_000, &mut rng).unwrap();
    let mut counts = [0usize; 26];
    for (j, k) in &pairs {
        counts[(*j as i64 - *k as i64).unsigned_abs() as usize - 5] += 1;
    }
    let expected = pairs.len() as f64 / 26.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-squared with 25 degrees of freedom.
    assert!(chi2 < 44.314, "chi2 {chi2}");
    // Both orderings occur about equally often.
    let forward = pairs.iter().filter(|(j, k)| j < k).count();
    assert!((4700..5300).contains(&forward));
}
