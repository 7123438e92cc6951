mod common;

use framekws::search::{decode_hits, decode_islands, median, Aggregator, DecodeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn islands_match_brute_force_scanner() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonempty = 0;
    for _ in 0..1000 {
        let cfg = common::random_decode_config(&mut rng);
        let z = common::random_probs(&mut rng, cfg.threshold);
        let letters = rand::Rng::gen_range(&mut rng, 1..6);
        let step = [10, 40][rand::Rng::gen_range(&mut rng, 0..2)];
        let fast = decode_islands(&z, &cfg, letters, step);
        let slow = common::brute_islands(&z, &cfg, letters, step);
        assert_eq!(fast, slow, "z = {z:?}, cfg = {cfg:?}, letters = {letters}");
        nonempty += !fast.is_empty() as usize;
    }
    assert!(nonempty > 300, "too few vectors produced islands: {nonempty}");
}

#[test]
fn even_length_median_averages_the_middle_pair() {
    assert_eq!(median(&[0.9, 0.6, 0.8, 0.7]), 0.75);
    assert_eq!(median(&[0.6, 0.9]), 0.75);
    assert_eq!(median(&[0.9, 0.6, 0.7]), 0.7);
}

#[test]
fn short_islands_are_pruned_per_letter() {
    let cfg = DecodeConfig {
        threshold: 0.5,
        min_ms_per_letter: 20.0,
        aggregator: Aggregator::Median,
    };
    // Three 40 ms frames last 120 ms: enough for six letters, not seven.
    let z = [0.1, 0.8, 0.9, 0.7, 0.2];
    assert_eq!(decode_islands(&z, &cfg, 6, 40).len(), 1);
    assert!(decode_islands(&z, &cfg, 7, 40).is_empty());
}

#[test]
fn hits_cover_whole_frames() {
    let cfg = DecodeConfig {
        min_ms_per_letter: 0.0,
        ..DecodeConfig::default()
    };
    let hits = decode_hits("ab", "u1", &[0.2, 0.6, 0.6, 0.1, 0.9], &cfg, 2, 40);
    let spans: Vec<(u64, u64, f64)> = hits.iter().map(|h| (h.start_ms, h.end_ms, h.score)).collect();
    assert_eq!(spans, vec![(40, 120, 0.6), (160, 200, 0.9)]);
}
