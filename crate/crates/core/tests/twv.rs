mod common;

use framekws::eval::{align_hits, mtwv_sweep, twv, Occurrence, References, TwvConfig};
use framekws::search::Hypothesis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn twv_matches_independent_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = TwvConfig::default();
    for _ in 0..100 {
        let (hyps, refs) = common::random_instance(&mut rng);
        let al = align_hits(&hyps, &refs, cfg.tolerance_ms);
        for theta in [0.0, 0.25, 0.5, 0.55, 0.8, 1.0, rng.gen()] {
            let got = twv(&al, &refs, &cfg, theta).unwrap().twv;
            let want = common::recount_twv(&hyps, &refs, cfg.tolerance_ms, cfg.beta, theta);
            assert_eq!(got, want, "theta {theta}");
        }
    }
}

#[test]
fn sweep_beats_a_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = TwvConfig::default();
    for _ in 0..100 {
        let (hyps, refs) = common::random_instance(&mut rng);
        let al = align_hits(&hyps, &refs, cfg.tolerance_ms);
        let sweep = mtwv_sweep(&al, &refs, &cfg).unwrap();
        let grid = (0..1000)
            .map(|k| twv(&al, &refs, &cfg, k as f64 / 999.0).unwrap().twv)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(sweep.mtwv >= grid, "sweep {} < grid {grid}", sweep.mtwv);
        let at = twv(&al, &refs, &cfg, sweep.threshold).unwrap().twv;
        assert_eq!(at, sweep.mtwv);
    }
}

#[test]
fn worked_example() {
    let occ = vec![Occurrence {
        query: "q".into(),
        utterance: "u".into(),
        start_ms: 1000,
        end_ms: 1500,
    }];
    let refs = References::new(occ, 3600.0, &[]);
    let hyp = |start: u64, score: f64| Hypothesis {
        query: "q".into(),
        utterance: "u".into(),
        start_ms: start,
        end_ms: start + 400,
        score,
    };
    let hyps = vec![hyp(1100, 0.9), hyp(50_000, 0.8)];
    let cfg = TwvConfig::default();
    let al = align_hits(&hyps, &refs, cfg.tolerance_ms);
    let r = twv(&al, &refs, &cfg, 0.5).unwrap();
    assert!((r.twv - 0.72217).abs() < 1e-5);
    assert!((r.twv - (1.0 - 999.9 / 3599.0)).abs() < 1e-12);
    let sweep = mtwv_sweep(&al, &refs, &cfg).unwrap();
    assert_eq!(sweep.mtwv, 1.0);
    assert_eq!(sweep.threshold, 0.9);
}
