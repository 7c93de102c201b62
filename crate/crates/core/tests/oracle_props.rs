use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strategiq::metrics::{kl_similarity, max_kl};
use strategiq::oracle::{brute_force_design, monte_carlo_distortions, OracleGrid};
use strategiq::quantizer::{best_responses, evaluate};
use strategiq::{make_theta_grid, GridScheme, Quantizer, SourceSpec};

#[test]
fn brute_force_dominates_grid_snapped_quantizers() {
    let s = SourceSpec::standard();
    let g = make_theta_grid(&s, 3, GridScheme::GaussHermite).unwrap();
    let og = OracleGrid::default_for(&s);
    let cands = og.candidates();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for lambda in [0.0, 1.0] {
        let best = brute_force_design(&s, &g, 2, lambda, &og).unwrap();
        for _ in 0..100 {
            let interior = (0..3).map(|_| vec![cands[rng.random_range(0..cands.len())]]).collect();
            let q = Quantizer::from_interior(2, interior).unwrap();
            assert!(best.report.d_e <= evaluate(&q, &s, &g, lambda).report.d_e);
        }
    }
}

#[test]
fn brute_force_is_deterministic() {
    let s = SourceSpec::standard();
    let g = make_theta_grid(&s, 2, GridScheme::GaussHermite).unwrap();
    let og = OracleGrid::equispaced(2.0, 9).unwrap();
    let a = brute_force_design(&s, &g, 3, 0.5, &og).unwrap();
    let b = brute_force_design(&s, &g, 3, 0.5, &og).unwrap();
    assert_eq!(a.quantizer, b.quantizer);
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    let s = SourceSpec::new(1.0, 0.8, 0.2).unwrap();
    let g = make_theta_grid(&s, 4, GridScheme::GaussHermite).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..5 {
        let m = 2 + i % 3;
        let interior = (0..4)
            .map(|_| {
                let mut row: Vec<f64> = (0..m - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
                row.sort_by(f64::total_cmp);
                row
            })
            .collect();
        let q = Quantizer::from_interior(m, interior).unwrap();
        let exact = evaluate(&q, &s, &g, 1.5).report;
        let br = best_responses(&q, &s, &g);
        let mc = monte_carlo_distortions(&q, &br, &s, &g, 1.5, 200_000, i as u64).unwrap();
        assert!((mc.estimate.d_e - exact.d_e).abs() < 4.0 * mc.se_d_e);
        assert!((mc.estimate.fidelity - exact.fidelity).abs() < 4.0 * mc.se_fidelity);
        assert!((mc.estimate.d_d - exact.d_d).abs() < 4.0 * mc.se_d_d);
        assert!((mc.estimate.d_theta - exact.d_theta).abs() < 4.0 * mc.se_d_theta);
    }
}

#[test]
fn kl_is_nonnegative_and_zero_on_equal_rows() {
    let s = SourceSpec::standard();
    let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let mut base: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        base.sort_by(f64::total_cmp);
        let interior = (0..5)
            .map(|j| {
                if j % 2 == 0 {
                    base.clone()
                } else {
                    let shift = rng.random_range(0.01..0.5);
                    base.iter().map(|b| b + shift).collect()
                }
            })
            .collect();
        let q = Quantizer::from_interior(4, interior).unwrap();
        let rep = max_kl(&q, &s, &g);
        for a in 0..5 {
            for b in 0..5 {
                let d = rep.pairwise[a][b];
                assert!(d >= 0.0);
                assert_eq!(d, kl_similarity(&q, &s, a, b).unwrap());
                if a % 2 == 0 && b % 2 == 0 {
                    assert_eq!(d, 0.0);
                } else if a != b && (a % 2) != (b % 2) {
                    assert!(d > 0.0);
                }
            }
        }
        assert_eq!(rep.d_max, rep.pairwise.iter().flatten().copied().fold(0.0, f64::max));
    }
}
