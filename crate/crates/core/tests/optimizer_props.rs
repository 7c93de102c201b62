use strategiq::metrics::lloyd_max;
use strategiq::optimizer::{
    design, finite_difference_gradient, gradient, gradient_parts, initial_quantizers, multistart, random_init, FD_STEP,
};
use strategiq::{make_theta_grid, GridScheme, OptimOptions, Quantizer, SourceSpec, ThetaGrid};

fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let diff = a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().flatten().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-8)
}

fn instance(i: usize) -> (SourceSpec, ThetaGrid, Quantizer, f64) {
    let s = SourceSpec::new(1.0, 1.0, if i % 5 == 4 { 0.3 } else { 0.0 }).unwrap();
    let m = 2 + i % 3;
    let n = 3 + (i / 3) % 3;
    let lambda = [0.0, 0.5, 1.0, 5.0][i % 4];
    let g = make_theta_grid(&s, n, GridScheme::GaussHermite).unwrap();
    let q = random_init(&s, &g, m, 1000 + i as u64);
    (s, g, q, lambda)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for i in 0..50 {
        let (s, g, q, lambda) = instance(i);
        let err = relative_error(&gradient(&q, &s, &g, lambda), &finite_difference_gradient(&q, &s, &g, lambda, FD_STEP));
        assert!(err < 1e-5, "instance {i}: relative error {err:e}");
    }
}

#[test]
fn eavesdropper_chain_vanishes_at_best_response() {
    for i in 0..50 {
        let (s, g, q, lambda) = instance(i);
        let parts = gradient_parts(&q, &s, &g, lambda);
        let worst = parts.eavesdropper_chain.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "instance {i}: chain term {worst:e}");
    }
}

#[test]
fn single_node_reduces_to_lloyd_max() {
    let s = SourceSpec::standard();
    let g = ThetaGrid::point(0.0);
    let opts = OptimOptions {
        eps: 1e-15,
        max_iters: 200_000,
        ..OptimOptions::default()
    };
    for m in [2, 4, 8] {
        let lm = lloyd_max(&s, m);
        let start: Vec<f64> = lm.boundaries[1..m].iter().enumerate().map(|(k, b)| b * 1.1 + 0.01 * k as f64).collect();
        let init = Quantizer::from_interior(m, vec![start]).unwrap();
        let r = design(&s, &g, m, 0.0, &opts, Some(init)).unwrap();
        assert!(
            (r.report.d_d - lm.distortion).abs() < 1e-8,
            "M={m}: {} vs {}",
            r.report.d_d,
            lm.distortion
        );
    }
}

#[test]
fn descent_is_monotone() {
    let s = SourceSpec::standard();
    let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
    let opts = OptimOptions {
        record_trajectory: true,
        max_iters: 3000,
        ..OptimOptions::default()
    };
    for (i, lambda) in [0.0, 0.5, 2.0, 50.0].into_iter().enumerate() {
        for m in [2, 3, 5] {
            let init = random_init(&s, &g, m, 77 + i as u64);
            let r = design(&s, &g, m, lambda, &opts, Some(init)).unwrap();
            let t = r.trajectory.unwrap();
            assert!(t.len() <= r.iterations + 1);
            assert!(t.windows(2).all(|w| w[1] <= w[0] + 1e-12), "lambda={lambda} M={m}");
            assert_eq!(*t.last().unwrap(), r.report.d_e);
        }
    }
}

#[test]
fn multistart_is_deterministic_and_best_of_its_runs() {
    let s = SourceSpec::standard();
    let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
    let opts = OptimOptions {
        max_iters: 2000,
        seed: 9,
        ..OptimOptions::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| multistart(&s, &g, 3, 1.0, &opts).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.quantizer, b.quantizer);
    assert_eq!(a.report, b.report);
    assert_eq!(a.restart, b.restart);

    let inits = initial_quantizers(&s, &g, 3, &opts);
    assert_eq!(inits.len(), opts.n_restarts + 1);
    for init in inits {
        let single = design(&s, &g, 3, 1.0, &opts, Some(init)).unwrap();
        assert!(a.report.d_e <= single.report.d_e);
    }
    let lloyd_only = design(&s, &g, 3, 1.0, &opts, None).unwrap();
    assert!(a.report.d_e <= lloyd_only.report.d_e);
}
