use proptest::prelude::*;
use topk::losses::{
    eval_loss, grad_loss, multiclass_hinge_loss, softmax_loss, topk_error, LossFamily, LossSpec,
};

fn scores_and_label() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (3usize..=10).prop_flat_map(|m| (prop::collection::vec(-4.0f64..4.0, m), 0..m))
}

fn spec(family: LossFamily, k: usize, gamma: f64) -> LossSpec {
    LossSpec::new(family, k, gamma).unwrap()
}

fn central_difference(spec: &LossSpec, f: &[f64], y: usize, h: f64) -> Vec<f64> {
    (0..f.len())
        .map(|j| {
            let mut p = f.to_vec();
            let mut q = f.to_vec();
            p[j] += h;
            q[j] -= h;
            (eval_loss(spec, &p, y).unwrap() - eval_loss(spec, &q, y).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn k1_reductions((f, y) in scores_and_label()) {
        let multi = eval_loss(&spec(LossFamily::TopkHingeAlpha, 1, 1.0), &f, y).unwrap();
        let beta = eval_loss(&spec(LossFamily::TopkHingeBeta, 1, 1.0), &f, y).unwrap();
        let direct = multiclass_hinge_loss(&f, y);
        prop_assert_eq!(multi, direct);
        prop_assert_eq!(beta, direct);
        let soft = eval_loss(&spec(LossFamily::TopkEntropy, 1, 1.0), &f, y).unwrap();
        prop_assert!((soft - softmax_loss(&f, y)).abs() <= 1e-10);
        let trunc = eval_loss(&spec(LossFamily::TopkEntropyTruncated, 1, 1.0), &f, y).unwrap();
        prop_assert_eq!(trunc, softmax_loss(&f, y));
    }

    #[test]
    fn alpha_below_beta_above_error((f, y) in scores_and_label(), k in 1usize..=3) {
        let a = eval_loss(&spec(LossFamily::TopkHingeAlpha, k, 1.0), &f, y).unwrap();
        let b = eval_loss(&spec(LossFamily::TopkHingeBeta, k, 1.0), &f, y).unwrap();
        prop_assert!(a <= b + 1e-12);
        prop_assert!(a >= f64::from(topk_error(&f, y, k)) - 1e-12);
        for family in [LossFamily::TopkHingeAlphaSmooth, LossFamily::TopkHingeBetaSmooth] {
            if k >= f.len() {
                continue;
            }
            // smoothing only lowers the loss
            let s = eval_loss(&spec(family, k, 0.5), &f, y).unwrap();
            let base = if family == LossFamily::TopkHingeAlphaSmooth { a } else { b };
            prop_assert!(s <= base + 1e-12);
        }
    }

    #[test]
    fn smoothing_gap_shrinks((f, y) in scores_and_label(), k in 1usize..=2) {
        for (smooth, plain) in [
            (LossFamily::TopkHingeAlphaSmooth, LossFamily::TopkHingeAlpha),
            (LossFamily::TopkHingeBetaSmooth, LossFamily::TopkHingeBeta),
        ] {
            let target = eval_loss(&spec(plain, k, 1.0), &f, y).unwrap();
            let mut prev = f64::INFINITY;
            for gamma in [1.0, 0.1, 0.01, 0.001] {
                let gap = target - eval_loss(&spec(smooth, k, gamma), &f, y).unwrap();
                prop_assert!(gap >= -1e-12 && gap <= prev + 1e-12);
                prev = gap;
            }
            prop_assert!(prev <= 1e-3);
        }
    }

    #[test]
    fn translation_invariance_and_zero_sum((f, y) in scores_and_label(), shift in -50.0f64..50.0) {
        let g: Vec<f64> = f.iter().map(|v| v + shift).collect();
        for family in LossFamily::ALL.into_iter().filter(|f| !f.is_ova()) {
            for k in 1..=2 {
                let s = spec(family, k, 0.7);
                let (a, b) = (eval_loss(&s, &f, y).unwrap(), eval_loss(&s, &g, y).unwrap());
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * (1.0 + shift.abs()), "{family} k={k}");
                let grad = grad_loss(&s, &f, y).unwrap();
                prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12, "{family} k={k}");
            }
            prop_assert_eq!(topk_error(&f, y, 2), topk_error(&g, y, 2));
        }
    }

    #[test]
    fn gradients_match_finite_differences((f, y) in scores_and_label()) {
        let m = f.len();
        let mut specs = vec![
            spec(LossFamily::TopkEntropy, 1, 1.0),
            spec(LossFamily::OvaLogistic, 1, 1.0),
            spec(LossFamily::OvaHingeSmooth, 1, 0.5),
        ];
        for k in [1usize, 2, 5].into_iter().filter(|&k| k < m) {
            for gamma in [0.1, 1.0] {
                specs.push(spec(LossFamily::TopkHingeAlphaSmooth, k, gamma));
                specs.push(spec(LossFamily::TopkHingeBetaSmooth, k, gamma));
            }
            specs.push(spec(LossFamily::TopkEntropyTruncated, k, 1.0));
            specs.push(spec(LossFamily::TopkEntropy, k, 1.0));
        }
        for s in &specs {
            let g = grad_loss(s, &f, y).unwrap();
            let fd = central_difference(s, &f, y, 1e-6);
            let err = rel_err(&g, &fd);
            // kinks of the piecewise-smooth losses can sit inside the stencil
            if err > 1e-5 {
                let fd2 = central_difference(s, &f, y, 1e-8);
                prop_assert!(rel_err(&g, &fd2) <= 1e-5 || rel_err(&fd, &fd2) > 1e-4,
                    "{:?} k={} err={err}", s.family, s.k);
            }
        }
    }
}

#[test]
fn smooth_hinge_gradient_fd_100_cases() {
    // fixed-seed sweep over (f, y, k, gamma), counted explicitly
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.random_range(3..=8);
        let f: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rng.random_range(0..m);
        let k = rng.random_range(1..m);
        let gamma = [0.1, 0.5, 1.0][rng.random_range(0..3)];
        let family = if rng.random_bool(0.5) {
            LossFamily::TopkHingeAlphaSmooth
        } else {
            LossFamily::TopkHingeBetaSmooth
        };
        let s = spec(family, k, gamma);
        let g = grad_loss(&s, &f, y).unwrap();
        worst = worst.max(rel_err(&g, &central_difference(&s, &f, y, 1e-6)));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}
