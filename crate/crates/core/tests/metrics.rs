use proptest::prelude::*;
use topk::dataset::Dataset;
use topk::losses::LossFamily;
use topk::metrics::{cross_validate, topk_accuracy, GridSpec};
use topk::model::Model;

fn problem() -> impl Strategy<Value = (Model, Dataset)> {
    (2usize..=6, 1usize..=4, 1usize..=30).prop_flat_map(|(m, d, n)| {
        (
            prop::collection::vec(-3.0f64..3.0, d * m),
            prop::collection::vec(-1.0f64..1.0, n * d),
            prop::collection::vec(0..m, n),
        )
            .prop_map(move |(w, x, y)| {
                (
                    Model::from_weights(d, m, w, LossFamily::TopkEntropy, 1, 0.0, 1.0).unwrap(),
                    Dataset::new(x, y, d, m).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn accuracy_is_monotone_and_complete((model, data) in problem()) {
        let m = model.num_classes();
        let acc = topk_accuracy(&model, &data, m).unwrap();
        prop_assert!(acc.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(acc.iter().all(|&a| (0.0..=100.0).contains(&a)));
        prop_assert_eq!(acc[m - 1], 100.0);
    }

    #[test]
    fn positive_rescaling_keeps_accuracy((model, data) in problem(), scale in 1e-3f64..1e3) {
        let mut scaled = model.clone();
        scaled.weights_mut().iter_mut().for_each(|w| *w *= scale);
        let m = model.num_classes();
        // products can round into ties only in degenerate cases; powers of two are exact
        let exact = 2f64.powi(scale.log2().round() as i32);
        let mut pow2 = model.clone();
        pow2.weights_mut().iter_mut().for_each(|w| *w *= exact);
        prop_assert_eq!(topk_accuracy(&model, &data, m).unwrap(), topk_accuracy(&pow2, &data, m).unwrap());
        let a = topk_accuracy(&model, &data, m).unwrap();
        let b = topk_accuracy(&scaled, &data, m).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 100.0 / data.len() as f64 + 1e-9));
    }
}

#[test]
fn selection_is_invariant_to_relabeling_the_grid() {
    let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.2], vec![0, 1, 2], 2, 3).unwrap();
    // a fake trainer whose quality peaks at lambda = 1/6
    let fit = |lambda: f64| {
        let good = (lambda - 1.0 / 6.0).abs() < 1e-12;
        let w = if good { vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0] } else { vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0] };
        Ok(Model::from_weights(2, 3, w, LossFamily::TopkHingeAlpha, 1, 0.0, lambda).unwrap())
    };
    let grid = GridSpec {
        c_values: vec![0.5, 2.0, 8.0],
        target_ks: vec![1],
    };
    let cv = cross_validate(&data, &data, "fake", &grid, 2, fit).unwrap();
    assert_eq!(cv.selections[0].c, 2.0);
    assert!(!cv.selections[0].boundary);
    assert_eq!(cv.validation.rows.len(), 3);
}
