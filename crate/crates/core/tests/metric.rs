use proptest::prelude::*;

use trackscan::siamese::{contrastive_loss, distance, score, EMBEDDING_DIM};
use trackscan::training::Label;
use trackscan::Embedding;

fn embedding() -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-10.0f64..10.0, EMBEDDING_DIM).prop_map(Embedding::new)
}

fn ulp(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1) - x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_is_a_metric(a in embedding(), b in embedding(), c in embedding()) {
        let ab = distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab.to_bits(), distance(&b, &a).unwrap().to_bits());
        let bound = ab + distance(&b, &c).unwrap();
        prop_assert!(distance(&a, &c).unwrap() <= bound + 4.0 * ulp(bound));
    }

    #[test]
    fn score_stays_in_unit_interval(d in 0.0f64..1e6, m in 1e-3f64..10.0) {
        let s = score(d, m);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(score(d + m, m), 1.0);
    }

    #[test]
    fn score_is_monotone(d1 in 0.0f64..5.0, d2 in 0.0f64..5.0, m in 0.1f64..3.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(score(lo, m) <= score(hi, m));
    }

    #[test]
    fn contrastive_loss_is_nonnegative(d in 0.0f64..10.0, m in 0.1f64..3.0) {
        let (ls, gs) = contrastive_loss(d, Label::Similar, m).unwrap();
        let (ld, gd) = contrastive_loss(d, Label::Dissimilar, m).unwrap();
        prop_assert!(ls >= 0.0 && ld >= 0.0);
        prop_assert!(gs >= 0.0 && gd <= 0.0);
        if d >= m {
            prop_assert_eq!((ld, gd), (0.0, 0.0));
        }
    }
}

#[test]
fn distance_rejects_mismatched_lengths() {
    let a = Embedding::new(vec![0.0; 3]);
    let b = Embedding::new(vec![0.0; 4]);
    assert!(distance(&a, &b).is_err());
}

#[test]
fn loss_rejects_negative_distance() {
    assert!(contrastive_loss(-1e-3, Label::Similar, 1.0).is_err());
}
