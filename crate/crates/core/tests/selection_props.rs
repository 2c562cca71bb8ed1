use proptest::prelude::*;

use flare_core::selection::{
    detect_elbow, select_variables, PerceptionIndicator, VariableWeight, ELBOW_MAX, ELBOW_MIN,
};
use flare_core::{IndicatorKind, WeightVector};

fn vector(ws: &[f64]) -> WeightVector {
    WeightVector {
        indicator: PerceptionIndicator {
            kind: IndicatorKind::ThreatInjury,
            source_variable: "threat_injury".into(),
        },
        weights: ws
            .iter()
            .enumerate()
            .map(|(i, &weight)| VariableWeight {
                variable: format!("v{i}"),
                weight,
            })
            .collect(),
        intercept: 0.0,
        residual_norm: 0.0,
    }
}

fn mass(w: &WeightVector, names: &[String]) -> f64 {
    names
        .iter()
        .map(|n| {
            w.weights
                .iter()
                .find(|v| &v.variable == n)
                .unwrap()
                .weight
                .abs()
        })
        .sum()
}

proptest! {
    #[test]
    fn selection_covers_theta_and_is_minimal(
        ws in prop::collection::vec(-5.0f64..5.0, 1..30),
        theta in 0.05f64..0.99,
    ) {
        let w = vector(&ws);
        prop_assume!(w.abs_total() > 1e-6);
        let s = select_variables(&w, theta).unwrap();
        let total = w.abs_total();
        let covered = mass(&w, &s.selected);
        prop_assert!(covered >= theta * total - 1e-9 * total);
        prop_assert!((s.coverage - covered / total).abs() < 1e-12);
        // dropping the smallest selected weight loses coverage
        let without_last = mass(&w, &s.selected[..s.selected.len() - 1]);
        prop_assert!(without_last < theta * total + 1e-9 * total);
        // and nothing unselected outweighs anything selected
        let min_in = s.selected.iter().map(|n| mass(&w, std::slice::from_ref(n))).fold(f64::INFINITY, f64::min);
        for v in &w.weights {
            if !s.selected.contains(&v.variable) {
                prop_assert!(v.weight.abs() <= min_in);
            }
        }
    }

    #[test]
    fn elbow_theta_stays_in_range(ws in prop::collection::vec(-5.0f64..5.0, 3..30)) {
        let t = detect_elbow(&vector(&ws)).unwrap();
        prop_assert!((ELBOW_MIN..=ELBOW_MAX).contains(&t), "{t}");
    }

    #[test]
    fn theta_one_keeps_every_nonzero_weight(ws in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let w = vector(&ws);
        prop_assume!(w.abs_total() > 0.0);
        let s = select_variables(&w, 1.0).unwrap();
        prop_assert_eq!(s.selected.len(), ws.iter().filter(|x| **x != 0.0).count());
    }
}
