use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    evaluate, grad_check, total_loss, Batch, FeatureTable, HingePair, Item, Lambdas, Model, ParaphrasePair,
    RelationScorer, RolePair, Standardizer, HINGE_MARGIN,
};
use crate::phrasebank::{Polarity, WitnessFamily};
use crate::probes::{PairMeasurements, ProbeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub term: String,
    pub max_relative_error: f64,
}

/// Finite-difference checks of every loss term, one at a time and together,
/// on a seeded random problem.
pub fn gradient_report(seed: u64, eps: f64) -> Vec<TermCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pd, td) = (12, 8);
    let pairs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..pd).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let texts: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..td).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut m = || PairMeasurements {
        d_surf: rng.random_range(0.0..0.6),
        dz: rng.random_range(-0.2..0.2),
        omega: rng.random_range(0.0..1.0),
        delta_in: rng.random_range(0.0..1.0),
        d_out: rng.random_range(0.0..0.3),
        distance_scale: 1.5,
        ..Default::default()
    };
    let hinge: Vec<HingePair> = [
        WitnessFamily::Support,
        WitnessFamily::Containment,
        WitnessFamily::Proximity,
    ]
    .into_iter()
    .map(|family| HingePair {
        family,
        polarity: Polarity::None,
        positive: m(),
        negative: m(),
    })
    .collect();
    let mut model = Model {
        scorer: RelationScorer::new(4, pd, td, Standardizer::identity(pd), seed),
        probe: ProbeParams::default(),
    };
    let n = model.scorer.params.len();
    model.scorer.params[n - 1] = 0.3;
    let it = |pair, text| Item { pair, text };
    let all = Batch {
        observed: vec![it(0, 0), it(1, 2)],
        background: vec![it(2, 1), it(3, 3)],
        missing: vec![(it(4, 4), 0.8), (it(5, 0), 0.4)],
        negative: vec![(it(6, 2), 0.1)],
        uncertain: vec![it(7, 3), it(0, 4)],
        hinge,
        role: vec![RolePair {
            forward: it(1, 1),
            reverse_pair: 2,
            sensitivity: 0.8,
        }],
        stability: vec![0.4, 0.9],
        paraphrase: vec![ParaphrasePair {
            item: it(3, 0),
            paraphrase: 4,
        }],
    };
    let unit = Lambdas {
        miss: 1.0,
        neg: 1.0,
        unc: 1.0,
        wit: 1.0,
    };
    let table = FeatureTable {
        pairs: &pairs,
        texts: &texts,
    };
    let empty = Batch::default;
    let cases = [
        (
            "observed",
            Batch {
                observed: all.observed.clone(),
                ..empty()
            },
        ),
        (
            "background",
            Batch {
                background: all.background.clone(),
                ..empty()
            },
        ),
        (
            "missing",
            Batch {
                missing: all.missing.clone(),
                ..empty()
            },
        ),
        (
            "negative",
            Batch {
                negative: all.negative.clone(),
                ..empty()
            },
        ),
        (
            "uncertain",
            Batch {
                uncertain: all.uncertain.clone(),
                ..empty()
            },
        ),
        (
            "hinge",
            Batch {
                hinge: all.hinge.clone(),
                ..empty()
            },
        ),
        (
            "role",
            Batch {
                role: all.role.clone(),
                ..empty()
            },
        ),
        (
            "paraphrase",
            Batch {
                paraphrase: all.paraphrase.clone(),
                ..empty()
            },
        ),
        ("all", all.clone()),
    ];
    cases
        .into_iter()
        .map(|(term, batch)| {
            let err = grad_check(
                &model.flat(),
                |theta| {
                    let (c, g) = evaluate(&model.with_flat(theta), table, &batch, &unit, HINGE_MARGIN);
                    (total_loss(&c, &unit), g)
                },
                eps,
            );
            TermCheck {
                term: term.into(),
                max_relative_error: err,
            }
        })
        .collect()
}
