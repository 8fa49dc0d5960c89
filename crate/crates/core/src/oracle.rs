//! Hidden-truth lookup for evaluation harnesses. Learners never call this.

use std::collections::BTreeSet;

use crate::phrasebank::{argmax_family, polarity, Lexicon, Polarity, RelationPhrase, WitnessFamily};
use crate::scenekit::{LabelStatus, Scene};

/// Truth keyed by `(subject, object, family, polarity)`: a candidate holds
/// when a true label of the same witness family and direction exists.
#[derive(Debug, Clone, Default)]
pub struct TruthOracle {
    keys: BTreeSet<(u32, u32, WitnessFamily, Polarity)>,
    dropped: BTreeSet<(u32, u32, WitnessFamily, Polarity)>,
}

fn flip(p: Polarity) -> Option<Polarity> {
    match p {
        Polarity::Up => Some(Polarity::Down),
        Polarity::Down => Some(Polarity::Up),
        _ => None,
    }
}

impl TruthOracle {
    pub fn from_scene(scene: &Scene, lexicon: &Lexicon) -> Self {
        let mut o = Self::default();
        for l in &scene.labels {
            if l.truth != Some(true) {
                continue;
            }
            let norm = crate::phrasebank::normalize_phrase(&l.phrase);
            let fam = argmax_family(&lexicon.parse(&norm).0);
            if fam == WitnessFamily::FunctionalUncertain {
                continue;
            }
            let pol = polarity(&norm);
            let mut keys = vec![(l.subject_id, l.object_id, fam, pol)];
            if let Some(f) = flip(pol) {
                keys.push((l.object_id, l.subject_id, fam, f));
            }
            for k in keys {
                o.keys.insert(k);
                if l.status == LabelStatus::Unlabeled {
                    o.dropped.insert(k);
                }
            }
        }
        // A key is dropped only if no annotated label also covers it.
        let annotated: BTreeSet<_> = scene
            .labels
            .iter()
            .filter(|l| l.status == LabelStatus::AnnotatedPositive)
            .flat_map(|l| {
                let norm = crate::phrasebank::normalize_phrase(&l.phrase);
                let fam = argmax_family(&lexicon.parse(&norm).0);
                let pol = polarity(&norm);
                let mut v = vec![(l.subject_id, l.object_id, fam, pol)];
                if let Some(f) = flip(pol) {
                    v.push((l.object_id, l.subject_id, fam, f));
                }
                v
            })
            .collect();
        o.dropped.retain(|k| !annotated.contains(k));
        o
    }

    fn matches(set: &BTreeSet<(u32, u32, WitnessFamily, Polarity)>, i: u32, j: u32, phrase: &RelationPhrase) -> bool {
        let fam = phrase.family();
        match (fam, phrase.polarity) {
            (WitnessFamily::FunctionalUncertain, _) => false,
            (WitnessFamily::VerticalOrder, Polarity::None) => {
                set.contains(&(i, j, fam, Polarity::Up)) || set.contains(&(i, j, fam, Polarity::Down))
            }
            (_, pol) => set.contains(&(i, j, fam, pol)),
        }
    }

    pub fn holds(&self, i: u32, j: u32, phrase: &RelationPhrase) -> bool {
        Self::matches(&self.keys, i, j, phrase)
    }

    /// True and missing from the annotations.
    pub fn is_dropped(&self, i: u32, j: u32, phrase: &RelationPhrase) -> bool {
        Self::matches(&self.dropped, i, j, phrase)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phrasebank::shipped_pool;
    use crate::scenekit::{generate_scene, SceneSpec};

    #[test]
    fn paraphrases_and_inverses() {
        let lex = Lexicon::shipped();
        let pool = shipped_pool(&lex);
        let scene = generate_scene(&SceneSpec::default(), 4).unwrap();
        let oracle = TruthOracle::from_scene(&scene, &lex);
        let on = scene
            .labels
            .iter()
            .find(|l| l.phrase == "on")
            .expect("scene has a stacked pair");
        assert!(oracle.holds(on.subject_id, on.object_id, pool.get("supported by").unwrap()));
        assert!(!oracle.holds(on.object_id, on.subject_id, pool.get("on").unwrap()));
        assert!(!oracle.holds(on.subject_id, on.object_id, pool.get("used for").unwrap()));
        let above = scene.labels.iter().find(|l| l.phrase == "above").unwrap();
        assert!(oracle.holds(above.object_id, above.subject_id, pool.get("below").unwrap()));
        assert!(oracle.holds(above.object_id, above.subject_id, pool.get("under").unwrap()));
    }

    #[test]
    fn no_drop_means_nothing_dropped() {
        let lex = Lexicon::shipped();
        let spec = SceneSpec {
            drop_rate: 0.0,
            ..Default::default()
        };
        let scene = generate_scene(&spec, 9).unwrap();
        assert!(scene.labels.iter().all(|l| l.status == LabelStatus::AnnotatedPositive));
        let oracle = TruthOracle::from_scene(&scene, &lex);
        let pool = shipped_pool(&lex);
        for (i, j) in scene.ordered_pairs() {
            for p in pool.phrases() {
                assert!(!oracle.is_dropped(i, j, p));
            }
        }
    }
}
