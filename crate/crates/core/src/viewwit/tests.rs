use super::*;
use crate::phrasebank::{shipped_pool, Lexicon};
use crate::scenekit::{generate_scene, LabelStatus, SceneSpec};
use proptest::prelude::*;

fn vs(rho: f64, s_rgb: f64, s_dep: f64) -> ViewScore {
    ViewScore {
        frame_index: 0,
        s_rgb,
        s_dep,
        rho,
    }
}

fn oracle_scorer() -> OracleNoisyScorer {
    OracleNoisyScorer::new(Lexicon::shipped(), OracleNoiseConfig::default())
}

#[test]
fn pooling_examples() {
    assert!((pool_rgb(&[vs(1.0, 0.2, 0.0), vs(1.0, 0.4, 0.0)], 4, 1e-12) - 0.3).abs() < 1e-9);
    assert_eq!(pool_rgb(&[], 4, 0.01), 0.0);
    assert!((pool_rgb(&[vs(1.0, 1.0, 0.0)], 4, 0.01) - 1.0 / 1.01).abs() < 1e-12);
    // Only the four most reliable views count.
    let many: Vec<_> = (0..6)
        .map(|k| vs(1.0 - 0.1 * k as f64, if k < 4 { 1.0 } else { 0.0 }, 0.0))
        .collect();
    assert!((pool_rgb(&many, 4, 1e-12) - 1.0).abs() < 1e-9);
}

#[test]
fn multiview_examples() {
    let c = vs(0.5, 0.6, 0.2);
    assert!((multiview_score(&[c, c, c]) - 0.2).abs() < 1e-12);
    assert!((multiview_score(&[vs(1.0, 1.0, 1.0)]) - 1.0).abs() < 1e-12);
    assert_eq!(multiview_score(&[vs(1.0, 0.0, 0.0), vs(1.0, 1.0, 1.0)]), 0.0);
    assert_eq!(multiview_score(&[]), 0.0);
    assert_eq!(multiview_score(&[vs(0.7, 0.0, 0.0), vs(0.2, 0.0, 0.0)]), 0.0);
}

#[test]
fn role_examples() {
    assert!((role_score(1.3, 1.3, 1.0) - 0.5).abs() < 1e-12);
    assert_eq!(role_score(5.0, -2.0, 0.0), 1.0);
    assert!((role_score(2.5, 0.5, 1.0) - 0.880_797_077_977_882_3).abs() < 1e-12);
}

proptest! {
    #[test]
    fn role_complementarity(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        prop_assert!((role_score(a, b, 1.0) + role_score(b, a, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_view_strength_bound(rho in 0.0f64..1.0, r in 0.0f64..1.0, d in 0.0f64..1.0) {
        prop_assert!(multiview_score(&[vs(rho, r, d)]) <= rho * (r + d) / 2.0 + 1e-12);
    }
}

fn cand(frame: usize, base: f64, yaw_deg: f64) -> ViewCandidate {
    let y = yaw_deg.to_radians();
    ViewCandidate {
        frame_index: frame,
        base,
        direction: Vec3::new(y.cos(), y.sin(), 0.0),
    }
}

#[test]
fn view_selection_diversity() {
    assert!(select_ranked(Vec::new(), 6, 15.0).is_empty());
    let one = select_ranked(vec![cand(3, 0.4, 0.0)], 6, 15.0);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].frame_index, 3);

    // Ten near-identical views and one orthogonal view of lower reliability.
    let mut cands: Vec<_> = (0..10)
        .map(|k| cand(k, 0.9 - 0.01 * k as f64, k as f64 * 0.5))
        .collect();
    cands.push(cand(10, 0.3, 90.0));
    let picked = select_ranked(cands.clone(), 2, 15.0);
    let frames: Vec<usize> = picked.iter().map(|v| v.frame_index).collect();
    assert_eq!(frames, vec![0, 10]);
    let dir = |f: usize| cands.iter().find(|c| c.frame_index == f).unwrap().direction;
    assert!(angle_between(&dir(frames[0]), &dir(frames[1])).to_degrees() >= 15.0);

    // Spare slots are filled with deferred views at half reliability.
    let all = select_ranked(cands, 4, 15.0);
    assert_eq!(all.len(), 4);
    assert!(all[2].rho < 0.5 && !all[2].novel);
}

#[test]
fn scene_view_selection() {
    let scene = generate_scene(&SceneSpec::default(), 4).unwrap();
    let views = SceneViews::new(&scene);
    let p = WitnessParams::default();
    for (i, j) in scene.ordered_pairs() {
        let sel = select_views(&scene, &views, i, j, &p);
        assert!(sel.len() <= p.max_views);
        for v in &sel {
            assert!(views.visibility(i, v.frame_index) > p.tau_v);
            assert!(views.visibility(j, v.frame_index) > p.tau_v);
            assert!((0.0..=1.0).contains(&v.rho));
        }
    }
    assert!(select_views(&scene, &views, 999, 0, &p).is_empty());
}

fn engine_parts(scene: &Scene) -> (PhrasePool, NullPrior) {
    let pool = shipped_pool(&Lexicon::shipped());
    let null = NullPrior::from_scenes([scene], &pool);
    (pool, null)
}

#[test]
fn neutral_depth_dispatch() {
    let scene = generate_scene(&SceneSpec::default(), 6).unwrap();
    let (pool, null) = engine_parts(&scene);
    let scorer = NullScorer;
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    let mut near = pool.get("near").unwrap().clone();
    near.family_dist = [0.0; 8];
    near.family_dist[WitnessFamily::Proximity.index()] = 1.0;
    let mut checked = 0;
    for (i, j) in scene.ordered_pairs() {
        let sel = engine.select(i, j);
        for v in engine.score_views(i, j, &near, &sel).unwrap() {
            assert_eq!(v.s_dep, 0.5);
            assert_eq!(v.s_rgb, 0.5);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

/// Copy of `scene` with object `id` raised by `dz` meters.
fn lifted(scene: &Scene, id: u32, dz: f64) -> Scene {
    let mut objects = scene.objects.clone();
    let o = objects.iter_mut().find(|o| o.id == id).unwrap();
    let shift = Vec3::new(0.0, 0.0, dz);
    o.obb.center += shift;
    o.mask_points.iter_mut().for_each(|p| *p += shift);
    Scene::new(
        scene.name.clone(),
        scene.seed,
        scene.room_scale,
        scene.frames.clone(),
        objects,
        scene.labels.clone(),
    )
}

#[test]
fn support_depth_contact_and_floating() {
    let lex = Lexicon::shipped();
    let pool = shipped_pool(&lex);
    let on = pool.get("on").unwrap();
    let scorer = NullScorer;
    let null = NullPrior::default();
    let spec = SceneSpec {
        drop_rate: 0.0,
        ..Default::default()
    };
    let (mut contact, mut floating) = (Vec::new(), Vec::new());
    for seed in 0..12 {
        let scene = generate_scene(&spec, seed).unwrap();
        let engine = WitnessEngine::new(
            &scene,
            &pool,
            &scorer,
            &null,
            WitnessParams::default(),
            ProbeParams::default(),
        )
        .unwrap();
        for l in scene.labels.iter().filter(|l| l.phrase == "on") {
            let sel = engine.select(l.subject_id, l.object_id);
            let views = engine.score_views(l.subject_id, l.object_id, on, &sel).unwrap();
            if views.is_empty() {
                continue;
            }
            contact.push(pool_depth(&views, 1e-6));

            let up = lifted(&scene, l.subject_id, 0.5);
            let e2 = WitnessEngine::new(
                &up,
                &pool,
                &scorer,
                &null,
                WitnessParams::default(),
                ProbeParams::default(),
            )
            .unwrap();
            let sel = e2.select(l.subject_id, l.object_id);
            let views = e2.score_views(l.subject_id, l.object_id, on, &sel).unwrap();
            if !views.is_empty() {
                floating.push(pool_depth(&views, 1e-6));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    eprintln!(
        "support depth: contact mean {:.3} (n={}), floating mean {:.3} (n={})",
        mean(&contact),
        contact.len(),
        mean(&floating),
        floating.len()
    );
    assert!(contact.len() >= 10 && floating.len() >= 10);
    assert!(mean(&contact) >= 0.7, "contact mean {}", mean(&contact));
    assert!(mean(&floating) <= 0.3, "floating mean {}", mean(&floating));
}

#[test]
fn null_prior_frequencies() {
    let lex = Lexicon::shipped();
    let pool = shipped_pool(&lex);
    let spec = SceneSpec {
        drop_rate: 0.0,
        ..Default::default()
    };
    let scenes: Vec<Scene> = (0..30).map(|s| generate_scene(&spec, s).unwrap()).collect();
    let null = NullPrior::from_scenes(&scenes, &pool);
    let on = pool.get("on").unwrap().cluster_id;
    // Independent count of (book, on, table) over the same split.
    let (mut pos, mut pairs) = (0usize, 0usize);
    for s in &scenes {
        for (i, j) in s.ordered_pairs() {
            let (a, b) = (s.object(i).unwrap(), s.object(j).unwrap());
            if a.category == "book" && b.category == "table" {
                pairs += 1;
                if s.labels
                    .iter()
                    .any(|l| l.subject_id == i && l.object_id == j && l.phrase == "on")
                {
                    pos += 1;
                }
            }
        }
    }
    assert!(pos >= 3, "only {pos} book-on-table labels");
    let got = null.score("book", "table", on);
    let empirical = pos as f64 / pairs as f64;
    assert!(
        (got - empirical).abs() < 2.0 / (pairs as f64 + 2.0),
        "{got} vs {empirical}"
    );

    // Unseen pair: prior over two pseudo-counts.
    let unseen = null.score("toaster", "moon", on);
    let rate = scenes
        .iter()
        .flat_map(|s| s.labels.iter().filter(|l| l.phrase == "on"))
        .count() as f64
        / scenes.iter().map(|s| s.ordered_pairs().len()).sum::<usize>() as f64;
    assert!((unseen - rate / 2.0).abs() < 1e-12);
}

#[test]
fn null_prior_is_pose_blind() {
    let lex = Lexicon::shipped();
    let pool = shipped_pool(&lex);
    let scene = generate_scene(&SceneSpec::default(), 8).unwrap();
    let base = NullPrior::from_scenes([&scene], &pool);
    let moved = lifted(&lifted(&scene, 0, 1.3), 2, -0.2);
    assert_eq!(base, NullPrior::from_scenes([&moved], &pool));
}

#[test]
fn functional_and_viewless_records() {
    let scene = generate_scene(&SceneSpec::default(), 9).unwrap();
    let (pool, null) = engine_parts(&scene);
    let scorer = oracle_scorer();
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    let used = pool.get("used for").unwrap();
    let (i, j) = scene.ordered_pairs()[0];
    let rec = engine.record(i, j, used, (0.3, -0.1)).unwrap();
    assert_eq!(rec.s_3d, 0.0);
    assert!(rec.trace.region_3d.is_none());
    assert!(rec.scores().iter().all(|s| (0.0..=1.0).contains(s)));

    let on = pool.get("on").unwrap();
    let raw = engine.measurements(i, j).unwrap();
    let rec = engine.assemble(i, j, on, Vec::new(), &raw, (0.0, 0.0)).unwrap();
    assert_eq!((rec.s_rgb, rec.s_dep, rec.s_mv), (0.0, 0.0, 0.0));
    assert_eq!(rec.quality.min_visibility, 0.0);
    let with_views = engine.record(i, j, on, (0.0, 0.0)).unwrap();
    assert_eq!(rec.s_3d, with_views.s_3d);
}

#[test]
fn inside_trace_lies_in_container() {
    let lex = Lexicon::shipped();
    let pool = shipped_pool(&lex);
    let inside = pool.get("inside").unwrap();
    let scorer = NullScorer;
    let null = NullPrior::default();
    let spec = SceneSpec {
        drop_rate: 0.0,
        ..Default::default()
    };
    let mut checked = 0;
    for seed in 0..20 {
        let scene = generate_scene(&spec, seed).unwrap();
        let engine = WitnessEngine::new(
            &scene,
            &pool,
            &scorer,
            &null,
            WitnessParams::default(),
            ProbeParams::default(),
        )
        .unwrap();
        for l in scene.labels.iter().filter(|l| l.phrase == "inside") {
            let rec = engine.record(l.subject_id, l.object_id, inside, (0.0, 0.0)).unwrap();
            let trace = rec.trace.region_3d.unwrap();
            let container = scene.object(l.object_id).unwrap().obb;
            for c in trace.corners() {
                assert!(container.contains(&c, 1e-9), "corner {c:?} outside container");
            }
            for p in trace.grid_points(6) {
                assert!(container.contains(&p, 1e-9));
            }
            checked += 1;
        }
    }
    assert!(checked >= 3);
}

#[test]
fn supporting_frames_are_selected_views() {
    let scene = generate_scene(&SceneSpec::default(), 11).unwrap();
    let (pool, null) = engine_parts(&scene);
    let scorer = oracle_scorer();
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    for (i, j) in scene.ordered_pairs().into_iter().take(20) {
        for p in pool.representatives() {
            let rec = engine.record(i, j, p, (0.1, 0.2)).unwrap();
            let sel: Vec<usize> = rec.views.iter().map(|v| v.frame_index).collect();
            assert!(rec.trace.supporting_frames.iter().all(|f| sel.contains(&f.frame_index)));
            assert!(rec.trace.region_2d.keys().all(|f| sel.contains(f)));
        }
    }
}

#[test]
fn record_jsonl_round_trip() {
    let scene = generate_scene(&SceneSpec::default(), 12).unwrap();
    let (pool, null) = engine_parts(&scene);
    let scorer = oracle_scorer();
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    let recs: Vec<_> = pool
        .representatives()
        .iter()
        .map(|p| engine.record(0, 1, p, (0.4, 0.1)).unwrap())
        .collect();
    assert_eq!(records_from_jsonl(&records_to_jsonl(&recs)).unwrap(), recs);
}

#[test]
fn oracle_scorer_tracks_truth() {
    let lex = Lexicon::shipped();
    let pool = shipped_pool(&lex);
    let scorer = oracle_scorer();
    let null = NullPrior::default();
    let scene = generate_scene(&SceneSpec::default(), 13).unwrap();
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    let truth = crate::oracle::TruthOracle::from_scene(&scene, &lex);
    let (mut t, mut f) = (Vec::new(), Vec::new());
    for (i, j) in scene.ordered_pairs() {
        for p in pool.representatives() {
            let rec = engine.record(i, j, p, (0.0, 0.0)).unwrap();
            if rec.views.is_empty() {
                continue;
            }
            if truth.holds(i, j, p) { &mut t } else { &mut f }.push(rec.s_rgb);
            // Same query, same answer.
            assert_eq!(rec, engine.record(i, j, p, (0.0, 0.0)).unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&t) > mean(&f) + 0.3);
    assert!(scene.labels.iter().any(|l| l.status == LabelStatus::Unlabeled));
}

#[test]
fn external_scorer_line_protocol() {
    let script = r#"while read line; do echo '{"score": 1.7}'; done"#;
    let scorer = ExternalScorer::spawn("sh", &["-c".into(), script.into()]).unwrap();
    let scene = generate_scene(&SceneSpec::default(), 1).unwrap();
    let (pool, null) = engine_parts(&scene);
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &scorer,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    let on = pool.get("on").unwrap();
    let (i, j) = scene
        .ordered_pairs()
        .into_iter()
        .find(|(i, j)| !engine.select(*i, *j).is_empty())
        .unwrap();
    let rec = engine.record(i, j, on, (0.0, 0.0)).unwrap();
    assert!(rec.views.iter().all(|v| v.s_rgb == 1.0));

    let broken = ExternalScorer::spawn("sh", &["-c".into(), "echo nonsense".into()]).unwrap();
    let engine = WitnessEngine::new(
        &scene,
        &pool,
        &broken,
        &null,
        WitnessParams::default(),
        ProbeParams::default(),
    )
    .unwrap();
    assert!(matches!(
        engine.record(i, j, on, (0.0, 0.0)),
        Err(WitnessError::Scorer(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn record_scores_in_unit_interval(seed in 0u64..1000, a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let scene = generate_scene(&SceneSpec::default(), seed).unwrap();
        let (pool, null) = engine_parts(&scene);
        let scorer = oracle_scorer();
        let engine = WitnessEngine::new(&scene, &pool, &scorer, &null, WitnessParams::default(), ProbeParams::default()).unwrap();
        for (i, j) in scene.ordered_pairs().into_iter().step_by(7) {
            for p in pool.representatives() {
                let rec = engine.record(i, j, p, (a, b)).unwrap();
                prop_assert!(rec.scores().iter().all(|s| s.is_finite() && (0.0..=1.0).contains(s)));
                prop_assert!(rec.views.iter().all(|v| [v.s_rgb, v.s_dep, v.rho].iter().all(|x| (0.0..=1.0).contains(x))));
            }
        }
    }
}
