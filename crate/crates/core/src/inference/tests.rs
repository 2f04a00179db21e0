use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::selector::{AccuracyTable, FnSelector, ScriptEntry, ScriptedSelector, SyntheticSelector};
use crate::tree::fixtures::toy_tree;
use crate::tree::{TreeBuilder, NA_NODE_NAME, VALID_NODE_NAME};

fn inst(id: &str, gold: &str) -> Instance {
    Instance {
        id: id.into(),
        context: vec!["some text".into()],
        head: "h".into(),
        tail: "t".into(),
        gold: Some(gold.into()),
        bag_id: None,
    }
}

fn id(tree: &RelationTree, name: &str) -> NodeId {
    tree.nodes().iter().find(|n| n.name == name).unwrap().id
}

fn ids(tree: &RelationTree, names: &[&str]) -> Vec<NodeId> {
    names.iter().map(|n| id(tree, n)).collect()
}

fn names(tree: &RelationTree, set: &OptionSet) -> Vec<String> {
    set.ids.iter().map(|i| tree.name(*i).to_string()).collect()
}

/// root → {A→{a1,a2}, B→{b1}, C}
fn abc() -> RelationTree {
    let mut b = TreeBuilder::new(3);
    let root = b.root();
    let a = b.intermediate(root, "A", "");
    let bb = b.intermediate(root, "B", "");
    b.leaf(root, "C", "");
    b.leaf(a, "a1", "");
    b.leaf(a, "a2", "");
    b.leaf(bb, "b1", "");
    b.build().unwrap()
}

#[test]
fn config_plan_and_validation() {
    let cfg = PtvConfig::default();
    assert_eq!(cfg.plan(5), (2, 3, 2));
    assert_eq!(cfg.plan(2), (2, 3, 2));
    let k1 = PtvConfig { k: 1, ..cfg.clone() };
    assert_eq!(k1.plan(4), (1, 1, 1));
    let k4 = PtvConfig { k: 4, ..cfg.clone() };
    assert_eq!(k4.plan(10), (4, 5, 3));
    assert_eq!(k4.plan(3), (3, 4, 3));
    assert_eq!(k4.plan(2), (2, 3, 2));
    assert!(PtvConfig { max_rounds: 0, ..cfg.clone() }.validate().is_err());
    assert!(PtvConfig { k: 0, ..cfg.clone() }.validate().is_err());
    assert!(PtvConfig { alignment_threshold: 4, ..cfg.clone() }.validate().is_err());
    assert!(PtvConfig { alignment_threshold: 0, ..cfg }.validate().is_err());
}

#[test]
fn verification_sets_splice_in_place() {
    let t = abc();
    let opts = OptionSet::new(&t, ids(&t, &["A", "B", "C"]), Origin::Base).unwrap();
    let (v1, v2, v3) = build_verification_sets(&t, &opts, id(&t, "A"), id(&t, "B")).unwrap();
    assert_eq!(names(&t, &v1), ["a1", "a2", "B", "C"]);
    assert_eq!(names(&t, &v2), ["A", "b1", "C"]);
    assert_eq!(names(&t, &v3), ["a1", "a2", "b1", "C"]);
    assert_eq!((v1.origin, v2.origin, v3.origin), (Origin::View(1), Origin::View(2), Origin::View(3)));
    let (v1, _, v3) = build_verification_sets(&t, &opts, id(&t, "B"), id(&t, "A")).unwrap();
    assert_eq!(names(&t, &v1), ["A", "b1", "C"]);
    assert_eq!(names(&t, &v3), ["a1", "a2", "b1", "C"]);
    assert!(build_verification_sets(&t, &opts, id(&t, "A"), id(&t, "A")).is_err());
    assert!(build_verification_sets(&t, &opts, id(&t, "A"), id(&t, "a1")).is_err());
}

#[test]
fn verification_sets_degenerate_for_leaves() {
    let t = abc();
    let leaves = OptionSet::new(&t, ids(&t, &["a1", "a2"]), Origin::Base).unwrap();
    let (v1, v2, v3) = build_verification_sets(&t, &leaves, id(&t, "a1"), id(&t, "a2")).unwrap();
    for v in [&v1, &v2, &v3] {
        assert_eq!(v.ids, leaves.ids);
    }
    let opts = OptionSet::new(&t, ids(&t, &["A", "B", "C"]), Origin::Base).unwrap();
    let (_, v2, _) = build_verification_sets(&t, &opts, id(&t, "A"), id(&t, "C")).unwrap();
    assert_eq!(v2.ids, opts.ids);
}

#[test]
fn alignment_votes() {
    let t = abc();
    let (a, a1, b1, c) = (id(&t, "A"), id(&t, "a1"), id(&t, "b1"), id(&t, "C"));
    assert!(aligned(&t, a1, a, ViewRole::Best));
    assert!(!aligned(&t, a, a, ViewRole::Best));
    assert!(aligned(&t, a, a, ViewRole::Other));
    assert!(!aligned(&t, c, a, ViewRole::Other));
    assert!(!aligned(&t, b1, a, ViewRole::All));
    assert!(aligned(&t, a1, a, ViewRole::All));
    for role in [ViewRole::Best, ViewRole::Other, ViewRole::All] {
        assert!(aligned(&t, c, c, role));
        assert!(!aligned(&t, a1, c, role));
    }
}

/// Answers keyed on (origin, option names) with ranked names.
fn table_selector<'t>(tree: &'t RelationTree, rules: &[(&str, &[&str], &[&str])]) -> impl Selector + 't {
    let map: HashMap<(String, Vec<String>), Vec<String>> = rules
        .iter()
        .map(|(o, opts, ans)| {
            (
                (o.to_string(), opts.iter().map(|s| s.to_string()).collect()),
                ans.iter().map(|s| s.to_string()).collect(),
            )
        })
        .collect();
    FnSelector::new(move |r: &SelectRequest<'_>| {
        let key = (r.options.origin.to_string(), r.options.names.clone());
        let ans = map
            .get(&key)
            .ok_or_else(|| Error::backend(format!("no rule for {key:?}")))?;
        Ok(ans.iter().map(|n| id(tree, n)).collect())
    })
}

/// root → {P→{p1,p2}, Q→{q1,q2}, R→{r1}}
fn pqr() -> RelationTree {
    let mut b = TreeBuilder::new(3);
    let root = b.root();
    for (g, kids) in [("P", &["p1", "p2"][..]), ("Q", &["q1", "q2"]), ("R", &["r1"])] {
        let n = b.intermediate(root, g, "");
        for k in kids {
            b.leaf(n, k, "");
        }
    }
    b.build().unwrap()
}

fn level_for<S: Selector>(tree: &RelationTree, sel: &S, cfg: &PtvConfig) -> LevelRecord {
    let i = inst("x", "p1");
    let mut c = Caller::new(sel, &i);
    ptv_level(tree, tree.root(), &mut c, cfg).unwrap()
}

#[test]
fn ptv_accepts_in_round_one() {
    let t = pqr();
    let sel = table_selector(
        &t,
        &[
            ("base", &["P", "Q", "R"], &["P", "Q"]),
            ("v1", &["p1", "p2", "Q", "R"], &["p2"]),
            ("v2", &["P", "q1", "q2", "R"], &["P"]),
            ("v3", &["p1", "p2", "q1", "q2", "R"], &["q1"]),
        ],
    );
    let lv = level_for(&t, &sel, &PtvConfig::default());
    assert_eq!(lv.chosen, id(&t, "P"));
    assert_eq!(lv.rounds.len(), 1);
    let r = &lv.rounds[0];
    assert_eq!((r.votes, r.threshold, r.outcome), (2, 2, RoundOutcome::Accept));
    assert_eq!(r.views.iter().map(|v| v.vote).collect::<Vec<_>>(), [true, true, false]);
    assert!((lv.confidence - 0.6).abs() < 1e-12);
}

#[test]
fn ptv_rejects_then_accepts() {
    let t = pqr();
    let sel = table_selector(
        &t,
        &[
            ("base", &["P", "Q", "R"], &["P", "Q"]),
            ("v1", &["p1", "p2", "Q", "R"], &["Q"]),
            ("v2", &["P", "q1", "q2", "R"], &["q1"]),
            ("v3", &["p1", "p2", "q1", "q2", "R"], &["q2"]),
            ("base", &["Q", "R"], &["Q", "R"]),
            ("v1", &["q1", "q2", "R"], &["q1"]),
            ("v2", &["Q", "r1"], &["Q"]),
            ("v3", &["q1", "q2", "r1"], &["r1"]),
        ],
    );
    let lv = level_for(&t, &sel, &PtvConfig::default());
    assert_eq!(lv.chosen, id(&t, "Q"));
    let outcomes: Vec<_> = lv.rounds.iter().map(|r| (r.votes, r.outcome)).collect();
    assert_eq!(outcomes, [(0, RoundOutcome::Reject), (2, RoundOutcome::Accept)]);
    assert!(!lv.rounds[1].options.contains(id(&t, "P")));
}

#[test]
fn ptv_fallback_takes_last_best() {
    let t = pqr();
    let rules: [(&str, &[&str], &[&str]); 4] = [
        ("base", &["P", "Q", "R"], &["P", "Q"]),
        ("v1", &["p1", "p2", "Q", "R"], &["Q"]),
        ("v2", &["P", "q1", "q2", "R"], &["q1"]),
        ("v3", &["p1", "p2", "q1", "q2", "R"], &["q2"]),
    ];
    let sel = table_selector(&t, &rules);
    let lv = level_for(&t, &sel, &PtvConfig { max_rounds: 1, ..Default::default() });
    assert_eq!(lv.chosen, id(&t, "P"));
    assert_eq!(lv.rounds.len(), 1);
    assert_eq!(lv.rounds[0].outcome, RoundOutcome::Fallback);
    assert!(!lv.forced);
}

#[test]
fn ptv_forced_after_rejects_down_to_one() {
    let t = pqr();
    let sel = table_selector(
        &t,
        &[
            ("base", &["P", "Q", "R"], &["P", "Q"]),
            ("v1", &["p1", "p2", "Q", "R"], &["R"]),
            ("v2", &["P", "q1", "q2", "R"], &["R"]),
            ("v3", &["p1", "p2", "q1", "q2", "R"], &["R"]),
            ("base", &["Q", "R"], &["Q", "R"]),
            ("v1", &["q1", "q2", "R"], &["R"]),
            ("v2", &["Q", "r1"], &["r1"]),
            ("v3", &["q1", "q2", "r1"], &["r1"]),
        ],
    );
    let lv = level_for(&t, &sel, &PtvConfig::default());
    assert_eq!(lv.chosen, id(&t, "R"));
    assert!(lv.forced);
    assert_eq!(lv.rounds.len(), 2);
    assert!((lv.confidence - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn plain_walk_follows_script() {
    let t = toy_tree();
    let sel = table_selector(
        &t,
        &[
            ("base", &[VALID_NODE_NAME, NA_NODE_NAME], &[VALID_NODE_NAME]),
            ("base", &["X", "Y"], &["X"]),
            ("base", &["r1", "r2"], &["r2"]),
        ],
    );
    let tr = classify_plain(&inst("a", "r2"), &t, &sel).unwrap();
    assert_eq!(tr.final_relation, "r2");
    assert_eq!(tr.calls, 3);
    assert!(tr.levels.iter().all(|l| l.rounds.is_empty() && l.selection.is_some()));
    assert!((tr.confidence - 0.6f64.powi(3)).abs() < 1e-12);
    tr.check(&t).unwrap();
}

#[test]
fn level_one_error_propagates_to_na() {
    let t = toy_tree();
    let sel = table_selector(&t, &[("base", &[VALID_NODE_NAME, NA_NODE_NAME], &[NA_NODE_NAME])]);
    let tr = classify_plain(&inst("a", "r2"), &t, &sel).unwrap();
    assert_eq!(tr.final_relation, "NA");
    assert_eq!(tr.calls, 1);
    assert!(tr.levels[1].forced);
}

#[test]
fn selector_error_carries_node_path() {
    let t = toy_tree();
    let sel = table_selector(&t, &[("base", &[VALID_NODE_NAME, NA_NODE_NAME], &[VALID_NODE_NAME])]);
    let err = classify_plain(&inst("a", "r2"), &t, &sel).unwrap_err();
    assert!(err.to_string().contains("root/valid relations"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn perfect_backend_ptv_matches_plain() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(1.0, 1.0), 5).unwrap();
    for gold in ["r1", "r2", "r3", "NA"] {
        let i = inst(gold, gold);
        let plain = classify_plain(&i, &t, &sel).unwrap();
        let ptv = classify_ptv(&i, &t, &sel, &PtvConfig::default()).unwrap();
        assert_eq!(plain.final_relation, gold);
        assert_eq!(ptv.final_relation, gold);
        let chosen = |tr: &InferenceTrace| tr.levels.iter().map(|l| l.chosen).collect::<Vec<_>>();
        assert_eq!(chosen(&plain), chosen(&ptv));
        assert!(ptv.calls >= plain.calls);
        ptv.check(&t).unwrap();
    }
}

#[test]
fn ptv_calls_per_round() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(1.0, 1.0), 5).unwrap();
    let tr = classify_ptv(&inst("a", "r1"), &t, &sel, &PtvConfig::default()).unwrap();
    assert_eq!(tr.calls, 12);
    let k1 = classify_ptv(&inst("a", "r1"), &t, &sel, &PtvConfig { k: 1, ..Default::default() }).unwrap();
    assert_eq!(k1.calls, 6);
}

#[test]
fn scores_multiply_along_paths() {
    let mut b = TreeBuilder::new(3);
    let root = b.root();
    let v = b.intermediate(root, VALID_NODE_NAME, "");
    let n = b.intermediate(root, NA_NODE_NAME, "");
    b.leaf(v, "r1", "");
    b.leaf(v, "r2", "");
    b.leaf(n, "NA", "");
    let t = b.build().unwrap();
    let entry = |opts: &[&str], s: [f64; 2]| ScriptEntry {
        instance_id: "a".into(),
        option_hash: None,
        options: Some(opts.iter().map(|x| x.to_string()).collect()),
        origin: None,
        best: opts[0].into(),
        suboptimal: None,
        further: vec![],
        scores: Some([(opts[0].to_string(), s[0]), (opts[1].to_string(), s[1])].into()),
    };
    let sel = ScriptedSelector::new(vec![
        entry(&[VALID_NODE_NAME, NA_NODE_NAME], [0.8, 0.2]),
        entry(&["r1", "r2"], [0.6, 0.4]),
    ])
    .unwrap();
    let d = score_distribution(&inst("a", "r1"), &t, &sel).unwrap();
    assert_eq!(d.calls, 2);
    let want = [("NA", 0.2), ("r1", 0.48), ("r2", 0.32)];
    for (k, v) in want {
        assert!((d.scores[k] - v).abs() < 1e-12, "{k}");
    }
}

#[test]
fn scores_uniform_and_multi_leaf_max() {
    let mut b = TreeBuilder::new(3);
    let root = b.root();
    let g1 = b.intermediate(root, "g1", "");
    let g2 = b.intermediate(root, "g2", "");
    b.leaf(g1, "a", "");
    b.leaf(g1, "b", "");
    b.leaf(g2, "a", "");
    b.leaf(g2, "c", "");
    let t = b.build().unwrap();
    let sel = FnSelector::new(|r: &SelectRequest<'_>| Ok(vec![r.options.ids[0]]));
    // Rank defaults: one ranked of two gives 0.6 / 0.4.
    let d = score_distribution(&inst("x", "a"), &t, &sel).unwrap();
    let raw = [("a", 0.36f64.max(0.24)), ("b", 0.24), ("c", 0.16)];
    let total: f64 = raw.iter().map(|r| r.1).sum();
    for (k, v) in raw {
        assert!((d.scores[k] - v / total).abs() < 1e-12, "{k}");
    }

    let mut flat = TreeBuilder::new(2);
    let r = flat.root();
    for n in ["a", "b", "c", "d"] {
        flat.leaf(r, n, "");
    }
    let flat = flat.build().unwrap();
    let uniform = FnSelector::new(|r: &SelectRequest<'_>| Ok(vec![r.options.ids[0], r.options.ids[1]]));
    let d = score_distribution(&inst("x", "a"), &flat, &uniform).unwrap();
    assert_eq!(d.scores.len(), 4);
    assert!((d.scores.values().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn scores_need_per_option_scores() {
    let t = toy_tree();
    let sel = ScriptedSelector::new(vec![ScriptEntry {
        instance_id: "a".into(),
        option_hash: None,
        options: Some(vec![VALID_NODE_NAME.into(), NA_NODE_NAME.into()]),
        origin: None,
        best: VALID_NODE_NAME.into(),
        suboptimal: None,
        further: vec![],
        scores: None,
    }])
    .unwrap();
    let err = score_distribution(&inst("a", "r1"), &t, &sel).unwrap_err();
    assert!(matches!(err, Error::Capability(_)));
}

fn dataset(n: usize) -> Vec<Instance> {
    let golds = ["r1", "r2", "r3", "NA"];
    (0..n).map(|i| inst(&format!("i{i:03}"), golds[i % 4])).collect()
}

#[test]
fn run_is_order_and_concurrency_independent() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(0.6, 0.8), 9).unwrap();
    let data = dataset(60);
    let mut cfg = RunConfig {
        concurrency: 1,
        scores: true,
        ..Default::default()
    };
    let one = run_dataset(&data, &t, &sel, &cfg).unwrap();
    cfg.concurrency = 6;
    let six = run_dataset(&data, &t, &sel, &cfg).unwrap();
    assert_eq!(crate::eval::to_jsonl(&one.traces), crate::eval::to_jsonl(&six.traces));
    assert_eq!(one.stats.calls, one.traces.iter().map(|t| t.calls).sum::<usize>());
    assert_eq!(one.stats.calls, six.stats.calls);
    for tr in &one.traces {
        tr.check(&t).unwrap();
        tr.to_record().validate().unwrap();
    }
    assert!(one.stats.render("HCRE").contains("#LLM Calls"));
}

#[test]
fn run_skip_errors() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(1.0, 1.0), 9).unwrap();
    let mut data = dataset(4);
    data[2].gold = Some("unknown".into());
    let cfg = RunConfig::default();
    let err = run_dataset(&data, &t, &sel, &cfg).unwrap_err();
    assert!(err.to_string().contains("i002"));
    let out = run_dataset(&data, &t, &sel, &RunConfig { skip_errors: true, ..cfg }).unwrap();
    assert_eq!(out.traces.len(), 3);
    assert_eq!(out.failures[0].instance_id, "i002");
    assert_eq!(out.failures[0].exit_code, 2);
}

#[test]
fn trace_json_round_trip_and_tamper() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(0.5, 0.5), 1).unwrap();
    let tr = classify_ptv(&inst("a", "r1"), &t, &sel, &PtvConfig::default()).unwrap();
    let back: InferenceTrace = serde_json::from_str(&tr.to_json()).unwrap();
    assert_eq!(back, tr);
    let mut bad = tr.clone();
    bad.final_relation = "zzz".into();
    assert!(bad.check(&t).is_err());
    let mut bad = tr;
    bad.levels.swap(0, 1);
    assert!(bad.check(&t).is_err());
}

/// Random tree with levels 1..depth and branching up to `b`.
fn random_tree(seed: u64, depth: usize, b: usize) -> RelationTree {
    use rand::Rng;
    let mut rng = crate::rng::derive_rng(seed, &[b"tree"]);
    let mut tb = TreeBuilder::new(depth);
    let mut frontier = vec![(tb.root(), 0usize)];
    let mut rel = 0;
    while let Some((node, level)) = frontier.pop() {
        let n = rng.gen_range(1..=b);
        for _ in 0..n {
            if level + 1 == depth - 1 || rng.gen_bool(0.2) {
                tb.leaf(node, &format!("rel{rel}"), "");
                rel += 1;
            } else {
                let c = tb.intermediate(node, format!("n{rel}"), "");
                rel += 1;
                frontier.push((c, level + 1));
            }
        }
    }
    tb.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ptv_traces_keep_invariants(seed in 0u64..10_000, depth in 3usize..6, b in 2usize..5, m in 1usize..4, k in 1usize..4, base in 0.0f64..1.0, ver in 0.0f64..1.0) {
        let t = random_tree(seed, depth, b);
        let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(base, ver), seed).unwrap();
        let cfg = PtvConfig { max_rounds: m, k, ..Default::default() };
        let rels: Vec<String> = t.leaves().filter_map(|l| l.relation.clone()).collect();
        for (i, gold) in rels.iter().enumerate().take(6) {
            let inst = inst(&format!("p{i}"), gold);
            let tr = classify_ptv(&inst, &t, &sel, &cfg).unwrap();
            tr.check(&t).unwrap();
            for lv in &tr.levels {
                prop_assert!(lv.rounds.len() <= m.min(lv.options.len()));
                for r in &lv.rounds {
                    for v in &r.views {
                        prop_assert!(v.options.len() <= lv.options.len() + k * (b - 1));
                    }
                }
            }
            let again = classify_ptv(&inst, &t, &sel, &cfg).unwrap();
            prop_assert_eq!(tr.to_json(), again.to_json());
        }
    }
}
