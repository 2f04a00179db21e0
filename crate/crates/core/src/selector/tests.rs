use super::*;
use crate::gateway::{Completion, FnGateway, LlmGateway, TokenLogprob};
use crate::tree::fixtures::toy_tree;
use crate::tree::TreeBuilder;
use crate::{gateway::ChatRequest, tree::RelationTree};

fn inst(gold: &str) -> Instance {
    Instance {
        id: "i1".into(),
        context: vec!["Alice married Bob in Paris.".into(), "Bob founded Acme.".into()],
        head: "Alice".into(),
        tail: "Acme".into(),
        gold: Some(gold.into()),
        bag_id: None,
    }
}

fn named(tree: &RelationTree, names: &[&str]) -> Vec<NodeId> {
    names
        .iter()
        .map(|n| tree.nodes().iter().find(|x| x.name == *n).unwrap().id)
        .collect()
}

fn set(tree: &RelationTree, names: &[&str], origin: Origin) -> OptionSet {
    OptionSet::new(tree, named(tree, names), origin).unwrap()
}

#[test]
fn option_set_invariants() {
    let t = toy_tree();
    assert!(OptionSet::new(&t, vec![], Origin::Base).is_err());
    let x = named(&t, &["X"])[0];
    assert!(OptionSet::new(&t, vec![x, x], Origin::Base).is_err());
    assert!(OptionSet::new(&t, vec![NodeId(99)], Origin::Base).is_err());
    let s = set(&t, &["X", "Y"], Origin::View(3));
    assert_eq!(s.find_name(" y "), Some(named(&t, &["Y"])[0]));
    assert_eq!(serde_json::to_value(s.origin).unwrap(), "v3");
    assert_eq!("v2".parse::<Origin>().unwrap(), Origin::View(2));
    assert!("v0".parse::<Origin>().is_err());
}

#[test]
fn option_hash_is_stable() {
    let h = option_hash(&["X", "Y"]);
    assert_eq!(h.len(), 16);
    assert_eq!(h, option_hash(&[String::from("X"), String::from("Y")]));
    assert_ne!(h, option_hash(&["Y", "X"]));
    assert_ne!(option_hash(&["ab", "c"]), option_hash(&["a", "bc"]));
}

#[test]
fn render_numbered_and_deterministic() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    let tpl = SelectorTemplate::default();
    let a = render_prompt(&inst("r1"), &s, &tpl, None);
    assert!(a.contains("Alice") && a.contains("Acme"));
    assert!(a.contains("1. r1\n2. r2\n3. r3"));
    assert!(!a.contains("4. "));
    assert_eq!(a, render_prompt(&inst("r1"), &s, &tpl, None));
}

#[test]
fn template_needs_all_slots() {
    assert!(SelectorTemplate::new("{context} {head} {tail}").is_err());
    let t = SelectorTemplate::new("{head}|{tail}|{options}|{context}").unwrap();
    let tree = toy_tree();
    let s = set(&tree, &["X"], Origin::Base);
    let p = render_prompt(&inst("r1"), &s, &t, None);
    assert!(p.starts_with("Alice|Acme|1. X|Document 1: Alice married"));
}

#[test]
fn truncation_cuts_context_tail_only() {
    let tree = toy_tree();
    let s = set(&tree, &["r1", "r2"], Origin::Base);
    let tpl = SelectorTemplate::default();
    let mut i = inst("r1");
    i.context = vec!["word ".repeat(500)];
    let full = render_prompt(&i, &s, &tpl, None);
    let cut = render_prompt(&i, &s, &tpl, Some(150));
    assert!(approx_token_count(&cut) <= 150);
    assert!(approx_token_count(&full) > 500);
    assert!(cut.contains("Head entity: Alice") && cut.contains("Tail entity: Acme") && cut.contains("2. r2"));
    assert!(cut.contains("Document 1: word word"));
}

#[test]
fn full_schema_options_dominate_prompt() {
    let mut b = TreeBuilder::new(2);
    let root = b.root();
    for i in 0..277 {
        b.leaf(root, &format!("relation type number {i}"), "");
    }
    let t = b.build().unwrap();
    let all: Vec<NodeId> = t.direct_children(t.root()).to_vec();
    let big = OptionSet::new(&t, all.clone(), Origin::Base).unwrap();
    let small = OptionSet::new(&t, all[..6].to_vec(), Origin::Base).unwrap();
    let tpl = SelectorTemplate::default();
    let nb = approx_token_count(&render_prompt(&inst("x"), &big, &tpl, None));
    let ns = approx_token_count(&render_prompt(&inst("x"), &small, &tpl, None));
    let option_block = approx_token_count(&render_options(&big));
    assert!(option_block * 2 > nb, "{option_block} of {nb}");
    assert!(nb > 10 * ns, "{nb} vs {ns}");
}

#[test]
fn rank_defaults() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    let ids = s.ids.clone();
    let sc = rank_default_scores(&s, &[ids[2], ids[0]]);
    assert_eq!(sc, vec![0.3, 0.09999999999999998, 0.6]);
    let sc = rank_default_scores(&s, &[ids[1]]);
    assert!((sc[1] - 0.6).abs() < 1e-12 && (sc[0] - 0.2).abs() < 1e-12);
    let two = set(&t, &["r1", "r2"], Origin::Base);
    let sc = rank_default_scores(&two, &two.ids);
    assert!((sc[0] - 2.0 / 3.0).abs() < 1e-12);
    let sel = Selection::from_ranked(&two, &two.ids, Usage::default());
    assert!(sel.synthetic_confidence);
    sel.check(&two, 2).unwrap();
}

#[test]
fn fn_selector_singleton_has_no_suboptimal() {
    let t = toy_tree();
    let s = set(&t, &["NA"], Origin::Base);
    let sel = FnSelector::new(|r: &SelectRequest<'_>| Ok(r.options.ids.clone()));
    let i = inst("NA");
    let out = sel
        .select(&SelectRequest {
            instance: &i,
            options: &s,
            want: 2,
            level: 2,
            call_index: 0,
        })
        .unwrap();
    assert_eq!(out.best, s.ids[0]);
    assert_eq!(out.suboptimal, None);
}

fn req<'a>(i: &'a Instance, s: &'a OptionSet, want: usize, call_index: usize) -> SelectRequest<'a> {
    SelectRequest {
        instance: i,
        options: s,
        want,
        level: 1,
        call_index,
    }
}

#[test]
fn scripted_lookup() {
    let t = toy_tree();
    let s = set(&t, &["X", "Y"], Origin::Base);
    let script = format!(
        "{}\n\n{}\n",
        serde_json::json!({"instance_id": "i1", "option_hash": s.hash(), "best": "y", "suboptimal": "X"}),
        serde_json::json!({"instance_id": "i1", "options": ["X", "Y"], "origin": "v1", "best": "X"}),
    );
    let sel = ScriptedSelector::from_json(script.as_bytes()).unwrap();
    let i = inst("r1");
    let out = sel.select(&req(&i, &s, 2, 0)).unwrap();
    assert_eq!(out.ranked(), named(&t, &["Y", "X"]));
    assert!(out.per_option_scores.is_none());
    assert!(out.usage.input_tokens > 0);
    let v1 = set(&t, &["X", "Y"], Origin::View(1));
    assert_eq!(sel.select(&req(&i, &v1, 1, 1)).unwrap().best, named(&t, &["X"])[0]);
    let other = set(&t, &["r1", "r2"], Origin::Base);
    assert!(matches!(sel.select(&req(&i, &other, 1, 2)), Err(Error::Backend(_))));
    let mut i2 = inst("r1");
    i2.id = "i2".into();
    assert!(sel.select(&req(&i2, &s, 1, 0)).is_err());
}

#[test]
fn scripted_scores_normalized() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2"], Origin::Base);
    let sel = ScriptedSelector::new(vec![ScriptEntry {
        instance_id: "i1".into(),
        option_hash: None,
        options: Some(vec!["r1".into(), "r2".into()]),
        origin: None,
        best: "r1".into(),
        suboptimal: Some("r2".into()),
        further: vec![],
        scores: Some([("r1".to_string(), 8.0), ("r2".to_string(), 2.0)].into()),
    }])
    .unwrap();
    let out = sel.select(&req(&inst("r1"), &s, 2, 0)).unwrap();
    assert_eq!(out.per_option_scores, Some(vec![0.8, 0.2]));
    assert_eq!(out.confidence_best, 0.8);
    assert!(!out.synthetic_confidence);
}

#[test]
fn synthetic_perfect_always_gold() {
    let t = toy_tree();
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(1.0, 1.0), 7).unwrap();
    let sets = [
        set(&t, &["valid relations", "no valid relation"], Origin::Base),
        set(&t, &["X", "Y"], Origin::Base),
        set(&t, &["r1", "r2", "Y"], Origin::View(1)),
    ];
    let gold = [named(&t, &["valid relations"])[0], named(&t, &["X"])[0], named(&t, &["r2"])[0]];
    let i = inst("r2");
    for call in 0..1000 {
        for (s, g) in sets.iter().zip(gold) {
            assert_eq!(sel.select(&req(&i, s, 2, call)).unwrap().best, g);
        }
    }
}

#[test]
fn synthetic_rates_and_determinism() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    let sel = SyntheticSelector::new(&t, AccuracyTable::uniform(0.7, 0.9), 11).unwrap();
    let i = inst("r2");
    let r2 = named(&t, &["r2"])[0];
    let n = 5000;
    let hits = (0..n).filter(|c| sel.select(&req(&i, &s, 2, *c)).unwrap().best == r2).count();
    let rate = hits as f64 / n as f64;
    assert!((rate - 0.7).abs() < 0.03, "{rate}");
    let v = OptionSet { origin: Origin::View(2), ..s.clone() };
    let hits = (0..n).filter(|c| sel.select(&req(&i, &v, 1, *c)).unwrap().best == r2).count();
    assert!((hits as f64 / n as f64 - 0.9).abs() < 0.03);
    let again = SyntheticSelector::new(&t, AccuracyTable::uniform(0.7, 0.9), 11).unwrap();
    for c in 0..50 {
        assert_eq!(sel.select(&req(&i, &s, 2, c)).unwrap(), again.select(&req(&i, &s, 2, c)).unwrap());
    }
}

#[test]
fn synthetic_confusion_puts_gold_second() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    let mut table = AccuracyTable::uniform(0.0, 0.0);
    table.confusion = 1.0;
    let sel = SyntheticSelector::new(&t, table, 3).unwrap();
    let i = inst("r2");
    let r2 = named(&t, &["r2"])[0];
    for c in 0..200 {
        let out = sel.select(&req(&i, &s, 3, c)).unwrap();
        assert_ne!(out.best, r2);
        assert_eq!(out.suboptimal, Some(r2));
        assert_eq!(out.ranked().len(), 3);
        out.check(&s, 3).unwrap();
    }
    assert!(SyntheticSelector::new(&t, AccuracyTable::uniform(1.5, 0.0), 0).is_err());
}

#[test]
fn synthetic_level_override() {
    let table = AccuracyTable::uniform(1.0, 1.0).with_level(2, 0.0, 0.5);
    assert_eq!(table.accuracy(2, Origin::Base), 0.0);
    assert_eq!(table.accuracy(2, Origin::View(3)), 0.5);
    assert_eq!(table.accuracy(1, Origin::Base), 1.0);
}

#[test]
fn llm_parses_ranked_answers_case_insensitively() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    assert_eq!(parse_ranked("1st: R2; 2nd: r1", &s, 2).unwrap(), named(&t, &["r2", "r1"]));
    assert_eq!(parse_ranked("2nd: r3\n1st: \"r1\".", &s, 2).unwrap(), named(&t, &["r1", "r3"]));
    assert_eq!(parse_ranked("3. r3", &s, 1).unwrap(), named(&t, &["r3"]));
    assert!(parse_ranked("1st: r4; 2nd: r1", &s, 2).is_err());
    assert!(parse_ranked("1st: r1", &s, 2).is_err());
    assert!(parse_ranked("1st: r1; 2nd: R1", &s, 2).is_err());
}

#[test]
fn llm_selector_repairs_once() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2"], Origin::Base);
    let gw = FnGateway::new(|r: &ChatRequest| {
        Ok(if r.messages.len() == 1 {
            "1st: banana; 2nd: r1".into()
        } else {
            assert!(r.messages[2].content.contains("must be one of:\n1. r1\n2. r2"));
            "1st: r2; 2nd: r1".into()
        })
    });
    let sel = LlmSelector::new(&gw, SelectorTemplate::default(), LlmSelectorConfig::default());
    let out = sel.select(&req(&inst("r1"), &s, 2, 0)).unwrap();
    assert_eq!(out.ranked(), named(&t, &["r2", "r1"]));
    assert!(out.synthetic_confidence);
    assert!(out.usage.input_tokens > 0);

    let bad = FnGateway::new(|_: &ChatRequest| Ok("no idea".into()));
    let sel = LlmSelector::new(&bad, SelectorTemplate::default(), LlmSelectorConfig::default());
    let err = sel.select(&req(&inst("r1"), &s, 2, 0)).unwrap_err();
    assert!(matches!(err, Error::RepairExhausted { attempts: 2, .. }));
}

struct LogprobGateway;

impl LlmGateway for LogprobGateway {
    fn id(&self) -> &str {
        "lp"
    }
    fn complete(&self, _: &ChatRequest) -> Result<Completion> {
        let tok = |t: &str, lp: f64, top: Vec<(&str, f64)>| TokenLogprob {
            token: t.into(),
            logprob: lp,
            top: top.into_iter().map(|(a, b)| (a.to_string(), b)).collect(),
        };
        Ok(Completion {
            text: "1st: beta; 2nd: alpha".into(),
            usage: Usage {
                input_tokens: 10,
                output_tokens: 6,
            },
            logprobs: Some(vec![
                tok("1st", 0.0, vec![]),
                tok(":", 0.0, vec![]),
                tok(" beta", (0.6f64).ln(), vec![(" beta", (0.6f64).ln()), (" al", (0.3f64).ln()), (" zzz", (0.1f64).ln())]),
                tok(";", 0.0, vec![]),
            ]),
        })
    }
}

#[test]
fn llm_scores_from_first_answer_token() {
    let mut b = TreeBuilder::new(2);
    let root = b.root();
    for n in ["alpha", "beta", "gamma"] {
        b.leaf(root, n, "");
    }
    let t = b.build().unwrap();
    let s = OptionSet::new(&t, t.direct_children(t.root()).to_vec(), Origin::Base).unwrap();
    let sel = LlmSelector::new(LogprobGateway, SelectorTemplate::default(), LlmSelectorConfig::default());
    let out = sel.select(&req(&inst("alpha"), &s, 2, 0)).unwrap();
    let sc = out.per_option_scores.clone().unwrap();
    assert!((sc[0] - 1.0 / 3.0).abs() < 1e-9 && (sc[1] - 2.0 / 3.0).abs() < 1e-9 && sc[2] == 0.0, "{sc:?}");
    assert!(!out.synthetic_confidence);
    assert_eq!(out.usage.total(), 16);
}

#[test]
fn metered_selector_records_each_call() {
    let t = toy_tree();
    let s = set(&t, &["r1", "r2", "r3"], Origin::Base);
    let inner = SyntheticSelector::new(&t, AccuracyTable::uniform(0.5, 0.5), 1).unwrap();
    let ledger = UsageLedger::new();
    let m = MeteredSelector::new(&inner, &ledger);
    let i = inst("r1");
    let mut sum = 0;
    for c in 0..10 {
        sum += m.select(&req(&i, &s, 2, c)).unwrap().usage.total();
    }
    assert_eq!(ledger.calls(), 10);
    assert_eq!(ledger.totals().total(), sum);
    assert!(ledger.records().iter().all(|r| r.purpose == "base"));
}
