use std::collections::{BTreeMap, BTreeSet, VecDeque};

use eight_core::ism::{direct_impact, impact_closure, impact_closure_traced, ChangeSet, Rule, ServiceId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn service(i: usize) -> ServiceId {
    ServiceId::new("app", format!("m{}", i / 5), format!("s{i}"))
}

/// Reachability in the digraph premise -> consequence, by breadth-first
/// search. Only valid for single-premise rules.
fn bfs_reach(start: &ChangeSet, rules: &[Rule]) -> ChangeSet {
    let mut edges: BTreeMap<&ServiceId, Vec<&ServiceId>> = BTreeMap::new();
    for r in rules {
        assert_eq!(r.premise.len(), 1);
        let from = r.premise.iter().next().unwrap();
        edges.entry(from).or_default().extend(r.consequence.iter());
    }
    let mut seen: ChangeSet = start.clone();
    let mut queue: VecDeque<&ServiceId> = start.iter().collect();
    while let Some(s) = queue.pop_front() {
        for next in edges.get(s).into_iter().flatten() {
            if seen.insert((*next).clone()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

fn random_single_premise(rng: &mut ChaCha8Rng) -> (usize, Vec<Rule>, ChangeSet) {
    let n = rng.gen_range(1..=50);
    let rule_count = rng.gen_range(0..=200);
    let rules = (0..rule_count)
        .map(|_| {
            let from = service(rng.gen_range(0..n));
            let to: Vec<_> = (0..rng.gen_range(1..=3)).map(|_| service(rng.gen_range(0..n))).collect();
            Rule::new([from], to)
        })
        .collect();
    let changes = (0..rng.gen_range(0..=4)).map(|_| service(rng.gen_range(0..n))).collect();
    (n, rules, changes)
}

#[test]
fn closure_matches_bfs_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (_, rules, changes) = random_single_premise(&mut rng);
        assert_eq!(impact_closure(&changes, &rules), bfs_reach(&changes, &rules), "model #{case}");
    }
}

fn arb_model() -> impl Strategy<Value = (usize, Vec<Rule>)> {
    (1usize..=50).prop_flat_map(|n| {
        let rule = (prop::collection::btree_set(0..n, 1..=2), prop::collection::btree_set(0..n, 1..=3))
            .prop_map(|(p, c)| Rule::new(p.into_iter().map(service), c.into_iter().map(service)));
        (Just(n), prop::collection::vec(rule, 0..=200))
    })
}

fn arb_subset(n: usize) -> impl Strategy<Value = ChangeSet> {
    prop::collection::btree_set(0..n, 0..=6).prop_map(|s| s.into_iter().map(service).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fixpoint_laws(
        ((n, rules), c1, extra, keep) in arb_model().prop_flat_map(|(n, rules)| {
            let len = rules.len();
            (Just((n, rules)), arb_subset(n), arb_subset(n), prop::collection::vec(any::<bool>(), len))
        })
    ) {
        let closed = impact_closure_traced(&c1, &rules);

        // extensivity
        prop_assert!(c1.is_subset(&closed.services));
        // fixpoint and idempotence
        prop_assert!(direct_impact(&closed.services, &rules).is_empty());
        prop_assert_eq!(impact_closure(&closed.services, &rules), closed.services.clone());
        // termination bound
        prop_assert!(closed.services.len() <= n.max(c1.len()));
        prop_assert!(closed.iterations <= n);

        // monotone in the change set
        let c2: ChangeSet = c1.union(&extra).cloned().collect();
        prop_assert!(closed.services.is_subset(&impact_closure(&c2, &rules)));

        // monotone in the rule set
        let fewer: Vec<Rule> = rules.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.clone()).collect();
        prop_assert!(impact_closure(&c1, &fewer).is_subset(&closed.services));
    }
}

#[test]
fn empty_inputs() {
    assert!(impact_closure(&BTreeSet::new(), &[]).is_empty());
    let c: ChangeSet = [service(0)].into_iter().collect();
    assert_eq!(impact_closure(&c, &[]), c);
}
