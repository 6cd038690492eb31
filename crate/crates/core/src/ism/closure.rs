use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use super::{ChangeSet, Rule, ServiceId};

/// First-hop consequences of `changes`: services named by a rule whose
/// whole premise has changed, minus what has already changed.
pub fn direct_impact(changes: &ChangeSet, rules: &[Rule]) -> ChangeSet {
    rules
        .iter()
        .filter(|r| r.premise.is_subset(changes))
        .flat_map(|r| r.consequence.iter())
        .filter(|s| !changes.contains(*s))
        .cloned()
        .collect()
}

/// Result of [`impact_closure_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Closure {
    pub services: ChangeSet,
    /// Services taken off the worklist; equals `services.len()`.
    pub iterations: usize,
}

/// Least fixpoint of `direct_impact` containing `changes`.
pub fn impact_closure(changes: &ChangeSet, rules: &[Rule]) -> ChangeSet {
    impact_closure_traced(changes, rules).services
}

/// [`impact_closure`] plus the worklist iteration count.
///
/// Forward chaining: each rule keeps a count of premise services not yet
/// changed and fires when it reaches zero. Every service enters the
/// worklist at most once, so the run is linear in the total rule size.
pub fn impact_closure_traced(changes: &ChangeSet, rules: &[Rule]) -> Closure {
    let mut waiting: Vec<usize> = rules.iter().map(|r| r.premise.len()).collect();
    let mut by_premise: BTreeMap<&ServiceId, Vec<usize>> = BTreeMap::new();
    for (i, r) in rules.iter().enumerate() {
        for s in &r.premise {
            by_premise.entry(s).or_default().push(i);
        }
    }

    let mut result: BTreeSet<ServiceId> = changes.clone();
    let mut queue: VecDeque<ServiceId> = changes.iter().cloned().collect();

    let fire = |i: usize, result: &mut BTreeSet<ServiceId>, queue: &mut VecDeque<ServiceId>| {
        for c in &rules[i].consequence {
            if result.insert(c.clone()) {
                queue.push_back(c.clone());
            }
        }
    };

    // A rule with an empty premise holds unconditionally.
    for i in (0..rules.len()).filter(|&i| waiting[i] == 0) {
        fire(i, &mut result, &mut queue);
    }

    let mut iterations = 0;
    while let Some(s) = queue.pop_front() {
        iterations += 1;
        if let Some(fired) = by_premise.get(&s) {
            for &i in fired {
                waiting[i] -= 1;
                if waiting[i] == 0 {
                    fire(i, &mut result, &mut queue);
                }
            }
        }
    }
    Closure { services: result, iterations }
}

/// The services that changed. Identity on the set representation; kept as a
/// named step so `scope(impact_closure(..))` reads like the definition.
pub fn scope(changes: &ChangeSet) -> BTreeSet<ServiceId> {
    changes.clone()
}
