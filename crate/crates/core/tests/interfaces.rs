use std::collections::BTreeSet;

use eight_core::interface::MethodSet;
use eight_core::{methods_of, InterfaceKind, Method};

#[test]
fn kind_and_method_counts() {
    assert_eq!(InterfaceKind::ALL.len(), 15);
    let names: BTreeSet<&str> = InterfaceKind::ALL
        .iter()
        .flat_map(|k| methods_of(*k).iter().map(Method::name))
        .collect();
    assert_eq!(names.len(), 14);
    assert_eq!(methods_of(InterfaceKind::Universal).len(), 14);
}

#[test]
fn composition_table() {
    use InterfaceKind::*;
    let union = |parts: &[InterfaceKind]| parts.iter().fold(MethodSet::EMPTY, |a, k| a | methods_of(*k));
    let table: [(InterfaceKind, &[InterfaceKind]); 5] = [
        (Resource, &[InputResource, OutputResource]),
        (ReadonlyListable, &[InputResource, Listable]),
        (ListableResource, &[Resource, Listable]),
        (TransactionResource, &[Resource, Transaction]),
        (ListableTransaction, &[ListableResource, Transaction]),
    ];
    for (kind, parts) in table {
        assert_eq!(methods_of(kind), union(parts), "{kind}");
    }
    assert_eq!(methods_of(Universal), union(&InterfaceKind::ALL));
    for k in InterfaceKind::ALL {
        assert_eq!(methods_of(k), union(k.parts()).union(if k.parts().is_empty() { methods_of(k) } else { MethodSet::EMPTY }));
    }
}

#[test]
fn method_names_from_listings() {
    let sig = |k| methods_of(k).signatures().map(|s| s.to_string()).collect::<Vec<_>>();
    assert_eq!(sig(InterfaceKind::Processor), ["process(in) -> Value"]);
    assert_eq!(sig(InterfaceKind::BiProcessor), ["perform(a, b) -> Value"]);
    assert!(methods_of(InterfaceKind::Listable).contains(Method::All));
    assert_eq!(methods_of(InterfaceKind::Thing).iter().collect::<Vec<_>>(), [Method::About]);
}
