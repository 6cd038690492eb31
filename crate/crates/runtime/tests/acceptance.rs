//! Acceptance suite. Prints one PASS or FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Run with `cargo test -p eight --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use common::{expected_count, Demo};
use eight::config::{AdapterSpec, ConnectionConfig, InstanceConfig, PortAddr};
use eight::container::{Action, LifecycleEvent};
use eight::Container;
use eight_core::interface::MethodSet;
use eight_core::ism::{
    direct_impact, impact_closure, impact_closure_traced, is_ideal_system, AppId, ChangeContext, ChangeSet, ModuleId,
    Rule, ServiceId,
};
use eight_core::{decode_value, encode_value, methods_of, InterfaceKind, KeyPath, Method, Table, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KEYWORDS: [&str; 6] = ["cat", "dog", "zzz", "", "Cat", "cat dog"];

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}


fn worked_example() -> Verdict {
    let started = Instant::now();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../demo/models/search.json");
    let model = eight::analysis::read_model(path.as_ref()).map_err(|e| e.to_string())?;
    let change = ["search.Document.self".to_string(), "search.Document.allFiles".to_string()];
    let static_scope = eight::analysis::scope_report(&model, "s".parse().unwrap(), &change).map_err(|e| e.to_string())?;
    let ops_scope = eight::analysis::scope_report(&model, "o".parse().unwrap(), &change).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();
    let want_s = set(&["search.Document".into(), "search.Search".into()]);
    let want_o = set(&[
        "search.Document".into(),
        "search.Search".into(),
        "search.Regex".into(),
        "search.UserInterface".into(),
    ]);
    ensure(set(&static_scope.modules) == want_s, || format!("s scope {:?}", static_scope.modules))?;
    ensure(set(&ops_scope.modules) == want_o, || format!("o scope {:?}", ops_scope.modules))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("s -> {:?}, o -> 4 modules, {elapsed:.2?}", static_scope.modules))
}

fn service(i: usize) -> ServiceId {
    ServiceId::new("app", format!("m{}", i / 5), format!("s{i}"))
}

fn bfs(start: &ChangeSet, rules: &[Rule]) -> ChangeSet {
    let mut edges: BTreeMap<&ServiceId, Vec<&ServiceId>> = BTreeMap::new();
    for r in rules {
        let from = r.premise.iter().next().unwrap();
        edges.entry(from).or_default().extend(r.consequence.iter());
    }
    let mut seen = start.clone();
    let mut queue: VecDeque<&ServiceId> = start.iter().collect();
    while let Some(x) = queue.pop_front() {
        for next in edges.get(x).into_iter().flatten() {
            if seen.insert((*next).clone()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

fn closure_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut matches = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=50);
        let rules: Vec<Rule> = (0..rng.gen_range(0..=200))
            .map(|_| Rule::single(service(rng.gen_range(0..n)), service(rng.gen_range(0..n))))
            .collect();
        let start: ChangeSet = (0..rng.gen_range(0..=5)).map(|_| service(rng.gen_range(0..n))).collect();
        if impact_closure(&start, &rules) == bfs(&start, &rules) {
            matches += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(matches == 100, || format!("{matches}/100 matched"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("100/100 matched BFS reachability in {elapsed:.2?}"))
}

fn fixpoint_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let cases = 1000;
    for case in 0..cases {
        let n = rng.gen_range(1..=50);
        let pick = |rng: &mut ChaCha8Rng, lo, hi| -> ChangeSet {
            (0..rng.gen_range(lo..=hi)).map(|_| service(rng.gen_range(0..n))).collect()
        };
        let rules: Vec<Rule> = (0..rng.gen_range(0..=200))
            .map(|_| {
                let p = pick(&mut rng, 1, 2);
                let c = pick(&mut rng, 1, 3);
                Rule::new(p, c)
            })
            .collect();
        let c1 = pick(&mut rng, 0, 6);
        let extra = pick(&mut rng, 0, 6);
        let closed = impact_closure_traced(&c1, &rules);
        let fail = |law: &str| format!("case {case}: {law}");
        ensure(c1.is_subset(&closed.services), || fail("extensivity"))?;
        ensure(direct_impact(&closed.services, &rules).is_empty(), || fail("fixpoint"))?;
        ensure(impact_closure(&closed.services, &rules) == closed.services, || fail("idempotence"))?;
        ensure(closed.iterations <= n && closed.services.len() <= n.max(c1.len()), || fail("termination bound"))?;
        let c2: ChangeSet = c1.union(&extra).cloned().collect();
        ensure(closed.services.is_subset(&impact_closure(&c2, &rules)), || fail("monotone in changes"))?;
        let fewer: Vec<Rule> = rules.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        ensure(impact_closure(&c1, &fewer).is_subset(&closed.services), || fail("monotone in rules"))?;
    }
    Ok(format!("{cases} cases: extensive, idempotent, monotone in both arguments, bounded"))
}

fn ideal_certification() -> Verdict {
    let demo = Demo::boot();
    let x: ChangeContext = "s".parse().unwrap();
    let mut model = demo.container.export_ism_model(x);
    let apps: Vec<AppId> = model.apps().collect();
    ensure(!apps.is_empty(), || "empty export".into())?;
    for a in &apps {
        ensure(is_ideal_system(&model, a).unwrap(), || format!("{a} not ideal"))?;
    }
    let runtime = AppId::new(eight::container::RUNTIME_APP);
    let from = ModuleId::new(eight::container::RUNTIME_APP, "documents").self_service();
    let to = ModuleId::new(eight::container::RUNTIME_APP, "search").self_service();
    model.add_rule(x, Rule::single(from, to)).map_err(|e| e.to_string())?;
    ensure(!is_ideal_system(&model, &runtime).unwrap(), || "injected rule still ideal".into())?;
    Ok(format!("export of {} apps ideal; with documents.self -> search.self not ideal", apps.len()))
}

fn process(c: &Container, keyword: &str) -> eight::Result<Value> {
    c.invoke("ui", "main", Method::Process, vec![Value::from(keyword)])
}

fn ui_answer(keyword: &str) -> Value {
    Value::from(expected_count(keyword).to_string())
}

/// Load driver against `ui.process`. Each worker paces itself to
/// `per_worker` requests per second.
struct Driver {
    sent: Arc<AtomicU64>,
    failed: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    workers: Vec<std::thread::JoinHandle<Option<String>>>,
    started: Instant,
}

impl Driver {
    fn start(c: &Container, workers: usize, per_worker: f64, gate: Option<Arc<Gate>>) -> Driver {
        let sent = Arc::new(AtomicU64::new(0));
        let failed = Arc::new(AtomicU64::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let period = Duration::from_secs_f64(1.0 / per_worker);
        let workers = (0..workers)
            .map(|w| {
                let (c, sent, failed, stop, gate) = (c.clone(), sent.clone(), failed.clone(), stop.clone(), gate.clone());
                std::thread::spawn(move || {
                    let mut first_error = None;
                    let mut next = Instant::now();
                    let mut i = w;
                    while !stop.load(Ordering::SeqCst) {
                        let keyword = KEYWORDS[i % KEYWORDS.len()];
                        i += 1;
                        let guard = gate.as_ref().map(|g| g.lock.read().unwrap());
                        let result = process(&c, keyword);
                        if let (Some(g), Ok(_)) = (&gate, &result) {
                            if g.open.load(Ordering::SeqCst) {
                                g.counted.fetch_add(1, Ordering::SeqCst);
                            }
                        }
                        drop(guard);
                        sent.fetch_add(1, Ordering::SeqCst);
                        match result {
                            Ok(v) if v == ui_answer(keyword) => {}
                            other => {
                                failed.fetch_add(1, Ordering::SeqCst);
                                first_error.get_or_insert(format!("{keyword:?}: {other:?}"));
                            }
                        }
                        next += period;
                        if let Some(wait) = next.checked_duration_since(Instant::now()) {
                            std::thread::sleep(wait);
                        }
                    }
                    first_error
                })
            })
            .collect();
        Driver { sent, failed, stop, workers, started: Instant::now() }
    }

    fn wait_until(&self, n: u64) {
        while self.sent.load(Ordering::SeqCst) < n {
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// (sent, failed, requests per second, first error)
    fn finish(self) -> (u64, u64, f64, Option<String>) {
        self.stop.store(true, Ordering::SeqCst);
        let errors: Vec<_> = self.workers.into_iter().filter_map(|w| w.join().unwrap()).collect();
        let sent = self.sent.load(Ordering::SeqCst);
        let rate = sent as f64 / self.started.elapsed().as_secs_f64();
        (sent, self.failed.load(Ordering::SeqCst), rate, errors.into_iter().next())
    }
}

/// Lets the controller pause the driver between requests, so a window
/// boundary never cuts through a call.
#[derive(Default)]
struct Gate {
    lock: RwLock<()>,
    open: AtomicBool,
    counted: AtomicU64,
}

fn events_after(c: &Container, seq: u64) -> Vec<LifecycleEvent> {
    c.events().since(seq).unwrap()
}

fn zero_loss_swap() -> Verdict {
    let demo = Demo::boot();
    let c = &demo.container;
    demo.load_extra("search-2.0.0");
    let plan = demo.rebind_plan();

    let driver = Driver::start(c, 8, 125.0, None);
    driver.wait_until(1500);
    let before = c.events().last_seq();
    let handle = c.begin_swap("search", "search@2.0.0".parse().unwrap(), &plan).map_err(|e| e.to_string())?;
    let swap_events = handle.wait();
    driver.wait_until(6000);
    let (sent, failed, rate, first_error) = driver.finish();

    let log = events_after(c, before);
    let touched = ["search", "ui-finder", "search-documents"];
    let actions: Vec<Action> = log.iter().filter(|e| touched.contains(&e.subject.as_str())).map(|e| e.action).collect();
    let want = [Action::Instantiated, Action::Activated, Action::Rebound, Action::DrainStarted, Action::Released];
    let rebound = log.iter().find(|e| e.action == Action::Rebound).ok_or("no Rebound")?;
    let released = log.iter().find(|e| e.action == Action::Released).ok_or("no Released")?;
    let gap = released.time.saturating_sub(rebound.time);
    let int = |e: &LifecycleEvent, k: &str| e.detail.get(k).and_then(Value::as_int);

    ensure(sent >= 5000, || format!("only {sent} requests"))?;
    ensure(rate >= 50.0, || format!("rate {rate:.0}/s"))?;
    ensure(failed == 0, || format!("{failed} failed, first {first_error:?}"))?;
    ensure(actions == want, || format!("events {actions:?}"))?;
    ensure(swap_events.iter().map(|e| e.action).collect::<Vec<_>>() == want, || "swap handle events differ".into())?;
    ensure(int(released, "in_flight") == Some(0), || format!("released with {:?}", released.detail))?;
    ensure(released.detail.get("forced") == Some(&Value::Bool(false)), || "drain was forced".into())?;
    ensure(int(released, "generation") == int(&log[0], "replaces"), || "released the wrong generation".into())?;
    ensure(gap < 1000, || format!("rebind-to-release gap {gap} ms"))?;
    Ok(format!(
        "{sent} requests at {rate:.0}/s, 0 failed, events {actions:?}, in_flight 0 at release, gap {gap} ms, drained {} in flight",
        int(&log.iter().find(|e| e.action == Action::DrainStarted).unwrap().clone(), "in_flight").unwrap_or(-1)
    ))
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(0..8))
        .map(|_| match rng.gen_range(0..3) {
            0 => rng.gen_range('a'..='z'),
            1 => rng.gen_range('\u{80}'..='\u{7ff}'),
            _ => rng.gen_range('\u{1f300}'..='\u{1f5ff}'),
        })
        .collect()
}

fn random_scalar(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::Bool(rng.gen()),
        1 => Value::Int(rng.gen()),
        2 => Value::Float(f64::from_bits(rng.gen())),
        3 => Value::Text(random_text(rng)),
        _ => Value::Bytes((0..rng.gen_range(0..10)).map(|_| rng.gen()).collect()),
    }
}

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    if depth == 0 || rng.gen_bool(0.4) {
        return if rng.gen_bool(0.1) { Value::Null } else { random_scalar(rng) };
    }
    let width = rng.gen_range(0..4);
    match rng.gen_range(0..3) {
        0 => Value::Seq((0..width).map(|_| random_value(rng, depth - 1)).collect()),
        1 => Value::Rec((0..width).map(|_| (random_text(rng), random_value(rng, depth - 1))).collect()),
        _ => {
            let mut t = Table::new();
            for _ in 0..width {
                let parts = (0..rng.gen_range(1..3)).map(|_| random_scalar(rng)).collect();
                t.insert(KeyPath::new(parts).unwrap(), random_value(rng, depth - 1));
            }
            Value::Table(t)
        }
    }
}

fn adapter_bridge() -> Verdict {
    let demo = Demo::boot();
    let c = &demo.container;
    demo.swap_search();
    for k in KEYWORDS {
        let bridged = c.invoke_through("ui-finder", Method::Process, vec![Value::from(k)]).map_err(|e| e.to_string())?;
        let direct = c
            .invoke("search", "main", Method::Perform, vec![Value::from(k), Value::from("searchPath")])
            .map_err(|e| e.to_string())?;
        ensure(bridged == direct, || format!("{k:?}: adapter {bridged} direct {direct}"))?;
        ensure(direct == Value::Int(expected_count(k)), || format!("{k:?}: counted {direct}"))?;
    }

    demo.load_extra("echo-1.0.0");
    demo.load_extra("monitor-1.0.0");
    c.instantiate(InstanceConfig::new("echo", "echo@1.0.0".parse().unwrap(), Value::Null)).map_err(|e| e.to_string())?;
    c.instantiate(InstanceConfig::new("probe", "monitor@1.0.0".parse().unwrap(), Value::Null)).map_err(|e| e.to_string())?;
    let identity = eight::demo::file("adapters/identity.rhai").unwrap();
    c.create_connection(ConnectionConfig::new(
        "probe-echo",
        PortAddr::new("probe", "next"),
        PortAddr::new("echo", "main"),
        Some(AdapterSpec::script(identity)),
    ))
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xada);
    for i in 0..1000 {
        let v = random_value(&mut rng, 4);
        let out = c.invoke_through("probe-echo", Method::Process, vec![v.clone()]).map_err(|e| format!("value {i}: {e}"))?;
        ensure(out == v, || format!("value {i}: {v} came back as {out}"))?;
    }
    Ok(format!("{} keywords equal through the adapter; identity adapter transparent on 1000 values", KEYWORDS.len()))
}

fn generations(c: &Container) -> BTreeMap<String, u64> {
    c.instances().into_iter().map(|i| (i.id, i.generation)).collect()
}

fn peer_isolation() -> Verdict {
    let demo = Demo::boot();
    let c = &demo.container;
    demo.load_extra("search-2.0.0");
    let peers = ["ui", "documents", "formatter"];
    let before = generations(c);
    let seq = c.events().last_seq();
    c.swap_instance("search", "search@2.0.0".parse().unwrap(), &demo.rebind_plan()).map_err(|e| e.to_string())?;
    let noisy: Vec<_> = events_after(c, seq).into_iter().filter(|e| peers.contains(&e.subject.as_str())).collect();
    ensure(noisy.is_empty(), || format!("swap touched peers: {noisy:?}"))?;
    let after = generations(c);
    for p in peers {
        ensure(before[p] == after[p], || format!("{p} changed identity"))?;
    }

    let peers = ["ui", "documents", "search"];
    let before = after;
    let seq = c.events().last_seq();
    c.unload_instance("formatter").map_err(|e| e.to_string())?;
    let noisy: Vec<_> = events_after(c, seq).into_iter().filter(|e| peers.contains(&e.subject.as_str())).collect();
    ensure(noisy.is_empty(), || format!("unload touched peers: {noisy:?}"))?;
    let after = generations(c);
    for p in peers {
        ensure(before[p] == after[p], || format!("{p} changed identity"))?;
    }
    Ok("swap of search and unload of formatter: 0 peer events, peer generations unchanged".into())
}

fn monitor_injection() -> Verdict {
    let demo = Demo::boot();
    let c = &demo.container;
    demo.load_extra("monitor-1.0.0");
    c.instantiate(InstanceConfig::new("mon", "monitor@1.0.0".parse().unwrap(), Value::Null)).map_err(|e| e.to_string())?;
    c.create_connection(ConnectionConfig::new("mon-next", PortAddr::new("mon", "next"), PortAddr::new("search", "main"), None))
        .map_err(|e| e.to_string())?;

    let gate = Arc::new(Gate::default());
    let driver = Driver::start(c, 4, 200.0, Some(gate.clone()));
    driver.wait_until(500);
    {
        let _paused = gate.lock.write().unwrap();
        c.relink("ui-finder", Some(PortAddr::new("mon", "main")), None).map_err(|e| e.to_string())?;
        gate.open.store(true, Ordering::SeqCst);
    }
    driver.wait_until(2500);
    {
        let _paused = gate.lock.write().unwrap();
        gate.open.store(false, Ordering::SeqCst);
        c.relink("ui-finder", Some(PortAddr::new("search", "main")), None).map_err(|e| e.to_string())?;
    }
    let about = c.invoke("mon", "main", Method::About, vec![]).map_err(|e| e.to_string())?;
    driver.wait_until(3000);
    c.unload_instance("mon").map_err(|e| e.to_string())?;
    let (sent, failed, _, first_error) = driver.finish();
    let window = gate.counted.load(Ordering::SeqCst);
    let count = about.get("count").and_then(Value::as_int).unwrap_or(-1) as u64;
    ensure(failed == 0, || format!("{failed} failed, first {first_error:?}"))?;
    ensure(window > 0, || "empty window".into())?;
    ensure(count == window, || format!("monitor counted {count}, window had {window}"))?;
    Ok(format!("monitor counted {count} = {window} requests in the window, {sent} sent, 0 failed"))
}

fn value_and_sci() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    for i in 0..1000 {
        let v = random_value(&mut rng, 5);
        let back = decode_value(&encode_value(&v)).map_err(|e| format!("value {i}: {e}"))?;
        ensure(back == v, || format!("value {i} changed"))?;
    }
    let kinds = InterfaceKind::ALL.len();
    let names: BTreeSet<&str> = InterfaceKind::ALL.iter().flat_map(|k| methods_of(*k).iter().map(Method::name)).collect();
    ensure(kinds == 15, || format!("{kinds} kinds"))?;
    ensure(names.len() == 14, || format!("{} methods", names.len()))?;
    use InterfaceKind::*;
    let union = |parts: &[InterfaceKind]| parts.iter().fold(MethodSet::EMPTY, |a, k| a | methods_of(*k));
    let table: [(InterfaceKind, &[InterfaceKind]); 6] = [
        (Resource, &[InputResource, OutputResource]),
        (ReadonlyListable, &[InputResource, Listable]),
        (ListableResource, &[Resource, Listable]),
        (TransactionResource, &[Resource, Transaction]),
        (ListableTransaction, &[ListableResource, Transaction]),
        (Universal, &InterfaceKind::ALL),
    ];
    for (kind, parts) in table {
        ensure(methods_of(kind) == union(parts), || format!("{kind} is not the union of its parts"))?;
    }
    Ok("1000 values round-trip; 15 kinds, 14 methods, composition table holds".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("ism worked example", worked_example),
        ("closure equals BFS reachability", closure_oracle),
        ("fixpoint properties", fixpoint_properties),
        ("ideal-system certification", ideal_certification),
        ("zero-loss hot swap", zero_loss_swap),
        ("adapter-bridge equivalence", adapter_bridge),
        ("peer isolation", peer_isolation),
        ("monitor injection", monitor_injection),
        ("value round-trip and interface arithmetic", value_and_sci),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = started.elapsed();
        match verdict {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?}]"),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name}: {why} [{took:.2?}]");
            }
        }
    }
    println!("{} passed, {failures} failed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
