//! Host-native component factories.
//!
//! A package whose artifact is `{"kind": "builtin", "factory": name}`
//! instantiates one of these instead of loading a script.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use eight_core::{KeyPath, Method, Table, Value};
use parking_lot::{Mutex, RwLock};

use crate::component::{Behavior, Env, Factory};
use crate::error::{Result, RuntimeError};
use crate::manifest::ComponentDescriptor;

pub const FACTORIES: [&str; 5] = ["documents", "userinterface", "formatter", "monitor", "echo"];

pub fn factory(name: &str) -> Option<Factory> {
    Some(match name {
        "documents" => Documents::create,
        "userinterface" => UserInterface::create,
        "formatter" => Formatter::create,
        "monitor" => Monitor::create,
        "echo" => Echo::create,
        _ => return None,
    })
}

fn key_arg(v: &Value, env: &Env) -> Result<KeyPath> {
    let parts = match v {
        Value::Text(s) => return KeyPath::from_slashed(s).map_err(|e| env.fault("BadKey", e.to_string())),
        Value::Seq(items) => items.clone(),
        other => vec![other.clone()],
    };
    KeyPath::new(parts).map_err(|e| env.fault("BadKey", e.to_string()))
}

fn key_value(k: &KeyPath) -> Value {
    Value::Seq(k.components().to_vec())
}

/// Keyed text store. Seeded from the `seed` parameter, a record of
/// slash-separated paths to contents.
pub struct Documents {
    table: RwLock<Table>,
}

impl Documents {
    fn create(_: &ComponentDescriptor, env: &Env) -> Result<Arc<dyn Behavior>> {
        let mut table = Table::new();
        match env.param("seed") {
            None | Some(Value::Null) => {}
            Some(Value::Rec(seed)) => {
                for (path, text) in seed {
                    let key = KeyPath::from_slashed(path).map_err(|e| RuntimeError::ConfigValidation {
                        field: format!("seed.{path}"),
                        reason: e.to_string(),
                    })?;
                    table.insert(key, text.clone());
                }
            }
            Some(Value::Table(t)) => table = t.clone(),
            Some(other) => {
                return Err(RuntimeError::ConfigValidation {
                    field: "seed".into(),
                    reason: format!("expected a record of path to text, found {}", other.type_name()),
                })
            }
        }
        Ok(Arc::new(Documents { table: RwLock::new(table) }))
    }

    fn filtered(&self, prefix: &Value) -> Table {
        let t = self.table.read();
        match prefix {
            Value::Null => t.clone(),
            p => t.with_prefix(p),
        }
    }
}

impl Behavior for Documents {
    fn answers(&self, _: &str, method: Method) -> bool {
        use Method::*;
        matches!(method, Find | Store | Discard | Empty | All | Keys)
    }

    fn call(&self, _: &str, method: Method, args: Vec<Value>, env: &Env) -> Result<Value> {
        match method {
            Method::Find => {
                let k = key_arg(&args[0], env)?;
                self.table.read().get(&k).cloned().ok_or_else(|| env.fault("NotFound", format!("no document {k}")))
            }
            Method::Store => {
                let k = key_arg(&args[0], env)?;
                self.table.write().insert(k, args[1].clone());
                Ok(Value::Null)
            }
            Method::Discard => {
                let k = key_arg(&args[0], env)?;
                Ok(self.table.write().remove(&k).unwrap_or(Value::Null))
            }
            Method::Empty => {
                self.table.write().clear();
                Ok(Value::Null)
            }
            Method::All => Ok(Value::Table(self.filtered(&args[0]))),
            Method::Keys => Ok(Value::Seq(self.filtered(&args[0]).keys().map(key_value).collect())),
            _ => unreachable!("documents answers only resource methods"),
        }
    }

    fn about(&self, _: &str, _: &Env) -> Option<Value> {
        Some(Value::rec([("documents", Value::Int(self.table.read().len() as i64))]))
    }
}

/// `process(keyword) = formatter.process(text(finder.process(keyword)))`.
pub struct UserInterface;

impl UserInterface {
    fn create(_: &ComponentDescriptor, _: &Env) -> Result<Arc<dyn Behavior>> {
        Ok(Arc::new(UserInterface))
    }
}

/// Renders a result for display: text as is, anything else in its
/// canonical textual form.
pub fn render(v: &Value) -> String {
    v.to_string()
}

impl Behavior for UserInterface {
    fn answers(&self, _: &str, method: Method) -> bool {
        method == Method::Process
    }

    fn call(&self, _: &str, _: Method, mut args: Vec<Value>, env: &Env) -> Result<Value> {
        let found = env.call("finder", Method::Process, vec![args.remove(0)])?;
        env.call("formatter", Method::Process, vec![Value::Text(render(&found))])
    }
}

/// The Regex module: rewrites its input with `pattern` -> `replacement`.
/// Without a pattern it is the identity.
pub struct Formatter {
    rule: Option<(regex::Regex, String)>,
}

impl Formatter {
    fn create(_: &ComponentDescriptor, env: &Env) -> Result<Arc<dyn Behavior>> {
        let text = |name: &str| match env.param(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Text(s)) => Ok(Some(s.clone())),
            Some(other) => Err(RuntimeError::ConfigValidation {
                field: name.into(),
                reason: format!("expected text, found {}", other.type_name()),
            }),
        };
        let rule = match text("pattern")? {
            None => None,
            Some(p) => {
                let re = regex::Regex::new(&p)
                    .map_err(|e| RuntimeError::ConfigValidation { field: "pattern".into(), reason: e.to_string() })?;
                Some((re, text("replacement")?.unwrap_or_else(|| "$0".into())))
            }
        };
        Ok(Arc::new(Formatter { rule }))
    }
}

impl Behavior for Formatter {
    fn answers(&self, _: &str, method: Method) -> bool {
        method == Method::Process
    }

    fn call(&self, _: &str, _: Method, mut args: Vec<Value>, _: &Env) -> Result<Value> {
        let input = args.remove(0);
        Ok(match &self.rule {
            None => input,
            Some((re, replacement)) => Value::Text(re.replace_all(&render(&input), replacement.as_str()).into_owned()),
        })
    }
}

/// Interceptor: counts every call and forwards it unchanged to `next`.
pub struct Monitor {
    count: AtomicU64,
    by_method: Mutex<BTreeMap<&'static str, u64>>,
}

impl Monitor {
    fn create(_: &ComponentDescriptor, _: &Env) -> Result<Arc<dyn Behavior>> {
        Ok(Arc::new(Monitor { count: AtomicU64::new(0), by_method: Mutex::new(BTreeMap::new()) }))
    }
}

impl Behavior for Monitor {
    fn answers(&self, _: &str, method: Method) -> bool {
        method != Method::About
    }

    fn call(&self, _: &str, method: Method, args: Vec<Value>, env: &Env) -> Result<Value> {
        self.count.fetch_add(1, Ordering::SeqCst);
        *self.by_method.lock().entry(method.name()).or_default() += 1;
        env.call("next", method, args)
    }

    fn about(&self, _: &str, _: &Env) -> Option<Value> {
        let by_method = self.by_method.lock().iter().map(|(m, n)| (*m, Value::Int(*n as i64))).collect::<Vec<_>>();
        Some(Value::rec([
            ("count", Value::Int(self.count.load(Ordering::SeqCst) as i64)),
            ("by_method", Value::rec(by_method)),
        ]))
    }
}

/// Returns its single argument, or all arguments as a sequence.
/// Returns its argument, after `delay_ms` milliseconds when set.
pub struct Echo {
    delay: Duration,
}

impl Echo {
    fn create(_: &ComponentDescriptor, env: &Env) -> Result<Arc<dyn Behavior>> {
        let ms = match env.param("delay_ms") {
            None | Some(Value::Null) => 0,
            Some(Value::Int(ms)) if *ms >= 0 => *ms as u64,
            Some(other) => {
                return Err(RuntimeError::ConfigValidation {
                    field: "delay_ms".into(),
                    reason: format!("expected a non-negative int, found {other}"),
                })
            }
        };
        Ok(Arc::new(Echo { delay: Duration::from_millis(ms) }))
    }
}

impl Behavior for Echo {
    fn answers(&self, _: &str, method: Method) -> bool {
        method != Method::About
    }

    fn call(&self, _: &str, _: Method, mut args: Vec<Value>, _: &Env) -> Result<Value> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(match args.len() {
            0 => Value::Null,
            1 => args.remove(0),
            _ => Value::Seq(args),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::Wiring;
    use crate::manifest::parse_descriptor;

    struct Fixed;

    impl Wiring for Fixed {
        fn call(&self, port: &str, _: Method, args: Vec<Value>) -> Result<Value> {
            Ok(match port {
                "finder" => Value::Int(3),
                _ => args[0].clone(),
            })
        }
    }

    fn env(params: Value) -> Env {
        Env {
            instance: "t".into(),
            params,
            log_level: log::LevelFilter::Off,
            max_operations: None,
            wiring: Arc::new(Fixed),
        }
    }

    fn descriptor() -> ComponentDescriptor {
        parse_descriptor(
            br#"{"component_id":"x","version":"1.0.0","artifact":{"kind":"builtin","factory":"echo"},
                 "provides":[{"name":"main","kind":"Processor"}]}"#,
            "x",
        )
        .unwrap()
    }

    #[test]
    fn documents_store_semantics() {
        let seed = Value::rec([(
            "seed",
            Value::rec([("searchPath/a.txt", Value::from("cat dog")), ("other/c.txt", Value::from("cat"))]),
        )]);
        let e = env(seed);
        let d = Documents::create(&descriptor(), &e).unwrap();
        let call = |m, args: Vec<Value>| d.call("store", m, args, &e);
        assert_eq!(call(Method::All, vec![Value::Null]).unwrap().as_table().unwrap().len(), 2);
        let under = call(Method::All, vec!["searchPath".into()]).unwrap();
        assert_eq!(under.as_table().unwrap().len(), 1);
        call(Method::Store, vec!["searchPath/b.txt".into(), "cat cat".into()]).unwrap();
        assert_eq!(call(Method::Find, vec!["searchPath/b.txt".into()]).unwrap(), Value::from("cat cat"));
        let err = call(Method::Find, vec!["nope".into()]).unwrap_err();
        assert!(matches!(err, RuntimeError::InstanceFault { ref code, .. } if code == "NotFound"));
        let keys = call(Method::Keys, vec!["searchPath".into()]).unwrap();
        assert_eq!(keys.as_seq().unwrap().len(), 2);
        call(Method::Empty, vec![]).unwrap();
        assert!(call(Method::All, vec![Value::Null]).unwrap().as_table().unwrap().is_empty());
    }

    #[test]
    fn userinterface_composes() {
        let e = env(Value::Null);
        let ui = UserInterface::create(&descriptor(), &e).unwrap();
        assert_eq!(ui.call("main", Method::Process, vec!["cat".into()], &e).unwrap(), Value::from("3"));
    }

    #[test]
    fn formatter_identity_and_pattern() {
        let e = env(Value::Null);
        let f = Formatter::create(&descriptor(), &e).unwrap();
        assert_eq!(f.call("main", Method::Process, vec!["3".into()], &e).unwrap(), Value::from("3"));
        let e = env(Value::rec([("pattern", Value::from(r"(\d+)")), ("replacement", Value::from("count=$1"))]));
        let f = Formatter::create(&descriptor(), &e).unwrap();
        assert_eq!(f.call("main", Method::Process, vec!["3".into()], &e).unwrap(), Value::from("count=3"));
        let e = env(Value::rec([("pattern", Value::from("("))]));
        assert!(Formatter::create(&descriptor(), &e).is_err());
    }

    #[test]
    fn monitor_counts() {
        let e = env(Value::Null);
        let m = Monitor::create(&descriptor(), &e).unwrap();
        for _ in 0..3 {
            assert_eq!(m.call("main", Method::Process, vec!["k".into()], &e).unwrap(), Value::from("k"));
        }
        assert_eq!(m.about("main", &e).unwrap().get("count"), Some(&Value::Int(3)));
    }
}
