//! Embedded script engine for script components and inline adapters.
//!
//! Scripts are sandboxed: no module imports, an operation budget per call,
//! and no host access beyond what is registered here.
//!
//! Component scripts define one function per method. `fn process(keyword)`
//! answers `process` on every provided port; `fn main_process(keyword)`
//! answers it on port `main` only and takes precedence. Inside a component
//! function:
//!
//! * `port(name)` returns the required port `name`;
//! * `param(name)` / `params()` read instance parameters;
//! * `log(message)` writes to the instance log channel.
//!
//! Adapter scripts are evaluated top to bottom with these variables in
//! scope: `request` (`#{method, args}`), `method`, `args`, `input` (the
//! first argument or `()`), `params` (the adapter parameters) and
//! `context`, whose `context.process("next")` is the connection's current
//! downstream port. The value of the last statement is the response.
//!
//! A port object has all fourteen methods plus `invoke(method, args)`.
//! Rhai binds `this` when a script function is called in method form, so
//! in a script that itself defines `process`, `p.process(x)` calls the
//! script's own function. Write `process(p, x)` or
//! `p.invoke("process", [x])` there.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::sync::Arc;

use eight_core::{KeyPath, Method, Table, Value};
use parking_lot::Mutex;
use rhai::{
    Array, CallFnOptions, Dynamic, Engine, EvalAltResult, ImmutableString, Map, NativeCallContext, Position, Scope,
    AST, INT,
};

use crate::component::{Env, Wiring};
use crate::error::{Result, RuntimeError};

/// Operation budget when the instance environment sets none.
pub const DEFAULT_MAX_OPERATIONS: u64 = 2_000_000;

type RhaiResult<T> = std::result::Result<T, Box<EvalAltResult>>;

thread_local! {
    static BUDGET: Cell<u64> = const { Cell::new(DEFAULT_MAX_OPERATIONS) };
}

/// Restores the enclosing call's budget when a nested call returns.
struct BudgetGuard(u64);

impl BudgetGuard {
    fn set(limit: u64) -> Self {
        BudgetGuard(BUDGET.with(|b| b.replace(limit)))
    }
}

impl Drop for BudgetGuard {
    fn drop(&mut self) {
        BUDGET.with(|b| b.set(self.0));
    }
}

/// Where a downstream error is parked while it unwinds through script
/// frames, so it reaches the caller unchanged.
type ErrorSlot = Arc<Mutex<Option<RuntimeError>>>;

/// A port as seen from script code.
#[derive(Clone)]
pub struct PortObject {
    wiring: Arc<dyn Wiring>,
    name: String,
    slot: ErrorSlot,
}

impl PortObject {
    fn call(&mut self, method: Method, args: Vec<Dynamic>) -> RhaiResult<Dynamic> {
        let args = args.into_iter().map(from_dynamic).collect::<RhaiResult<Vec<_>>>()?;
        match self.wiring.call(&self.name, method, args) {
            Ok(v) => Ok(to_dynamic(v)),
            Err(e) => {
                let message = e.to_string();
                *self.slot.lock() = Some(e);
                Err(EvalAltResult::ErrorRuntime(message.into(), Position::NONE).into())
            }
        }
    }

    fn invoke(&mut self, method: &str, args: Array) -> RhaiResult<Dynamic> {
        let m: Method = method.parse().map_err(|_| runtime_error(format!("unknown method `{method}`")))?;
        self.call(m, args)
    }
}

#[derive(Clone)]
struct CallEnv {
    env: Env,
    slot: ErrorSlot,
}

/// `context` inside adapter scripts.
#[derive(Clone)]
pub struct AdapterContext {
    next: Arc<dyn Wiring>,
    slot: ErrorSlot,
}

impl AdapterContext {
    fn resolve(&mut self, name: &str) -> RhaiResult<PortObject> {
        if name != "next" {
            return Err(runtime_error(format!("adapter context has no endpoint `{name}` (only `next`)")));
        }
        Ok(PortObject { wiring: self.next.clone(), name: "next".into(), slot: self.slot.clone() })
    }
}

fn runtime_error(message: String) -> Box<EvalAltResult> {
    EvalAltResult::ErrorRuntime(message.into(), Position::NONE).into()
}

/// A compiled component script and its method table.
pub struct ScriptModule {
    ast: AST,
    /// Function name to parameter count.
    functions: BTreeMap<String, usize>,
}

impl ScriptModule {
    /// Name of the function answering `method` on `port`, if any.
    pub fn function_for(&self, port: &str, method: Method) -> Option<&str> {
        let arity = method.signature().params.len();
        let qualified = format!("{port}_{}", method.name());
        if let Some((name, _)) = self.functions.get_key_value(&qualified).filter(|(_, n)| **n == arity) {
            return Some(name.as_str());
        }
        self.functions
            .get_key_value(method.name())
            .filter(|(_, n)| **n == arity)
            .map(|(name, _)| name.as_str())
    }

    pub fn implements(&self, port: &str, method: Method) -> bool {
        self.function_for(port, method).is_some()
    }
}

/// A compiled adapter script.
pub struct AdapterScript {
    ast: AST,
}

pub struct ScriptHost {
    engine: Engine,
}

impl Default for ScriptHost {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptHost {
    pub fn new() -> Self {
        let mut engine = Engine::new();
        engine.set_module_resolver(rhai::module_resolvers::DummyModuleResolver::new());
        engine.set_max_call_levels(64);
        engine.set_max_expr_depths(64, 64);
        engine.set_max_string_size(16 << 20);
        engine.set_max_array_size(1 << 20);
        engine.set_max_map_size(1 << 20);
        engine.on_progress(|ops| {
            if ops > BUDGET.with(Cell::get) {
                Some(Dynamic::from("operation budget exhausted"))
            } else {
                None
            }
        });
        engine.on_print(|s| log::info!(target: "eight::script", "{s}"));
        engine.on_debug(|s, _, _| log::debug!(target: "eight::script", "{s}"));

        register_table(&mut engine);
        register_ports(&mut engine);

        engine.register_type_with_name::<AdapterContext>("Context");
        engine.register_fn("process", |ctx: &mut AdapterContext, name: &str| ctx.resolve(name));
        engine.register_fn("port", |ctx: &mut AdapterContext, name: &str| ctx.resolve(name));

        engine.register_fn("port", |cx: NativeCallContext, name: &str| -> RhaiResult<PortObject> {
            let env = call_env(&cx)?;
            Ok(PortObject { wiring: env.env.wiring.clone(), name: name.into(), slot: env.slot })
        });
        engine.register_fn("param", |cx: NativeCallContext, name: &str| -> RhaiResult<Dynamic> {
            let env = call_env(&cx)?;
            Ok(env.env.param(name).cloned().map(to_dynamic).unwrap_or(Dynamic::UNIT))
        });
        engine.register_fn("params", |cx: NativeCallContext| -> RhaiResult<Dynamic> {
            Ok(to_dynamic(call_env(&cx)?.env.params))
        });
        engine.register_fn("log", |cx: NativeCallContext, msg: Dynamic| -> RhaiResult<()> {
            call_env(&cx)?.env.log(log::Level::Info, &msg.to_string());
            Ok(())
        });

        ScriptHost { engine }
    }

    pub fn compile_module(&self, src: &str) -> std::result::Result<ScriptModule, String> {
        let ast = self.engine.compile(src).map_err(|e| e.to_string())?;
        let functions = ast.iter_functions().map(|f| (f.name.to_string(), f.params.len())).collect();
        Ok(ScriptModule { ast, functions })
    }

    pub fn compile_adapter(&self, src: &str) -> Result<AdapterScript> {
        let ast = self.engine.compile(src).map_err(|e| RuntimeError::AdapterCompileError(e.to_string()))?;
        Ok(AdapterScript { ast })
    }

    pub fn call_component(&self, module: &ScriptModule, function: &str, args: Vec<Value>, env: &Env) -> Result<Value> {
        let slot = ErrorSlot::default();
        let tag = Dynamic::from(CallEnv { env: env.clone(), slot: slot.clone() });
        let options = CallFnOptions::new().eval_ast(false).rewind_scope(true).with_tag(tag);
        let args: Vec<Dynamic> = args.into_iter().map(to_dynamic).collect();
        let _budget = BudgetGuard::set(env.max_operations.unwrap_or(DEFAULT_MAX_OPERATIONS));
        let out = self.engine.call_fn_with_options::<Dynamic>(options, &mut Scope::new(), &module.ast, function, args);
        finish(out, &slot, |e| script_fault(e, |code, message| env.fault(code, message)))
    }

    /// Runs `adapter` for one request on a connection.
    pub fn run_adapter(
        &self,
        adapter: &AdapterScript,
        connection: &str,
        method: Method,
        args: Vec<Value>,
        parameters: &Value,
        next: Arc<dyn Wiring>,
    ) -> Result<Value> {
        let slot = ErrorSlot::default();
        let args: Array = args.into_iter().map(to_dynamic).collect();
        let input = args.first().cloned().unwrap_or(Dynamic::UNIT);
        let mut request = Map::new();
        request.insert("method".into(), method.name().into());
        request.insert("args".into(), args.clone().into());

        let mut scope = Scope::new();
        scope.push("request", request);
        scope.push("method", ImmutableString::from(method.name()));
        scope.push("args", args);
        scope.push("input", input);
        scope.push("params", to_dynamic(parameters.clone()));
        scope.push("context", AdapterContext { next, slot: slot.clone() });

        let _budget = BudgetGuard::set(DEFAULT_MAX_OPERATIONS);
        let out = self.engine.eval_ast_with_scope::<Dynamic>(&mut scope, &adapter.ast);
        finish(out, &slot, |e| RuntimeError::AdapterFault {
            connection: connection.into(),
            message: describe(e),
        })
    }
}

fn call_env(cx: &NativeCallContext) -> RhaiResult<CallEnv> {
    cx.tag()
        .and_then(|t| t.clone().try_cast::<CallEnv>())
        .ok_or_else(|| runtime_error(format!("{}() is only available inside component functions", cx.fn_name())))
}

fn finish(
    out: RhaiResult<Dynamic>,
    slot: &ErrorSlot,
    fault: impl FnOnce(&EvalAltResult) -> RuntimeError,
) -> Result<Value> {
    match out {
        Ok(d) => from_dynamic(d).map_err(|e| fault(&e)),
        Err(e) => Err(slot.lock().take().unwrap_or_else(|| fault(&e))),
    }
}

fn describe(e: &EvalAltResult) -> String {
    match e.unwrap_inner() {
        EvalAltResult::ErrorRuntime(v, _) => v.to_string(),
        inner => inner.to_string(),
    }
}

/// `throw #{code: "NotFound", message: "..."}` keeps the code; anything
/// else becomes `ScriptError`.
fn script_fault(e: &EvalAltResult, make: impl FnOnce(&str, String) -> RuntimeError) -> RuntimeError {
    if let EvalAltResult::ErrorRuntime(v, _) = e.unwrap_inner() {
        if let Some(map) = v.read_lock::<Map>() {
            if let Some(code) = map.get("code").and_then(|c| c.clone().into_immutable_string().ok()) {
                let message = map.get("message").map(|m| m.to_string()).unwrap_or_default();
                return make(&code, message);
            }
        }
    }
    make("ScriptError", describe(e))
}

pub fn to_dynamic(v: Value) -> Dynamic {
    match v {
        Value::Null => Dynamic::UNIT,
        Value::Bool(b) => b.into(),
        Value::Int(i) => (i as INT).into(),
        Value::Float(x) => x.into(),
        Value::Text(s) => s.into(),
        Value::Bytes(b) => Dynamic::from_blob(b),
        Value::Seq(items) => items.into_iter().map(to_dynamic).collect::<Array>().into(),
        Value::Rec(fields) => fields.into_iter().map(|(k, v)| (k.into(), to_dynamic(v))).collect::<Map>().into(),
        Value::Table(t) => Dynamic::from(t),
    }
}

pub fn from_dynamic(d: Dynamic) -> RhaiResult<Value> {
    let d = d.flatten();
    if d.is_unit() {
        return Ok(Value::Null);
    }
    if let Ok(b) = d.as_bool() {
        return Ok(Value::Bool(b));
    }
    if let Ok(i) = d.as_int() {
        return Ok(Value::Int(i));
    }
    if let Ok(x) = d.as_float() {
        return Ok(Value::Float(x));
    }
    if let Ok(c) = d.as_char() {
        return Ok(Value::Text(c.to_string()));
    }
    if d.is_string() {
        return Ok(Value::Text(d.into_immutable_string().unwrap().to_string()));
    }
    if d.is_blob() {
        return Ok(Value::Bytes(d.into_blob().unwrap()));
    }
    if d.is_array() {
        let items = d.into_array().unwrap();
        return Ok(Value::Seq(items.into_iter().map(from_dynamic).collect::<RhaiResult<_>>()?));
    }
    if d.is_map() {
        let map = d.cast::<Map>();
        return Ok(Value::Rec(
            map.into_iter().map(|(k, v)| Ok((k.to_string(), from_dynamic(v)?))).collect::<RhaiResult<_>>()?,
        ));
    }
    if d.is::<Table>() {
        return Ok(Value::Table(d.cast::<Table>()));
    }
    Err(runtime_error(format!("a {} cannot cross a port", d.type_name())))
}

/// A key path from `"dir/file"`, a scalar, or an array of scalars.
fn key_path(d: Dynamic) -> RhaiResult<KeyPath> {
    let parts = if d.is_string() {
        return KeyPath::from_slashed(&d.into_immutable_string().unwrap()).map_err(|e| runtime_error(e.to_string()));
    } else if d.is_array() {
        d.into_array().unwrap().into_iter().map(from_dynamic).collect::<RhaiResult<Vec<_>>>()?
    } else {
        vec![from_dynamic(d)?]
    };
    KeyPath::new(parts).map_err(|e| runtime_error(e.to_string()))
}

fn key_to_dynamic(k: &KeyPath) -> Dynamic {
    k.components().iter().cloned().map(to_dynamic).collect::<Array>().into()
}

fn register_table(engine: &mut Engine) {
    engine.register_type_with_name::<Table>("Table");
    engine.register_fn("table", Table::new);
    engine.register_fn("len", |t: &mut Table| t.len() as INT);
    engine.register_fn("is_empty", |t: &mut Table| t.is_empty());
    engine.register_fn("keys", |t: &mut Table| t.keys().map(key_to_dynamic).collect::<Array>());
    engine.register_fn("values", |t: &mut Table| t.iter().map(|(_, v)| to_dynamic(v.clone())).collect::<Array>());
    engine.register_fn("entries", |t: &mut Table| {
        t.iter()
            .map(|(k, v)| Dynamic::from_array(vec![key_to_dynamic(k), to_dynamic(v.clone())]))
            .collect::<Array>()
    });
    engine.register_fn("get", |t: &mut Table, k: Dynamic| -> RhaiResult<Dynamic> {
        Ok(t.get(&key_path(k)?).cloned().map(to_dynamic).unwrap_or(Dynamic::UNIT))
    });
    engine.register_fn("contains", |t: &mut Table, k: Dynamic| -> RhaiResult<bool> { Ok(t.contains_key(&key_path(k)?)) });
    engine.register_fn("insert", |t: &mut Table, k: Dynamic, v: Dynamic| -> RhaiResult<()> {
        t.insert(key_path(k)?, from_dynamic(v)?);
        Ok(())
    });
    engine.register_fn("remove", |t: &mut Table, k: Dynamic| -> RhaiResult<Dynamic> {
        Ok(t.remove(&key_path(k)?).map(to_dynamic).unwrap_or(Dynamic::UNIT))
    });
    engine.register_fn("with_prefix", |t: &mut Table, p: Dynamic| -> RhaiResult<Table> { Ok(t.with_prefix(&from_dynamic(p)?)) });
    engine.register_fn("to_string", |t: &mut Table| Value::Table(t.clone()).to_string());
    engine.register_fn("to_debug", |t: &mut Table| Value::Table(t.clone()).to_string());
}

fn register_ports(engine: &mut Engine) {
    engine.register_type_with_name::<PortObject>("Port");
    engine.register_fn("process", |p: &mut PortObject, a: Dynamic| p.call(Method::Process, vec![a]));
    engine.register_fn("perform", |p: &mut PortObject, a: Dynamic, b: Dynamic| p.call(Method::Perform, vec![a, b]));
    engine.register_fn("operate", |p: &mut PortObject, a: Dynamic, b: Dynamic, c: Dynamic| {
        p.call(Method::Operate, vec![a, b, c])
    });
    engine.register_fn("find", |p: &mut PortObject, k: Dynamic| p.call(Method::Find, vec![k]));
    engine.register_fn("store", |p: &mut PortObject, k: Dynamic, v: Dynamic| p.call(Method::Store, vec![k, v]));
    engine.register_fn("discard", |p: &mut PortObject, k: Dynamic| p.call(Method::Discard, vec![k]));
    engine.register_fn("empty", |p: &mut PortObject| p.call(Method::Empty, vec![]));
    engine.register_fn("all", |p: &mut PortObject| p.call(Method::All, vec![]));
    engine.register_fn("all", |p: &mut PortObject, prefix: Dynamic| p.call(Method::All, vec![prefix]));
    engine.register_fn("keys", |p: &mut PortObject| p.call(Method::Keys, vec![]));
    engine.register_fn("keys", |p: &mut PortObject, prefix: Dynamic| p.call(Method::Keys, vec![prefix]));
    engine.register_fn("begin", |p: &mut PortObject| p.call(Method::Begin, vec![]));
    engine.register_fn("commit", |p: &mut PortObject, t: Dynamic| p.call(Method::Commit, vec![t]));
    engine.register_fn("rollback", |p: &mut PortObject, t: Dynamic| p.call(Method::Rollback, vec![t]));
    engine.register_fn("extend", |p: &mut PortObject, n: Dynamic| p.call(Method::Extend, vec![n]));
    engine.register_fn("about", |p: &mut PortObject| p.call(Method::About, vec![]));
    engine.register_fn("invoke", |p: &mut PortObject, m: &str, args: Array| p.invoke(m, args));
    engine.register_fn("to_string", |p: &mut PortObject| format!("port {}", p.name));
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Wiring for Echo {
        fn call(&self, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
            match port {
                "broken" => Err(RuntimeError::InstanceFault { instance: "x".into(), code: "Boom".into(), message: "down".into() }),
                _ => Ok(Value::Seq(vec![Value::from(method.name()), Value::Seq(args)])),
            }
        }
    }

    fn env() -> Env {
        Env {
            instance: "t".into(),
            params: Value::rec([("dir", Value::from("searchPath"))]),
            log_level: log::LevelFilter::Info,
            max_operations: None,
            wiring: Arc::new(Echo),
        }
    }

    #[test]
    fn dynamic_round_trip() {
        let mut t = Table::new();
        t.insert(KeyPath::from_slashed("a/b").unwrap(), Value::Bytes(vec![1, 2]));
        let v = Value::rec([
            ("n", Value::Null),
            ("f", Value::Float(f64::NAN)),
            ("s", Value::Seq(vec![Value::Int(-1), Value::Bool(true)])),
            ("t", Value::Table(t)),
        ]);
        assert_eq!(from_dynamic(to_dynamic(v.clone())).unwrap(), v);
    }

    #[test]
    fn method_table() {
        let host = ScriptHost::new();
        let m = host.compile_module("fn process(x) { x } fn side_perform(a, b) { a } fn perform(a) { a }").unwrap();
        assert!(m.implements("main", Method::Process));
        assert!(m.implements("side", Method::Perform));
        // wrong arity does not count
        assert!(!m.implements("main", Method::Perform));
    }

    #[test]
    fn component_reaches_ports_and_params() {
        let host = ScriptHost::new();
        let m = host.compile_module(r#"fn process(k) { port("docs").perform(k, param("dir")) }"#).unwrap();
        let out = host.call_component(&m, "process", vec!["cat".into()], &env()).unwrap();
        assert_eq!(
            out,
            Value::Seq(vec!["perform".into(), Value::Seq(vec!["cat".into(), "searchPath".into()])])
        );
    }

    #[test]
    fn downstream_error_propagates_unchanged() {
        let host = ScriptHost::new();
        // method syntax would bind `this` and recurse into the script's own
        // `process`; the function form always reaches the port
        let m = host.compile_module(r#"fn process(k) { process(port("broken"), k) + 1 }"#).unwrap();
        let err = host.call_component(&m, "process", vec![Value::Null], &env()).unwrap_err();
        assert_eq!(err, RuntimeError::InstanceFault { instance: "x".into(), code: "Boom".into(), message: "down".into() });
    }

    #[test]
    fn thrown_code_is_kept() {
        let host = ScriptHost::new();
        let m = host.compile_module(r#"fn find(k) { throw #{code: "NotFound", message: `no ${k}`} }"#).unwrap();
        let err = host.call_component(&m, "find", vec!["a".into()], &env()).unwrap_err();
        assert!(matches!(err, RuntimeError::InstanceFault { ref code, ref message, .. } if code == "NotFound" && message == "no a"));
    }

    #[test]
    fn budget_stops_runaway_scripts() {
        let host = ScriptHost::new();
        let m = host.compile_module("fn process(k) { loop {} }").unwrap();
        let mut e = env();
        e.max_operations = Some(10_000);
        let err = host.call_component(&m, "process", vec![Value::Null], &e).unwrap_err();
        assert!(matches!(err, RuntimeError::InstanceFault { .. }), "{err:?}");
    }

    #[test]
    fn adapter_bridges_unary_to_binary() {
        let host = ScriptHost::new();
        let a = host.compile_adapter(r#"context.process("next").perform(input, params.dir)"#).unwrap();
        let out = host
            .run_adapter(&a, "c", Method::Process, vec!["cat".into()], &env().params, Arc::new(Echo))
            .unwrap();
        assert_eq!(out.as_seq().unwrap()[0], Value::from("perform"));
        assert!(matches!(host.compile_adapter("let = ;"), Err(RuntimeError::AdapterCompileError(_))));
        let a = host.compile_adapter(r#"throw "nope""#).unwrap();
        let err = host.run_adapter(&a, "c", Method::Process, vec![], &Value::Null, Arc::new(Echo)).unwrap_err();
        assert_eq!(err, RuntimeError::AdapterFault { connection: "c".into(), message: "nope".into() });
    }

    #[test]
    fn imports_are_refused() {
        let host = ScriptHost::new();
        let a = host.compile_adapter(r#"import "fs" as fs; 1"#).unwrap();
        assert!(host.run_adapter(&a, "c", Method::Process, vec![], &Value::Null, Arc::new(Echo)).is_err());
    }
}
