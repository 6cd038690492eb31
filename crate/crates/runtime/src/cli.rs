//! The `eight` command line.
//!
//! Most commands are thin clients of the HTTP API. `serve`, `demo` and
//! `pack` work locally, as do `ism scope` and `ism certify` when given a
//! model file.
//!
//! Exit status: 0 success, 1 rejected or invalid request, 2 transport or
//! server failure, 3 a certification that came back negative.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value as Json};

use crate::analysis::{all_ideal, certify_report, read_model, scope_report, ContextArg};
use crate::config::{read_rebind_file, PortAddr};
use crate::container::{Container, ContainerOptions};
use crate::error::RuntimeError;
use crate::manifest::{pack_dir, read_package, ComponentRef};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7070";
pub const DEFAULT_BIND: &str = "127.0.0.1:7070";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_TRANSPORT: i32 = 2;
pub const EXIT_NOT_IDEAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "eight", version, about = "Hot-swappable component container")]
pub struct Cli {
    /// Base URL of a running container.
    #[arg(long, global = true, env = "EIGHT_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,
    /// Print raw JSON responses.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a container with the HTTP API, scanning a root directory.
    Serve(ServeArgs),
    /// Write the bundled search demo to a directory and serve it.
    Demo(ServeArgs),
    /// Show components, instances and connections.
    Status,
    /// Rescan the root directory now.
    Scan,
    /// Upload a package file, or pack and upload a package directory.
    Load { path: PathBuf },
    /// Pack a package directory into a `.pkg` file.
    Pack {
        dir: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Create an instance of a loaded component.
    Instantiate {
        id: String,
        /// `id@version`.
        component: String,
        /// Parameter as `key=value`; the value is JSON or else a string.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Drain and remove an instance with its connections.
    Unload { id: String },
    /// Connect a required port to a provided port.
    Link {
        id: String,
        /// `instance:port` requiring the interface.
        from: String,
        /// `instance:port` providing it.
        to: String,
        /// Adapter script file.
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Adapter parameter as `key=value`.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Remove a connection.
    Unlink { id: String },
    /// Replace or remove the adapter of a connection.
    Adapter {
        id: String,
        /// New adapter script; omit to remove the adapter.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Replace an instance by a new one from another component version.
    Swap {
        id: String,
        /// `id@version` of the replacement.
        component: String,
        /// JSON rebind plan; defaults to keeping every connection as is.
        #[arg(long)]
        rebind: Option<PathBuf>,
    },
    /// Print lifecycle events as JSON lines.
    Events {
        #[arg(long, default_value_t = 0)]
        cursor: u64,
        /// Keep printing new events.
        #[arg(short, long)]
        follow: bool,
    },
    /// Call a method on an instance port.
    Invoke {
        id: String,
        method: String,
        /// Arguments as JSON; bare words are strings.
        args: Vec<String>,
        #[arg(long, default_value = "main")]
        port: String,
    },
    /// Impact-scope analysis.
    #[command(subcommand)]
    Ism(IsmCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Root directory holding components/ and config/.
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    #[arg(long, default_value = DEFAULT_BIND)]
    pub bind: String,
    /// Seconds between directory scans.
    #[arg(long, default_value_t = 2.0)]
    pub scan_interval: f64,
    /// Seconds a draining instance gets before it is released anyway.
    #[arg(long, default_value_t = 30.0)]
    pub drain_timeout: f64,
}

#[derive(Debug, Subcommand)]
pub enum IsmCommand {
    /// Export the running system as a model.
    Model {
        #[arg(long, default_value = "s")]
        context: String,
    },
    /// Services, modules and applications affected by a change.
    Scope {
        /// Model file; defaults to the running system.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Change contexts, e.g. `s` or `s,o`.
        #[arg(long, default_value = "s")]
        context: String,
        /// Changed services, `app.module.service`.
        #[arg(required = true)]
        change: Vec<String>,
    },
    /// Check module and pair independence.
    Certify {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Context the running system is exported under.
        #[arg(long)]
        context: Option<String>,
        #[arg(long)]
        app: Option<String>,
        /// `app.module`.
        #[arg(long)]
        module: Option<String>,
        /// Exit with status 3 unless the result is ideal.
        #[arg(long)]
        expect_ideal: bool,
    },
}

/// A failed command and its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        let code = if e.status() >= 500 { EXIT_TRANSPORT } else { EXIT_INVALID };
        Failure { code, message: format!("{}: {e}", e.code()) }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INVALID, message: message.into() }
}

fn transport(message: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_TRANSPORT, message: message.to_string() }
}

/// Parses the process arguments, runs the command and returns the exit
/// status.
pub fn run() -> i32 {
    run_with(std::env::args_os())
}

pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Client { base: base.trim_end_matches('/').to_string(), agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(&self, response: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Json, Failure> {
        let mut response = response.map_err(|e| transport(format!("{}: {e}", self.base)))?;
        let status = response.status().as_u16();
        let text = response.body_mut().with_config().limit(256 << 20).read_to_string().map_err(transport)?;
        let body: Json = serde_json::from_str(&text).unwrap_or(Json::String(text));
        if status < 400 {
            return Ok(body);
        }
        let message = match (&body["code"], &body["message"]) {
            (Json::String(c), Json::String(m)) => format!("{c}: {m}"),
            _ => format!("HTTP {status}: {body}"),
        };
        Err(Failure { code: if status >= 500 { EXIT_TRANSPORT } else { EXIT_INVALID }, message })
    }

    fn get(&self, path: &str) -> Result<Json, Failure> {
        self.finish(self.agent.get(self.url(path)).call())
    }

    fn delete(&self, path: &str) -> Result<Json, Failure> {
        self.finish(self.agent.delete(self.url(path)).call())
    }

    fn post(&self, path: &str, body: &Json) -> Result<Json, Failure> {
        let req = self.agent.post(self.url(path)).header("content-type", "application/json");
        self.finish(req.send(body.to_string()))
    }

    fn put(&self, path: &str, body: &Json) -> Result<Json, Failure> {
        let req = self.agent.put(self.url(path)).header("content-type", "application/json");
        self.finish(req.send(body.to_string()))
    }

    fn post_bytes(&self, path: &str, body: &[u8]) -> Result<Json, Failure> {
        let req = self.agent.post(self.url(path)).header("content-type", "application/octet-stream");
        self.finish(req.send(body))
    }
}

/// `key=value` pairs as a JSON object. Values that parse as JSON are
/// taken as such.
fn params(pairs: &[String]) -> Result<Json, Failure> {
    let mut out = serde_json::Map::new();
    for p in pairs {
        let (k, v) = p.split_once('=').ok_or_else(|| invalid(format!("`{p}` is not KEY=VALUE")))?;
        out.insert(k.to_string(), loose_json(v));
    }
    Ok(Json::Object(out))
}

fn loose_json(s: &str) -> Json {
    serde_json::from_str(s).unwrap_or_else(|_| Json::String(s.to_string()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn print_events(reply: &Json) {
    for e in reply["events"].as_array().into_iter().flatten() {
        print_event(e);
    }
}

fn print_event(e: &Json) {
    let action = e["action"].as_str().unwrap_or("?");
    let subject = e["subject"].as_str().unwrap_or("");
    println!("#{:<5} {action:<13} {subject:<16} {}", e["seq"], e["detail"]);
}

fn execute(cli: &Cli) -> Result<i32, Failure> {
    let client = Client::new(&cli.server);
    let out = |reply: Json| {
        if cli.json {
            print_json(&reply);
        } else {
            print_events(&reply);
        }
        Ok(EXIT_OK)
    };
    match &cli.command {
        Command::Serve(args) => serve(args),
        Command::Demo(args) => {
            crate::demo::materialize(&args.root)?;
            println!("demo root written to {}", args.root.display());
            serve(args)
        }
        Command::Status => {
            let snap = client.get("/api/snapshot")?;
            if cli.json {
                print_json(&snap);
            } else {
                print_status(&snap);
            }
            Ok(EXIT_OK)
        }
        Command::Scan => out(client.post("/api/scan", &json!({}))?),
        Command::Load { path } => {
            let bytes = if path.is_dir() {
                pack_dir(path)?
            } else {
                std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?
            };
            out(client.post_bytes("/api/components", &bytes)?)
        }
        Command::Pack { dir, output } => {
            let bytes = pack_dir(dir)?;
            let pkg = read_package(&bytes, &dir.display().to_string())?;
            let dest = output.clone().unwrap_or_else(|| PathBuf::from(crate::manifest::package_file_name(&pkg.descriptor.reference())));
            std::fs::write(&dest, &bytes).map_err(|e| invalid(format!("{}: {e}", dest.display())))?;
            println!("{} {} {}", pkg.descriptor.reference(), pkg.digest, dest.display());
            Ok(EXIT_OK)
        }
        Command::Instantiate { id, component, params: p } => {
            let component: ComponentRef = component.parse()?;
            let body = json!({ "id": id, "component": component, "params": params(p)? });
            out(client.post("/api/instances", &body)?)
        }
        Command::Unload { id } => out(client.delete(&format!("/api/instances/{id}"))?),
        Command::Link { id, from, to, adapter, params: p } => {
            let from: PortAddr = from.parse()?;
            let to: PortAddr = to.parse()?;
            let adapter = match adapter {
                Some(file) => Some(json!({ "script": read_text(file)?, "parameters": params(p)? })),
                None if p.is_empty() => None,
                None => return Err(invalid("--param needs --adapter")),
            };
            out(client.post("/api/connections", &json!({ "id": id, "from": from, "to": to, "adapter": adapter }))?)
        }
        Command::Unlink { id } => out(client.delete(&format!("/api/connections/{id}"))?),
        Command::Adapter { id, script, params: p } => {
            let spec = match script {
                Some(file) => json!({ "script": read_text(file)?, "parameters": params(p)? }),
                None => Json::Null,
            };
            out(client.put(&format!("/api/connections/{id}/adapter"), &spec)?)
        }
        Command::Swap { id, component, rebind } => {
            let component: ComponentRef = component.parse()?;
            let plan = match rebind {
                Some(path) => read_rebind_file(path)?,
                None => {
                    let conns = client.get("/api/connections")?;
                    keep_all(&conns, id)
                }
            };
            let body = json!({ "component": component, "rebind": plan });
            out(client.post(&format!("/api/instances/{id}/swap"), &body)?)
        }
        Command::Events { cursor, follow } => events(&client, *cursor, *follow),
        Command::Invoke { id, method, args, port } => {
            let args: Vec<Json> = args.iter().map(|a| loose_json(a)).collect();
            let reply = client.post(&format!("/api/instances/{id}/invoke"), &json!({ "port": port, "method": method, "args": args }))?;
            if cli.json {
                print_json(&reply);
            } else {
                println!("{}", reply["result"]);
            }
            Ok(EXIT_OK)
        }
        Command::Ism(cmd) => ism(cli, &client, cmd),
    }
}

/// Plan keeping every connection that touches `id`.
fn keep_all(connections: &Json, id: &str) -> Vec<crate::config::RebindEntry> {
    let touches = |addr: &Json| addr.as_str().and_then(|a| a.split_once(':')).is_some_and(|(i, _)| i == id);
    connections
        .as_array()
        .into_iter()
        .flatten()
        .filter(|c| touches(&c["from"]) || touches(&c["to"]))
        .filter_map(|c| c["id"].as_str())
        .map(crate::config::RebindEntry::keep)
        .collect()
}

fn print_status(snap: &Json) {
    let list = |k: &str| snap[k].as_array().cloned().unwrap_or_default();
    println!("components:");
    for c in list("components") {
        println!("  {:<24} {}", c["reference"].as_str().unwrap_or(""), c["payload"].as_str().unwrap_or(""));
    }
    println!("instances:");
    for i in list("instances") {
        println!(
            "  {:<16} gen {:<4} {:<24} {:<9} in-flight {}",
            i["id"].as_str().unwrap_or(""),
            i["generation"],
            i["component"].as_str().unwrap_or(""),
            i["state"].as_str().unwrap_or(""),
            i["in_flight"],
        );
    }
    println!("connections:");
    for c in list("connections") {
        let adapter = if c["adapter"].is_null() { "" } else { " (adapter)" };
        println!(
            "  {:<20} {} -> {}{adapter}",
            c["id"].as_str().unwrap_or(""),
            c["from"].as_str().unwrap_or(""),
            c["to"].as_str().unwrap_or(""),
        );
    }
    println!("last event: {}", snap["seq"]);
}

fn events(client: &Client, cursor: u64, follow: bool) -> Result<i32, Failure> {
    let url = client.url(&format!("/api/events?cursor={cursor}&follow={follow}"));
    let response = client.agent.get(url).call().map_err(|e| transport(format!("{}: {e}", client.base)))?;
    if response.status().as_u16() >= 400 {
        return Err(invalid(format!("HTTP {}", response.status())));
    }
    let reader = BufReader::new(response.into_body().into_reader());
    let stdout = std::io::stdout();
    for line in reader.lines() {
        let line = line.map_err(transport)?;
        let mut lock = stdout.lock();
        if writeln!(lock, "{line}").and_then(|_| lock.flush()).is_err() {
            break;
        }
    }
    Ok(EXIT_OK)
}

fn ism(cli: &Cli, client: &Client, cmd: &IsmCommand) -> Result<i32, Failure> {
    match cmd {
        IsmCommand::Model { context } => {
            print_json(&client.post("/api/ism/model", &json!({ "context": context }))?);
            Ok(EXIT_OK)
        }
        IsmCommand::Scope { model, context, change } => {
            let report = match model {
                Some(path) => {
                    let m = read_model(path)?;
                    serde_json::to_value(scope_report(&m, ContextArg::Joined(context.clone()).parse()?, change)?)
                        .expect("serializable")
                }
                None => client.post("/api/ism/scope", &json!({ "context": context, "change": change }))?,
            };
            if cli.json {
                print_json(&report);
            } else {
                let join = |k: &str| {
                    report[k].as_array().into_iter().flatten().filter_map(Json::as_str).collect::<Vec<_>>().join(" ")
                };
                println!("contexts:     {}", report["contexts"].as_str().unwrap_or(""));
                println!("services:     {}", join("services"));
                println!("modules:      {}", join("modules"));
                println!("applications: {}", join("applications"));
            }
            Ok(EXIT_OK)
        }
        IsmCommand::Certify { model, context, app, module, expect_ideal } => {
            let report = match model {
                Some(path) => {
                    let m = read_model(path)?;
                    let reports = certify_report(&m, app.as_deref(), module.as_deref())?;
                    json!({ "ideal": all_ideal(&reports), "applications": reports })
                }
                None => client.post(
                    "/api/ism/certify",
                    &json!({ "context": context, "app": app, "module": module }),
                )?,
            };
            let ideal = report["ideal"].as_bool().unwrap_or(false);
            if cli.json {
                print_json(&report);
            } else {
                print_certification(&report);
            }
            Ok(if *expect_ideal && !ideal { EXIT_NOT_IDEAL } else { EXIT_OK })
        }
    }
}

fn print_certification(report: &Json) {
    for app in report["applications"].as_array().into_iter().flatten() {
        println!("application {} under {{{}}}: ideal {}", app["application"].as_str().unwrap_or(""), app["contexts"].as_str().unwrap_or(""), app["ideal"]);
        for m in app["modules"].as_array().into_iter().flatten() {
            let verdict = if m["absolutely_independent"] == true { "independent".to_string() } else {
                format!("reaches {} under {{{}}}", m["witness"]["reached"].as_str().unwrap_or("?"), m["witness"]["contexts"].as_str().unwrap_or(""))
            };
            println!("  {:<28} {verdict}", m["module"].as_str().unwrap_or(""));
        }
    }
    println!("ideal: {}", report["ideal"]);
}

fn seconds(s: f64, flag: &str) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(s).map_err(|_| invalid(format!("--{flag} must be a non-negative number of seconds")))
}

fn serve(args: &ServeArgs) -> Result<i32, Failure> {
    let options = ContainerOptions {
        root: Some(args.root.clone()),
        drain_timeout: seconds(args.drain_timeout, "drain-timeout")?,
        scan_interval: seconds(args.scan_interval, "scan-interval")?,
        ..ContainerOptions::default()
    };
    let container = Container::new(options);
    let (delta, events) = container.scan_and_apply()?;
    log::info!("initial scan: {} events", events.len());
    for e in &events {
        if e.action == crate::container::Action::ConfigChanged {
            eprintln!("warning: {} {}", e.subject, crate::json::to_json(&e.detail));
        }
    }
    drop(delta);
    let _scanner = container.start_scanner();

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(transport)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| Failure::from(RuntimeError::BindFailure { addr: args.bind.clone(), reason: e.to_string() }))?;
        let addr = listener.local_addr().map_err(transport)?;
        println!("serving {} on http://{addr}", args.root.display());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::api::serve(container, listener, shutdown).await.map_err(transport)
    })?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_take_json_or_strings() {
        let p = params(&["n=3".into(), "dir=searchPath".into(), "flags=[true]".into()]).unwrap();
        assert_eq!(p, json!({ "n": 3, "dir": "searchPath", "flags": [true] }));
        assert_eq!(params(&["nokey".into()]).unwrap_err().code, EXIT_INVALID);
    }

    #[test]
    fn keep_all_picks_touching_connections() {
        let conns = json!([
            { "id": "a", "from": "ui:finder", "to": "search:main" },
            { "id": "b", "from": "search:documents", "to": "documents:listing" },
            { "id": "c", "from": "ui:formatter", "to": "formatter:main" },
        ]);
        let plan: Vec<_> = keep_all(&conns, "search").into_iter().map(|e| e.connection).collect();
        assert_eq!(plan, ["a", "b"]);
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let code = run_with(["eight", "--server", "http://127.0.0.1:1", "status"]);
        assert_eq!(code, EXIT_TRANSPORT);
    }

    #[test]
    fn offline_certify_exit_codes() {
        let mono = concat!(env!("CARGO_MANIFEST_DIR"), "/../../demo/models/search.json");
        assert_eq!(run_with(["eight", "ism", "certify", "--model", mono, "--expect-ideal"]), EXIT_NOT_IDEAL);
        let dir = tempfile::tempdir().unwrap();
        let free = dir.path().join("free.json");
        let spec = json!({
            "applications": [{ "name": "shop", "modules": [
                { "name": "Cart", "services": ["add"] },
                { "name": "Stock", "services": ["count"] },
            ]}],
            "rules": { "s": [] },
        });
        std::fs::write(&free, spec.to_string()).unwrap();
        let free = free.to_str().unwrap();
        assert_eq!(run_with(["eight", "ism", "certify", "--model", free, "--expect-ideal"]), EXIT_OK);
    }
}
