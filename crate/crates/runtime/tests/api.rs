mod common;

use std::io::{BufRead, BufReader};
use std::time::{Duration, Instant};

use common::Demo;
use eight::api::{spawn, Server};
use serde_json::{json, Value as Json};

struct Http {
    base: String,
    agent: ureq::Agent,
}

impl Http {
    fn new(server: &Server) -> Http {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Http { base: server.url(), agent }
    }

    fn read(r: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> (u16, Json) {
        let mut r = r.unwrap();
        let status = r.status().as_u16();
        let body = r.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&body).unwrap_or(Json::Null))
    }

    fn get(&self, path: &str) -> (u16, Json) {
        Self::read(self.agent.get(format!("{}{path}", self.base)).call())
    }

    fn delete(&self, path: &str) -> (u16, Json) {
        Self::read(self.agent.delete(format!("{}{path}", self.base)).call())
    }

    fn post(&self, path: &str, body: &str) -> (u16, Json) {
        Self::read(self.agent.post(format!("{}{path}", self.base)).send(body))
    }

    fn put(&self, path: &str, body: &str) -> (u16, Json) {
        Self::read(self.agent.put(format!("{}{path}", self.base)).send(body))
    }

    fn lines(&self, path: &str) -> impl Iterator<Item = Json> {
        let r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        assert_eq!(r.headers()["content-type"], "application/x-ndjson");
        BufReader::new(r.into_body().into_reader()).lines().map(|l| serde_json::from_str(&l.unwrap()).unwrap())
    }
}

fn serve(demo: &Demo) -> (Server, Http) {
    let server = spawn(demo.container.clone(), "127.0.0.1:0").unwrap();
    let http = Http::new(&server);
    (server, http)
}

fn actions(reply: &Json) -> Vec<&str> {
    reply["events"].as_array().unwrap().iter().map(|e| e["action"].as_str().unwrap()).collect()
}

#[test]
fn listings_and_invoke() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let (status, instances) = http.get("/api/instances");
    assert_eq!(status, 200);
    assert_eq!(instances.as_array().unwrap().len(), 4);
    assert_eq!(http.get("/api/components").1.as_array().unwrap().len(), 4);
    assert_eq!(http.get("/api/connections").1.as_array().unwrap().len(), 3);
    let graph = http.get("/api/graph").1;
    assert_eq!(graph["edges"].as_array().unwrap().len(), 3);

    let (status, reply) = http.post("/api/instances/ui/invoke", r#"{"method":"process","args":["cat"]}"#);
    assert_eq!(status, 200);
    assert_eq!(reply["result"], "3");
}

#[test]
fn errors_carry_code_message_and_subject() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let (status, err) = http.delete("/api/instances/nobody");
    assert_eq!(status, 404);
    assert_eq!(err["code"], "UnknownId");
    assert!(err["message"].as_str().unwrap().contains("nobody"));
    assert!(err.get("subject").is_some());

    let (status, err) = http.post("/api/instances", "{ nope");
    assert_eq!((status, err["code"].as_str()), (400, Some("BadRequest")));

    let (status, err) = http.post("/api/connections", r#"{"id":"x","from":"ui:finder","to":"documents:listing"}"#);
    assert!(status >= 400, "{status}");
    assert_eq!(err["code"], "IllegalState");

    assert_eq!(http.get("/api/nowhere").0, 404);
}

#[test]
fn swap_answers_202_and_release_arrives_on_the_stream() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let pkg = std::fs::read(demo.root.path().join("extra/search-2.0.0.pkg")).unwrap();
    let (status, loaded) = Http::read(http.agent.post(format!("{}/api/components", http.base)).send(&pkg[..]));
    assert_eq!(status, 200);
    assert_eq!(actions(&loaded), ["Loaded"]);

    let adapter = eight::demo::file("adapters/userinterface-search.rhai").unwrap();
    let body = json!({
        "component": "search@2.0.0",
        "rebind": [
            { "connection": "ui-finder", "adapter": { "script": adapter, "parameters": { "dir": "searchPath" } } },
            { "connection": "search-documents" },
        ],
    });
    let (status, reply) = http.post("/api/instances/search/swap", &body.to_string());
    assert_eq!(status, 202, "{reply}");
    assert_eq!(actions(&reply), ["Instantiated", "Activated", "Rebound", "DrainStarted"]);
    let cursor = reply["events"][0]["seq"].as_u64().unwrap() - 1;

    let tail: Vec<Json> = http.lines(&format!("/api/events?cursor={cursor}&follow=true")).take(5).collect();
    let names: Vec<_> = tail.iter().map(|e| e["action"].as_str().unwrap()).collect();
    assert_eq!(names, ["Instantiated", "Activated", "Rebound", "DrainStarted", "Released"]);
    assert_eq!(tail[4]["detail"]["in_flight"], 0);

    let (_, reply) = http.post("/api/instances/ui/invoke", r#"{"method":"process","args":["cat"]}"#);
    assert_eq!(reply["result"], "3");
}

#[test]
fn rejected_swap_changes_nothing() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    demo.load_extra("search-2.0.0");
    let seq = demo.container.events().last_seq();
    let (status, err) = http.post("/api/instances/search/swap", r#"{"component":"search@2.0.0","rebind":[]}"#);
    assert_eq!((status, err["code"].as_str()), (400, Some("RebindIncomplete")));
    assert_eq!(demo.container.events().last_seq(), seq);
}

#[test]
fn followed_stream_delivers_new_events_promptly() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let cursor = demo.container.events().last_seq();
    let mut stream = http.lines(&format!("/api/events?cursor={cursor}"));
    let c = demo.container.clone();
    let started = Instant::now();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(100));
        c.remove_connection("ui-formatter").unwrap();
    });
    let event = stream.next().unwrap();
    assert_eq!(event["subject"], "ui-formatter");
    assert_eq!(event["seq"].as_u64(), Some(cursor + 1));
    assert!(started.elapsed() < Duration::from_secs(1));
}

#[test]
fn stale_cursor_yields_an_error_line_then_the_retained_tail() {
    let c = eight::Container::new(eight::ContainerOptions { event_capacity: 3, ..Default::default() });
    for name in eight::demo::package_names() {
        c.load_bytes(&eight::demo::package(name).unwrap(), name).unwrap();
    }
    let server = spawn(c, "127.0.0.1:0").unwrap();
    let http = Http::new(&server);
    let lines: Vec<Json> = http.lines("/api/events?cursor=1&follow=false").collect();
    assert_eq!(lines[0]["code"], "CursorTooOld");
    let seqs: Vec<_> = lines[1..].iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, [5, 6, 7]);
}

#[test]
fn relink_and_adapter_routes() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let (status, reply) = http.put("/api/connections/ui-finder/adapter", r#"{"script":"context.process(\"next\").process(input) + 1"}"#);
    assert_eq!(status, 200, "{reply}");
    assert_eq!(actions(&reply), ["Rebound"]);
    assert_eq!(http.post("/api/instances/ui/invoke", r#"{"method":"process","args":["cat"]}"#).1["result"], "4");

    let (status, _) = http.put("/api/connections/ui-finder", r#"{"adapter":null}"#);
    assert_eq!(status, 200);
    assert_eq!(http.post("/api/instances/ui/invoke", r#"{"method":"process","args":["cat"]}"#).1["result"], "3");

    let (status, err) = http.put("/api/connections/ui-finder/adapter", r#"{"script_file":"x.rhai"}"#);
    assert_eq!(status, 400, "{err}");
}

#[test]
fn ism_routes() {
    let demo = Demo::boot();
    let (_server, http) = serve(&demo);
    let (status, model) = http.post("/api/ism/model", r#"{"context":"s"}"#);
    assert_eq!(status, 200);
    assert_eq!(model["applications"].as_array().unwrap().len(), 2);

    let (_, cert) = http.post("/api/ism/certify", "");
    assert_eq!(cert["ideal"], true);

    let monolith: Json = serde_json::from_str(eight::demo::file("models/search.json").unwrap()).unwrap();
    let body = json!({ "model": monolith, "context": "o", "change": ["search.Document.self"] });
    let (status, scope) = http.post("/api/ism/scope", &body.to_string());
    assert_eq!(status, 200, "{scope}");
    assert_eq!(scope["modules"].as_array().unwrap().len(), 4);

    let (_, cert) = http.post("/api/ism/certify", &json!({ "model": monolith }).to_string());
    assert_eq!(cert["ideal"], false);
}

#[test]
fn instance_and_connection_lifecycle_over_http() {
    let demo = Demo::boot();
    demo.load_extra("echo-1.0.0");
    let (_server, http) = serve(&demo);
    let (status, reply) = http.post("/api/instances", r#"{"id":"echo","component":"echo@1.0.0"}"#);
    assert_eq!(status, 200, "{reply}");
    assert_eq!(actions(&reply), ["Instantiated", "Activated"]);
    let (status, reply) = http.put("/api/connections/ui-finder", r#"{"to":"echo:main"}"#);
    assert_eq!(status, 200, "{reply}");
    assert_eq!(http.post("/api/instances/ui/invoke", r#"{"method":"process","args":["hi"]}"#).1["result"], "hi");
    let (status, reply) = http.delete("/api/instances/echo");
    assert_eq!(status, 200);
    assert_eq!(actions(&reply), ["ConfigChanged", "DrainStarted", "Released"]);
    assert!(reply["command"].as_u64().unwrap() >= 3);
}
