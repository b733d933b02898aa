//! Credential hygiene and the offline guarantee of `--mock`.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::{core_fixture, dba, files_under, run, small_grid, stage_images, Run, KEY_VARS};

const PERIMETER: &str = "31 Caroline St. N, Waterloo";

fn sentinel(var: &str) -> String {
    format!("sentinel-{}-7f3a9c", var.to_ascii_lowercase())
}

fn with_keys(cmd: &mut std::process::Command) -> &mut std::process::Command {
    for v in KEY_VARS {
        cmd.env(v, sentinel(v));
    }
    cmd
}

fn assert_clean(label: &str, text: &str) {
    for v in KEY_VARS {
        assert!(!text.contains(&sentinel(v)), "{label} leaks {v}");
    }
}

fn assert_run_clean(label: &str, r: &Run) {
    assert_clean(&format!("{label} stdout"), &r.stdout);
    assert_clean(&format!("{label} stderr"), &r.stderr);
}

fn assert_tree_clean(root: &Path) {
    for f in files_under(root) {
        let bytes = std::fs::read(&f).unwrap();
        assert_clean(&f.display().to_string(), &String::from_utf8_lossy(&bytes));
    }
}

/// Serves one canned body to every request and remembers request lines.
struct FakeService {
    base: String,
    lines: Arc<Mutex<Vec<String>>>,
}

fn handle(mut stream: TcpStream, body: &[u8], lines: &Mutex<Vec<String>>) {
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut first = String::new();
    if reader.read_line(&mut first).is_err() {
        return;
    }
    lines.lock().unwrap().push(first.trim().to_string());
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
        if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut sink = vec![0u8; content_length];
    let _ = reader.read_exact(&mut sink);
    let head = format!(
        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body);
}

impl FakeService {
    fn start(body: Vec<u8>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let lines = Arc::new(Mutex::new(Vec::new()));
        let log = lines.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                handle(stream, &body, &log);
            }
        });
        FakeService { base, lines }
    }
}

#[test]
fn recorded_cassette_omits_the_key_that_went_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let body = std::fs::read(core_fixture("bodies/perimeter_geocode.json")).unwrap();
    let service = FakeService::start(body);
    let r = run(with_keys(dba(dir.path()).env("MAPS_BASE_URL", &service.base)).args([
        "--record",
        "rec.json",
        "geocode",
        "--address",
        PERIMETER,
    ]));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines = service.lines.lock().unwrap().clone();
    assert_eq!(lines.len(), 1);
    // The key really was sent...
    assert!(lines[0].contains(&sentinel("MAPS_API_KEY")), "{lines:?}");
    // ...and appears nowhere we wrote.
    assert_run_clean("record geocode", &r);
    assert!(dir.path().join("rec.json").is_file());
    assert_tree_clean(dir.path());

    // The recording replays offline without any key.
    let replay = run(dba(dir.path()).args(["--no-cache", "--replay", "rec.json", "geocode", "--address", PERIMETER]));
    assert_eq!(replay.code, 0, "{}", replay.stderr);
}

#[test]
fn no_command_leaks_credentials() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    stage_images(&work.join("imgs"), 8);
    let grid = small_grid(work, "kind = \"mock\"");
    let cassette = core_fixture("cassettes/perimeter_bundle.json");

    let runs = [
        run(with_keys(&mut dba(work)).arg("--replay").arg(&cassette).args(["geocode", "--address", PERIMETER])),
        run(with_keys(&mut dba(work)).arg("--replay").arg(&cassette).args(["fetch", "--address", PERIMETER, "--out", "b"])),
        run(with_keys(&mut dba(work)).args(["--mock", "caption", "--images", "imgs", "--out", "caption.json"])),
        run(with_keys(&mut dba(work)).arg("--mock").arg("experiment").arg("--grid").arg(&grid).args(["--out", "run"])),
        run(with_keys(&mut dba(work)).args(["report", "--run", "run"])),
        // failure paths print errors; those must be clean too
        run(with_keys(&mut dba(work)).arg("--replay").arg(&cassette).args(["geocode", "--address", "Elsewhere 9"])),
    ];
    for (i, r) in runs.iter().enumerate() {
        assert_run_clean(&format!("command {i}"), r);
    }
    assert!(runs[..5].iter().all(|r| r.code == 0));
    assert_eq!(runs[5].code, 1);
    assert_tree_clean(work);
}

#[test]
fn mock_mode_opens_no_sockets() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    stage_images(&work.join("imgs"), 4);
    let grid = small_grid(work, &format!("kind = \"remote\"\nbase_url = \"{base}\""));

    let point_everything_at_listener = |cmd: &mut std::process::Command| {
        with_keys(cmd);
        for v in ["MAPS_BASE_URL", "OPENAI_BASE_URL", "DEEPSEEK_BASE_URL"] {
            cmd.env(v, &base);
        }
        // any proxy would also have to go through the listener
        cmd.env("HTTP_PROXY", &base).env("HTTPS_PROXY", &base).env("ALL_PROXY", &base);
    };
    let invocations: Vec<Vec<String>> = vec![
        vec!["geocode", "--address", PERIMETER],
        vec!["geocode", "--latlng", "43.4643,-80.5204"],
        vec!["fetch", "--place", "Perimeter Institute", "--out", "b", "--roadmaps"],
        vec!["caption", "--images", "imgs"],
        vec!["experiment", "--grid", grid.to_str().unwrap(), "--out", "run"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();

    for args in &invocations {
        let mut cmd = dba(work);
        point_everything_at_listener(&mut cmd);
        let r = run(cmd.arg("--mock").args(args));
        assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
        let mut peers = Vec::new();
        while let Ok((_, peer)) = listener.accept() {
            peers.push(peer);
        }
        assert!(peers.is_empty(), "{args:?} connected to the guard socket from {peers:?}");
    }

    // Control: without --mock the same environment does reach the listener.
    let mut cmd = dba(work);
    point_everything_at_listener(&mut cmd);
    let mut child = cmd.args(["--no-cache", "geocode", "--address", PERIMETER]).spawn().unwrap();
    let mut reached = false;
    for _ in 0..200 {
        if listener.accept().is_ok() {
            reached = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(25));
    }
    let _ = child.kill();
    let _ = child.wait();
    assert!(reached, "the guard never sees live traffic, so it proves nothing");
}
