//! Runs every role as a separate `ballotchain` process on localhost.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ballotchain");

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn run(args: &[&str]) -> Output {
    let out = Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!(
            "{} failed:\n{}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Child processes killed on drop, so a failing test cleans up.
struct Procs(Vec<Child>);

impl Procs {
    fn spawn(&mut self, log: &Path, args: &[&str]) {
        let log = std::fs::File::create(log).unwrap();
        let child = Command::new(BIN)
            .args(args)
            .env("RUST_LOG", "info")
            .stdout(Stdio::null())
            .stderr(log)
            .spawn()
            .unwrap();
        self.0.push(child);
    }
}

impl Drop for Procs {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into()
}

fn get(url: &str) -> Option<(u16, String)> {
    let mut resp = agent().get(url).call().ok()?;
    Some((
        resp.status().as_u16(),
        resp.body_mut().read_to_string().ok()?,
    ))
}

fn post(url: &str, body: &str) -> (u16, String) {
    let mut resp = agent().post(url).send(body.as_bytes()).unwrap();
    (
        resp.status().as_u16(),
        resp.body_mut().read_to_string().unwrap(),
    )
}

fn wait_until(what: &str, timeout: Duration, mut f: impl FnMut() -> bool) {
    let deadline = Instant::now() + timeout;
    while !f() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(100));
    }
}

fn voters(dir: &Path) -> Vec<(String, String)> {
    std::fs::read_to_string(dir.join("voters.csv"))
        .unwrap()
        .lines()
        .map(|l| {
            let (v, c) = l.split_once(',').unwrap();
            (v.to_owned(), c.to_owned())
        })
        .collect()
}

fn init(dir: &Path, addresses: &str) {
    let out = run(&[
        "election",
        "init",
        "--dir",
        dir.to_str().unwrap(),
        "--election-id",
        "net-test",
        "--candidates",
        "Alice,Bob,Carol",
        "--toy",
        "--seed",
        "11",
        "--voters",
        "4",
        "--validator-addresses",
        addresses,
        "--anchor-blocks",
        "2",
        "--anchor-seconds",
        "1",
        "--tick-ms",
        "10",
    ]);
    assert!(out.status.success());
}

struct Network {
    dir: PathBuf,
    gateway: String,
    mockchain_url: String,
    gateway_args: Vec<String>,
    _procs: Procs,
}

fn start(dir: &Path) -> Network {
    let vports: Vec<u16> = (0..4).map(|_| free_port()).collect();
    let addresses = vports
        .iter()
        .map(|p| format!("127.0.0.1:{p}"))
        .collect::<Vec<_>>()
        .join(",");
    init(dir, &addresses);
    let logs = dir.join("logs");
    std::fs::create_dir_all(&logs).unwrap();
    let d = dir.to_str().unwrap();
    let (mport, rport, gport) = (free_port(), free_port(), free_port());
    let mockchain_url = format!("http://127.0.0.1:{mport}");
    let registrar_url = format!("http://127.0.0.1:{rport}");
    let gateway = format!("http://127.0.0.1:{gport}");
    let mut procs = Procs(Vec::new());
    let chain_file = dir.join("mockchain.jsonl");
    procs.spawn(
        &logs.join("mockchain.log"),
        &[
            "mockchain",
            "serve",
            "--file",
            chain_file.to_str().unwrap(),
            "--listen",
            &format!("127.0.0.1:{mport}"),
        ],
    );
    procs.spawn(
        &logs.join("registrar.log"),
        &[
            "registrar",
            "serve",
            "--dir",
            d,
            "--listen",
            &format!("127.0.0.1:{rport}"),
        ],
    );
    for id in 0..4 {
        procs.spawn(
            &logs.join(format!("validator-{id}.log")),
            &["validator", "serve", "--dir", d, "--id", &id.to_string()],
        );
    }
    let gateway_args: Vec<String> = [
        "gateway",
        "serve",
        "--dir",
        d,
        "--listen",
        &format!("127.0.0.1:{gport}"),
        "--registrar",
        &registrar_url,
        "--mockchain",
        &mockchain_url,
        "--sync-ms",
        "50",
    ]
    .map(String::from)
    .to_vec();
    procs.spawn(&logs.join("gateway.log"), &strs(&gateway_args));
    wait_until("gateway", Duration::from_secs(30), || {
        get(&format!("{gateway}/api/status")).is_some_and(|(s, _)| s == 200)
    });
    Network {
        dir: dir.to_owned(),
        gateway,
        mockchain_url,
        gateway_args,
        _procs: procs,
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn separate_processes_vote_close_tally_and_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let net = start(tmp.path());
    let gw = net.gateway.as_str();
    let d = net.dir.as_path();
    let voters = voters(d);
    let choices = ["Alice", "Bob", "Alice"];

    for ((voter, credential), candidate) in voters.iter().zip(choices) {
        let out = run(&[
            "vote",
            "--gateway",
            gw,
            "--voter-id",
            voter,
            "--credential",
            credential,
            "--candidate",
            candidate,
            "--wait-secs",
            "60",
            "--mockchain",
            &net.mockchain_url,
        ]);
        assert!(out.status.success(), "vote for {voter}");
        let text = stdout(&out);
        assert!(text.contains("verify: local true server true"), "{text}");
        assert!(text.contains("public chain: anchor"), "{text}");
    }

    // A second check-in for the same voter is refused by the registrar.
    let (voter, credential) = &voters[0];
    let out = run(&[
        "vote",
        "--gateway",
        gw,
        "--voter-id",
        voter,
        "--credential",
        credential,
        "--candidate",
        "Bob",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("409 AlreadyIssued"));

    // Sealed mode: no counts before the trustees have run.
    let (_, body) = get(&format!("{gw}/api/results")).unwrap();
    assert!(json(&body)["counts"].is_null(), "{body}");
    let (status, _) = post(&format!("{gw}/api/close"), r#"{"credential":"wrong"}"#);
    assert_eq!(status, 403);

    let operator = d.join("operator.secret");
    let out = run(&[
        "election",
        "close",
        "--gateway",
        gw,
        "--operator-file",
        operator.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(json(&stdout(&out))["ballots"], 3);

    // The fourth voter is too late.
    let (voter, credential) = &voters[3];
    let out = run(&[
        "vote",
        "--gateway",
        gw,
        "--voter-id",
        voter,
        "--credential",
        credential,
        "--candidate",
        "Bob",
    ]);
    assert!(!out.status.success());

    for t in ["t1", "t3", "t5"] {
        let share = d.join("trustees").join(format!("{t}.share.json"));
        let out = run(&[
            "trustee",
            "decrypt",
            "--share",
            share.to_str().unwrap(),
            "--gateway",
            gw,
        ]);
        assert!(out.status.success(), "trustee {t}");
    }
    let out = run(&["election", "results", "--gateway", gw]);
    assert!(out.status.success());
    let results = json(&stdout(&out));
    assert_eq!(results["status"], "final", "{results}");
    assert_eq!(results["counts"]["Alice"], 2);
    assert_eq!(results["counts"]["Bob"], 1);
    assert_eq!(results["counts"]["Carol"], 0);
    assert_eq!(results["crosscheck_passed"], true);

    // Every validator holds the same chain; a lagging one holds a prefix.
    // Certificates may carry different signer sets, so compare hashes.
    let ledger0 = std::fs::read_to_string(d.join("validator-0/ledger.jsonl")).unwrap();
    let hashes =
        |text: &str| -> Vec<Value> { text.lines().map(|l| json(l)["hash"].clone()).collect() };
    let h0 = hashes(&ledger0);
    for k in 1..4 {
        let hk = hashes(
            &std::fs::read_to_string(d.join(format!("validator-{k}/ledger.jsonl"))).unwrap(),
        );
        let n = h0.len().min(hk.len());
        assert!(n > 1 && h0[..n] == hk[..n], "validator {k} diverged");
    }
    let anchors = d.join("gateway/anchors.jsonl");
    let config = d.join("config.json");
    let audit = |ledger: &Path| {
        run(&[
            "audit",
            "verify",
            "--config",
            config.to_str().unwrap(),
            "--ledger",
            ledger.to_str().unwrap(),
            "--anchors",
            anchors.to_str().unwrap(),
            "--mockchain",
            &net.mockchain_url,
        ])
    };
    let out = audit(&d.join("validator-0/ledger.jsonl"));
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("audit passed"));

    // Flip one hex digit of a ballot ciphertext in a copy of the ledger.
    let tampered = d.join("tampered.jsonl");
    let at = ledger0.find("\"c1\":\"").expect("a ballot in the ledger") + 6;
    let mut bytes = ledger0.into_bytes();
    bytes[at] = if bytes[at] == b'1' { b'2' } else { b'1' };
    std::fs::write(&tampered, bytes).unwrap();
    let out = audit(&tampered);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("audit FAILED"));

    // Offline tally from files alone reaches the same counts.
    let frozen = d.join("gateway/frozen.json");
    let mut partials = Vec::new();
    for t in ["t2", "t4", "t5"] {
        let share = d.join("trustees").join(format!("{t}.share.json"));
        let out_file = d.join(format!("{t}.partials.json"));
        let out = run(&[
            "trustee",
            "decrypt",
            "--share",
            share.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--ballots",
            frozen.to_str().unwrap(),
            "--out",
            out_file.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        partials.push(out_file.to_str().unwrap().to_owned());
    }
    let ledger = d.join("validator-0/ledger.jsonl");
    let mut args = vec![
        "tally",
        "combine",
        "--config",
        config.to_str().unwrap(),
        "--ballots",
        frozen.to_str().unwrap(),
        "--ledger",
        ledger.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
        "--mockchain",
        &net.mockchain_url,
        "--partials",
    ];
    args.extend(partials.iter().map(String::as_str));
    let out = run(&args);
    assert!(out.status.success());
    let offline = json(&stdout(&out));
    assert_eq!(offline["counts"], results["counts"]);
    assert_eq!(offline["crosscheck_passed"], true);
}

#[test]
fn init_refuses_to_overwrite_and_writes_secret_files_private() {
    let tmp = tempfile::tempdir().unwrap();
    init(
        tmp.path(),
        "127.0.0.1:1,127.0.0.1:2,127.0.0.1:3,127.0.0.1:4",
    );
    let out = Command::new(BIN)
        .args([
            "election",
            "init",
            "--dir",
            tmp.path().to_str().unwrap(),
            "--candidates",
            "A,B",
            "--toy",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        for f in [
            "registrar.key.json",
            "operator.secret",
            "trustees/t1.share.json",
            "validators/validator-0.json",
        ] {
            let mode = std::fs::metadata(tmp.path().join(f))
                .unwrap()
                .permissions()
                .mode();
            assert_eq!(mode & 0o077, 0, "{f} is readable by others");
        }
        let mode = std::fs::metadata(tmp.path().join("config.json"))
            .unwrap()
            .permissions()
            .mode();
        assert_ne!(mode & 0o044, 0);
    }
    assert_eq!(voters(tmp.path()).len(), 4);
    let config = json(&std::fs::read_to_string(tmp.path().join("config.json")).unwrap());
    assert_eq!(config["election_id"], "net-test");
    assert!(!config.to_string().contains(&voters(tmp.path())[0].1));
}

#[test]
fn audit_of_genesis_only_ledger_with_no_anchors_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    init(d, "127.0.0.1:1,127.0.0.1:2,127.0.0.1:3,127.0.0.1:4");
    let genesis = std::fs::read_to_string(d.join("genesis.json")).unwrap();
    std::fs::write(d.join("ledger.jsonl"), genesis).unwrap();
    std::fs::write(d.join("anchors.jsonl"), "").unwrap();
    std::fs::write(d.join("chain.jsonl"), "").unwrap();
    let out = run(&[
        "audit",
        "verify",
        "--config",
        d.join("config.json").to_str().unwrap(),
        "--ledger",
        d.join("ledger.jsonl").to_str().unwrap(),
        "--anchors",
        d.join("anchors.jsonl").to_str().unwrap(),
        "--mockchain",
        d.join("chain.jsonl").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
}

#[test]
fn restarted_validator_replays_its_ledger_and_catches_up() {
    let tmp = tempfile::tempdir().unwrap();
    let mut net = start(tmp.path());
    let gw = net.gateway.clone();
    let d = net.dir.clone();
    let voters = voters(&d);
    let cast = |i: usize| {
        let (voter, credential) = &voters[i];
        let out = run(&[
            "vote",
            "--gateway",
            &gw,
            "--voter-id",
            voter,
            "--credential",
            credential,
            "--candidate",
            "Carol",
            "--wait-secs",
            "60",
        ]);
        assert!(out.status.success());
    };
    cast(0);

    // Processes are mockchain, registrar, validators 0..4, gateway.
    let v3 = &mut net._procs.0[5];
    v3.kill().unwrap();
    v3.wait().unwrap();
    let ledger3 = d.join("validator-3/ledger.jsonl");
    let before = std::fs::read_to_string(&ledger3).unwrap().lines().count();
    cast(1);
    cast(2);
    let status: Value = json(&get(&format!("{gw}/api/status")).unwrap().1);
    let height = status["height"].as_u64().unwrap() as usize;
    assert!(height + 1 > before);

    net._procs.spawn(
        &d.join("logs/validator-3-restart.log"),
        &[
            "validator",
            "serve",
            "--dir",
            d.to_str().unwrap(),
            "--id",
            "3",
        ],
    );
    wait_until("validator 3 to catch up", Duration::from_secs(30), || {
        std::fs::read_to_string(&ledger3).unwrap().lines().count() > height
    });
    let lines: Vec<Value> = std::fs::read_to_string(&ledger3)
        .unwrap()
        .lines()
        .map(json)
        .collect();
    let indices: Vec<u64> = lines.iter().map(|b| b["index"].as_u64().unwrap()).collect();
    assert_eq!(
        indices,
        (0..indices.len() as u64).collect::<Vec<_>>(),
        "no gaps or repeats"
    );
}

#[test]
fn restarted_gateway_gives_the_same_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let mut net = start(tmp.path());
    let gw = net.gateway.clone();
    let d = net.dir.clone();
    let voters = voters(&d);
    let mut receipts = Vec::new();
    for (voter, credential) in &voters[..2] {
        let out = run(&[
            "vote",
            "--gateway",
            &gw,
            "--voter-id",
            voter,
            "--credential",
            credential,
            "--candidate",
            "Bob",
        ]);
        assert!(out.status.success());
        let text = stdout(&out);
        let hash = text
            .lines()
            .next()
            .unwrap()
            .strip_prefix("ballot_hash ")
            .unwrap()
            .to_owned();
        receipts.push(hash);
    }
    let operator = d.join("operator.secret");
    let out = run(&[
        "election",
        "close",
        "--gateway",
        &gw,
        "--operator-file",
        operator.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let share = d.join("trustees/t1.share.json");
    assert!(run(&[
        "trustee",
        "decrypt",
        "--share",
        share.to_str().unwrap(),
        "--gateway",
        &gw
    ])
    .status
    .success());

    let snapshot = |paths: &[String]| -> Vec<String> {
        paths
            .iter()
            .map(|p| {
                get(&format!("{gw}{p}"))
                    .unwrap_or_else(|| panic!("GET {p}"))
                    .1
            })
            .collect()
    };
    let mut paths: Vec<String> = [
        "/api/anchors",
        "/api/tally/ballots",
        "/api/results",
        "/api/config",
    ]
    .map(String::from)
    .to_vec();
    paths.extend(receipts.iter().map(|h| format!("/api/receipt/{h}")));
    let before = snapshot(&paths);
    let verdicts = |receipts: &[String]| -> Vec<String> {
        receipts
            .iter()
            .map(|h| {
                let r = json(&get(&format!("{gw}/api/receipt/{h}")).unwrap().1);
                let body = serde_json::json!({
                    "ballot_hash": r["ballot_hash"],
                    "merkle_proof": r["merkle_proof"],
                    "anchor_txid": r["anchor_txid"],
                });
                post(&format!("{gw}/api/verify"), &body.to_string()).1
            })
            .collect()
    };
    let verified = verdicts(&receipts);
    let height = json(&get(&format!("{gw}/api/status")).unwrap().1)["height"].clone();
    assert!(
        verified.iter().all(|v| json(v)["valid"] == true),
        "{verified:?}"
    );

    // Processes are mockchain, registrar, validators 0..4, gateway.
    let old = &mut net._procs.0[6];
    old.kill().unwrap();
    old.wait().unwrap();
    net._procs.spawn(
        &d.join("logs/gateway-restart.log"),
        &strs(&net.gateway_args),
    );
    wait_until("gateway restart", Duration::from_secs(30), || {
        get(&format!("{gw}/api/status"))
            .is_some_and(|(s, b)| s == 200 && json(&b)["height"] == height)
    });
    assert_eq!(snapshot(&paths), before);
    assert_eq!(verdicts(&receipts), verified);

    // The first trustee's partials were journaled; two more finish the count.
    for t in ["t2", "t3"] {
        let share = d.join(format!("trustees/{t}.share.json"));
        let out = run(&[
            "trustee",
            "decrypt",
            "--share",
            share.to_str().unwrap(),
            "--gateway",
            &gw,
        ]);
        assert!(out.status.success());
    }
    let results = json(&get(&format!("{gw}/api/results")).unwrap().1);
    assert_eq!(results["status"], "final");
    assert_eq!(results["counts"]["Bob"], 2);
}

#[test]
fn demo_serves_live_results() {
    use std::io::{BufRead, BufReader};
    let port = free_port();
    let gw = format!("http://127.0.0.1:{port}");
    let mut child = Command::new(BIN)
        .args([
            "demo",
            "--listen",
            &format!("127.0.0.1:{port}"),
            "--voters",
            "2",
            "--seed",
            "5",
            "--tick-ms",
            "5",
        ])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut voters = Vec::new();
    for line in BufReader::new(child.stdout.take().unwrap()).lines() {
        let line = line.unwrap();
        if let Some(rest) = line.strip_prefix("voter ") {
            let (v, c) = rest.split_once(' ').unwrap();
            voters.push((v.to_owned(), c.to_owned()));
            if voters.len() == 2 {
                break;
            }
        }
    }
    let _procs = Procs(vec![child]);
    wait_until("demo gateway", Duration::from_secs(30), || {
        get(&format!("{gw}/api/status")).is_some()
    });
    for (voter, credential) in &voters {
        let out = run(&[
            "vote",
            "--gateway",
            &gw,
            "--voter-id",
            voter,
            "--credential",
            credential,
            "--candidate",
            "Carol",
            "--wait-secs",
            "0",
        ]);
        assert!(out.status.success());
    }
    wait_until("live counts", Duration::from_secs(30), || {
        let results = json(&get(&format!("{gw}/api/results")).unwrap().1);
        results["mode"] == "demo" && results["counts"]["Carol"] == 2
    });
    let chain = json(&get(&format!("{gw}/api/chain")).unwrap().1);
    let labels: Vec<&Value> = chain["rows"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r["candidates"].as_array().into_iter().flatten())
        .collect();
    assert_eq!(labels, [&Value::from("Carol"), &Value::from("Carol")]);
}

#[test]
fn init_imports_an_existing_roster() {
    let tmp = tempfile::tempdir().unwrap();
    let roster = tmp.path().join("voters.csv");
    let text = format!("v-1,{}\nv-2,{}\n", "ab".repeat(32), "cd".repeat(32));
    std::fs::write(&roster, &text).unwrap();
    let dir = tmp.path().join("e");
    let base = [
        "election",
        "init",
        "--dir",
        dir.to_str().unwrap(),
        "--candidates",
        "A,B",
        "--toy",
        "--seed",
        "3",
        "--roster",
    ];
    let out = Command::new(BIN).args(base).arg(&roster).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("(2 voters)"));
    assert_eq!(
        std::fs::read_to_string(dir.join("roster.csv")).unwrap(),
        text
    );

    std::fs::write(&roster, "v-1,not-hex\n").unwrap();
    let other = tmp.path().join("f");
    let mut args = base;
    args[3] = other.to_str().unwrap();
    let out = Command::new(BIN).args(args).arg(&roster).output().unwrap();
    assert!(!out.status.success());
    assert!(!other.exists());
}
