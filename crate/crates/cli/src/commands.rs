//! Offline and client-side subcommands.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use ballotchain_core::anchoring::{
    check_contiguous, verify_anchor, AnchorJournal, AnchorPayload, MockChain,
};
use ballotchain_core::canonical::{self, to_canonical};
use ballotchain_core::consensus::NetParams;
use ballotchain_core::crypto::merkle_verify;
use ballotchain_core::gateway::*;
use ballotchain_core::ledger::store::{audit_lines, read_ledger_lines};
use ballotchain_core::registrar::{demo_roster, parse_roster, Registrar};
use ballotchain_core::tally::{
    combine_tally, compute_partials, crosscheck, PartialSubmission, TallyResult,
};
use ballotchain_core::{
    build_ballot_for, generate_election, AnchorPolicy, Block, Credential, Election, ElectionConfig,
    Gateway, Mode, PendingToken, SetupParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::files::{load_config, load_share, read_canonical, write_canonical, ElectionDir};
use crate::http::{self, open_public_chain, HttpChain, RegistrarService};
use crate::remote::{RemoteBackend, RemoteOptions};

fn rng_from(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

pub struct InitOptions {
    pub dir: PathBuf,
    pub election_id: String,
    pub candidates: Vec<String>,
    pub validators: usize,
    pub trustees: usize,
    pub threshold: usize,
    pub mode: Mode,
    pub toy: bool,
    pub voters: usize,
    /// Existing `voter_id,credential_hash` roster to use instead.
    pub roster: Option<PathBuf>,
    pub validator_addresses: Vec<String>,
    pub base_port: u16,
    pub anchor_blocks: u64,
    pub anchor_seconds: u64,
    pub tick_ms: Option<u64>,
    pub close_time: Option<u64>,
    pub seed: Option<u64>,
}

fn setup_params(opts: &InitOptions) -> Result<SetupParams> {
    let candidates: Vec<&str> = opts.candidates.iter().map(String::as_str).collect();
    let mut params = if opts.toy {
        SetupParams::toy(&opts.election_id, &candidates, opts.validators)
    } else {
        SetupParams::production(&opts.election_id, &candidates, opts.validators)
    };
    params.mode = opts.mode;
    params.validator_addresses = if opts.validator_addresses.is_empty() {
        (0..opts.validators)
            .map(|k| format!("127.0.0.1:{}", opts.base_port as usize + k))
            .collect()
    } else {
        ensure!(
            opts.validator_addresses.len() == opts.validators,
            "need one address per validator"
        );
        opts.validator_addresses.clone()
    };
    params.trustee_ids = (1..=opts.trustees).map(|i| format!("t{i}")).collect();
    params.threshold = opts.threshold;
    params.anchor_policy = AnchorPolicy {
        blocks: opts.anchor_blocks,
        seconds: opts.anchor_seconds,
    };
    if let Some(ms) = opts.tick_ms {
        params.consensus.tick_ms = ms;
    }
    params.open_time = http::unix_now();
    params.close_time = opts.close_time;
    Ok(params)
}

pub fn init(opts: InitOptions) -> Result<()> {
    let params = setup_params(&opts)?;
    let imported = match &opts.roster {
        Some(path) => {
            ensure!(opts.voters == 0, "--roster and --voters are exclusive");
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let n = parse_roster(&text)
                .with_context(|| format!("parsing {}", path.display()))?
                .len();
            Some((text, n))
        }
        None => None,
    };
    let mut rng = rng_from(opts.seed);
    let setup = generate_election(&params, &mut rng)?;
    let voters = demo_roster(opts.voters, &mut rng);
    let dir = ElectionDir::new(&opts.dir);
    dir.write_setup(&setup, &voters)?;
    if let Some((text, _)) = &imported {
        std::fs::write(dir.roster_path(), text)?;
    }
    println!(
        "election {} written to {}",
        setup.config.election_id,
        opts.dir.display()
    );
    println!("  config      {}", dir.config_path().display());
    let roster_size = imported.map_or(voters.len(), |(_, n)| n);
    println!(
        "  roster      {} ({roster_size} voters)",
        dir.roster_path().display()
    );
    for v in &setup.config.validators {
        println!("  validator {} {}", v.id, v.address);
    }
    for t in &setup.trustee_shares {
        println!(
            "  trustee {} {}",
            t.trustee_id,
            dir.share_path(&t.trustee_id).display()
        );
    }
    Ok(())
}

pub fn registrar_serve(dir: &ElectionDir, listen: &str) -> Result<()> {
    let config = dir.config()?;
    let key = dir.registrar_key()?;
    ensure!(
        key.public() == config.registrar_key,
        "registrar key does not match the config"
    );
    std::fs::create_dir_all(dir.issuance_path().parent().unwrap())?;
    let registrar = Registrar::with_journal(
        config.election_id.clone(),
        key,
        dir.roster()?,
        dir.issuance_path(),
    )?;
    tracing::info!(
        "{} voters, {} already issued",
        registrar.roster_size(),
        registrar.issued_count()
    );
    http::serve(
        listen,
        http::registrar_router(Arc::new(RegistrarService { registrar })),
        "registrar",
    )
}

pub fn mockchain_serve(file: &Path, listen: &str) -> Result<()> {
    let chain = MockChain::open(file).with_context(|| format!("opening {}", file.display()))?;
    tracing::info!("{} transactions on record", chain.len());
    http::serve(listen, http::mockchain_router(Arc::new(chain)), "mockchain")
}

pub struct GatewayOptions {
    pub listen: String,
    pub registrar: String,
    pub mockchain: String,
    pub sync_ms: u64,
    pub close_timeout: Duration,
}

pub fn gateway_serve(dir: &ElectionDir, opts: GatewayOptions) -> Result<()> {
    let backend = RemoteBackend::open(
        dir,
        RemoteOptions {
            registrar_url: opts.registrar,
            public: Arc::new(HttpChain::new(&opts.mockchain)),
            sync_interval: Duration::from_millis(opts.sync_ms.max(1)),
            close_timeout: opts.close_timeout,
        },
    )?;
    backend.spawn_sync(Arc::new(AtomicBool::new(false)));
    http::serve(
        &opts.listen,
        http::gateway_router(Gateway::new(backend)),
        "gateway",
    )
}

/// Thin JSON client for the gateway API.
pub struct GatewayClient {
    url: String,
    agent: ureq::Agent,
}

impl GatewayClient {
    pub fn new(url: &str) -> Self {
        GatewayClient {
            url: url.trim_end_matches('/').to_owned(),
            agent: http::agent(Duration::from_secs(120)),
        }
    }

    pub fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.expect(
            http::call(&self.agent, "GET", &format!("{}{path}", self.url), None)?,
            path,
        )
    }

    pub fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl serde::Serialize,
    ) -> Result<T> {
        let body = canonical::to_canonical_bytes(body);
        self.expect(
            http::call(
                &self.agent,
                "POST",
                &format!("{}{path}", self.url),
                Some(&body),
            )?,
            path,
        )
    }

    fn expect<T: serde::de::DeserializeOwned>(
        &self,
        (status, body): (u16, String),
        path: &str,
    ) -> Result<T> {
        if status != 200 {
            match serde_json::from_str::<ApiError>(&body) {
                Ok(e) => bail!("{path}: {status} {}: {}", e.error, e.detail),
                Err(_) => bail!("{path}: {status}: {body}"),
            }
        }
        serde_json::from_str(&body).with_context(|| format!("{path}: unexpected body {body}"))
    }
}

pub struct VoteOptions {
    pub gateway: String,
    pub voter_id: String,
    pub credential: String,
    pub candidate: String,
    /// How long to wait for the receipt to be anchored; zero skips it.
    pub wait: Duration,
    /// Optional direct access to the public chain for an independent check.
    pub mockchain: Option<String>,
}

/// Blind check-in, cast, then receipt and verification, printing each step.
pub fn vote(opts: VoteOptions) -> Result<()> {
    let gw = GatewayClient::new(&opts.gateway);
    let config: ElectionConfig = gw.get("/api/config")?;
    let mut rng = ChaCha20Rng::from_entropy();
    let pending = PendingToken::new(&config.election_id, &config.registrar_key, &mut rng)?;
    let sig: CheckinResponse = gw.post(
        "/api/checkin",
        &CheckinRequest {
            voter_id: opts.voter_id.clone(),
            credential: opts.credential.clone(),
            blinded_value: pending.blinded().clone(),
        },
    )?;
    let token = pending.finish(&sig.blind_signature, &config.registrar_key)?;
    let tx = build_ballot_for(&config, &token, &opts.candidate, &mut rng)?;
    let cast: CastResponse = gw.post("/api/vote", &tx)?;
    ensure!(
        cast.ballot_hash == tx.compute_hash(),
        "gateway reported ballot hash {} but the ballot hashes to {}",
        cast.ballot_hash,
        tx.compute_hash()
    );
    println!("ballot_hash {}", cast.ballot_hash);
    if opts.wait.is_zero() {
        return Ok(());
    }
    let deadline = Instant::now() + opts.wait;
    let receipt = loop {
        let receipt: Option<Receipt> = gw.get(&format!("/api/receipt/{}", cast.ballot_hash)).ok();
        if let Some(r) = receipt.filter(|r| r.status == ReceiptStatus::Anchored) {
            break r;
        }
        ensure!(
            Instant::now() < deadline,
            "receipt not anchored within {:?}",
            opts.wait
        );
        std::thread::sleep(Duration::from_millis(250));
    };
    let proof = receipt
        .merkle_proof
        .clone()
        .context("anchored receipt without proof")?;
    let txid = receipt
        .anchor_txid
        .context("anchored receipt without txid")?;
    let root = receipt
        .anchor_root
        .context("anchored receipt without root")?;
    let local = merkle_verify(&cast.ballot_hash, &proof, &root);
    let server: VerifyResponse = gw.post(
        "/api/verify",
        &VerifyRequest {
            ballot_hash: cast.ballot_hash,
            merkle_proof: proof,
            anchor_txid: txid,
        },
    )?;
    if let Some(location) = &opts.mockchain {
        let chain = open_public_chain(location)?;
        let (payload, _) = chain
            .fetch(&txid)?
            .context("anchor txid not on the public chain")?;
        let payload = AnchorPayload::from_bytes(&payload)?;
        ensure!(
            payload.election_id == config.election_id,
            "public anchor names another election"
        );
        ensure!(
            payload.batch_root == root,
            "public anchor root differs from the receipt"
        );
        println!("public chain: anchor {} carries root {root}", txid);
    }
    println!("{}", to_canonical(&receipt));
    println!(
        "verify: local {} server {} ({})",
        local, server.valid, server.detail
    );
    ensure!(local == server.valid, "client and server verdicts disagree");
    ensure!(local, "receipt does not verify");
    Ok(())
}

pub struct TrusteeOptions {
    pub share: PathBuf,
    pub gateway: Option<String>,
    pub config: Option<PathBuf>,
    pub ballots: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Computes this trustee's partial decryptions of the frozen ballots and
/// submits them to the gateway and/or writes them to a file.
pub fn trustee_decrypt(opts: TrusteeOptions) -> Result<()> {
    let share = load_share(&opts.share)?;
    let gw = opts.gateway.as_deref().map(GatewayClient::new);
    let config: ElectionConfig = match (&opts.config, &gw) {
        (Some(path), _) => load_config(path)?,
        (None, Some(gw)) => gw.get("/api/config")?,
        (None, None) => bail!("need --config or --gateway"),
    };
    ensure!(
        share.election_id == config.election_id,
        "share is for election {:?}",
        share.election_id
    );
    let frozen: FrozenBallots = match (&opts.ballots, &gw) {
        (Some(path), _) => read_canonical(path)?,
        (None, Some(gw)) => gw.get("/api/tally/ballots")?,
        (None, None) => bail!("need --ballots or --gateway"),
    };
    let submission = compute_partials(&config, &share, &frozen.ballots);
    if let Some(out) = &opts.out {
        write_canonical(out, &submission, false)?;
        println!(
            "wrote {} partials to {}",
            submission.partials.len(),
            out.display()
        );
    }
    if let Some(gw) = &gw {
        let resp: PartialResponse = gw.post(
            "/api/tally/partial",
            &PartialRequest {
                credential: share.credential.secret().to_owned(),
                submission,
            },
        )?;
        println!(
            "submitted as {}; {}/{} trustees in{}",
            share.trustee_id,
            resp.submitted,
            resp.threshold,
            if resp.tallied { ", tally complete" } else { "" }
        );
    }
    Ok(())
}

pub struct CombineOptions {
    pub config: PathBuf,
    pub ballots: PathBuf,
    pub partials: Vec<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub mockchain: Option<String>,
}

/// Offline combine. With ledger, anchors and public chain the result is
/// cross-checked; without them `crosscheck_passed` stays false.
pub fn tally_combine(opts: CombineOptions) -> Result<TallyResult> {
    let config = load_config(&opts.config)?;
    let frozen: FrozenBallots = read_canonical(&opts.ballots)?;
    let subs: Vec<PartialSubmission> = opts
        .partials
        .iter()
        .map(|p| read_canonical(p))
        .collect::<Result<_>>()?;
    let refs: Vec<&PartialSubmission> = subs.iter().collect();
    let mut result = combine_tally(&config, &frozen.ballots, &refs)?;
    result.crosscheck_passed = false;
    match (&opts.ledger, &opts.anchors, &opts.mockchain) {
        (Some(ledger), Some(anchors), Some(chain)) => {
            let blocks = read_blocks(ledger)?;
            let anchors = AnchorJournal::open(anchors)?;
            let adapter = open_public_chain(chain)?;
            let report = crosscheck(
                &config,
                &blocks,
                anchors.records(),
                adapter.as_ref(),
                &frozen.ballots,
            );
            for p in &report.problems {
                eprintln!("crosscheck: {p}");
            }
            result.crosscheck_passed = report.passed() && result.undecryptable.is_empty();
        }
        (None, None, None) => {
            eprintln!("no --ledger/--anchors/--mockchain given; crosscheck not run")
        }
        _ => bail!("crosscheck needs all of --ledger, --anchors and --mockchain"),
    }
    Ok(result)
}

fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    read_ledger_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1)))
        .collect()
}

pub struct AuditOptions {
    pub config: PathBuf,
    pub ledger: PathBuf,
    pub anchors: PathBuf,
    pub mockchain: String,
}

/// Re-verifies a ledger file and its anchors from scratch. Returns the
/// number of problems found.
pub fn audit_verify(opts: AuditOptions) -> Result<usize> {
    let config = load_config(&opts.config)?;
    let lines = read_ledger_lines(&opts.ledger)?;
    let report = audit_lines(&lines, &config);
    let mut problems = 0;
    for f in &report.findings {
        println!("ledger: {f}");
        problems += 1;
    }
    let blocks: Vec<Block> = lines.into_iter().map_while(Result::ok).collect();
    let head = blocks.len().saturating_sub(1) as u64;
    println!(
        "ledger: {} blocks, {} findings",
        blocks.len(),
        report.findings.len()
    );
    let journal = AnchorJournal::open(&opts.anchors)?;
    let adapter = open_public_chain(&opts.mockchain)?;
    if !check_contiguous(journal.records()) {
        println!("anchors: ranges are not contiguous from block 1");
        problems += 1;
    }
    for r in journal.records() {
        let verdict = match verify_anchor(&blocks, r, &config.election_id, adapter.as_ref()) {
            Ok(true) => "ok".to_owned(),
            Ok(false) => {
                problems += 1;
                "MISMATCH".to_owned()
            }
            Err(e) => {
                problems += 1;
                format!("ERROR {e}")
            }
        };
        println!(
            "anchor {} blocks {}..={}: {verdict}",
            r.anchor_seq, r.first_block, r.last_block
        );
    }
    let covered = journal.last_anchored();
    if covered < head {
        println!(
            "anchors: blocks {}..={} not anchored yet",
            covered + 1,
            head
        );
    }
    println!(
        "{}",
        if problems == 0 {
            "audit passed"
        } else {
            "audit FAILED"
        }
    );
    Ok(problems)
}

pub struct DemoOptions {
    pub listen: String,
    pub voters: usize,
    pub candidates: Vec<String>,
    pub validators: usize,
    pub tick_ms: u64,
    pub seed: Option<u64>,
    pub production: bool,
}

/// Every role in one process: an in-memory cluster driven by a ticker
/// thread, served over HTTP. Demo mode, so results are live.
pub fn demo(opts: DemoOptions) -> Result<()> {
    let candidates: Vec<&str> = opts.candidates.iter().map(String::as_str).collect();
    let mut params = if opts.production {
        SetupParams::production("demo", &candidates, opts.validators)
    } else {
        SetupParams::toy("demo", &candidates, opts.validators)
    };
    params.mode = Mode::Demo;
    params.open_time = http::unix_now();
    params.anchor_policy = AnchorPolicy {
        blocks: 8,
        seconds: 30,
    };
    let mut rng = rng_from(opts.seed);
    let setup = generate_election(&params, &mut rng)?;
    let voters = demo_roster(opts.voters, &mut rng);
    let hashes: Vec<_> = voters.iter().map(|(_, c)| c.hash()).collect();
    let roster = parse_roster(&ballotchain_core::registrar::format_roster(
        voters.iter().map(|(v, _)| v.as_str()).zip(&hashes),
    ))?;
    let election = Arc::new(Election::new(
        &setup,
        roster,
        Arc::new(MockChain::in_memory()),
        NetParams::PERFECT,
        opts.seed.unwrap_or(0),
    ));
    println!("demo election, candidates {}", opts.candidates.join(", "));
    println!("operator credential {}", setup.operator_credential.secret());
    for t in &setup.trustee_shares {
        println!("trustee {} share {}", t.trustee_id, to_canonical(t));
    }
    for (v, c) in &voters {
        println!("voter {v} {}", Credential::secret(c));
    }
    let ticker = election.clone();
    let tick = Duration::from_millis(opts.tick_ms.max(1));
    std::thread::spawn(move || loop {
        std::thread::sleep(tick);
        ticker.step();
    });
    http::serve(
        &opts.listen,
        http::gateway_router(Gateway::new(election)),
        "demo gateway",
    )
}

/// Closes the election through the gateway with the operator credential.
pub fn close(gateway: &str, operator_file: &Path) -> Result<()> {
    let credential = std::fs::read_to_string(operator_file)
        .with_context(|| format!("reading {}", operator_file.display()))?
        .trim()
        .to_owned();
    let summary: CloseSummary =
        GatewayClient::new(gateway).post("/api/close", &CloseRequest { credential })?;
    println!("{}", to_canonical(&summary));
    Ok(())
}

pub fn results(gateway: &str) -> Result<()> {
    let view: ResultsView = GatewayClient::new(gateway).get("/api/results")?;
    println!("{}", to_canonical(&view));
    Ok(())
}
