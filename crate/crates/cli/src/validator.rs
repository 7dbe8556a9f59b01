//! Live validator: the consensus state machine behind TCP links.
//!
//! One thread per inbound connection, one sender thread per peer and a
//! ticker. Every input goes through the node under a single lock; outbound
//! frames are queued to the peer threads so the lock is never held across
//! network writes.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use ballotchain_core::consensus::transport::encode_frame;
use ballotchain_core::consensus::{
    read_frame, write_frame, Destination, Envelope, Input, Output, Validator,
};
use ballotchain_core::ledger::store::{read_ledger_lines, LedgerStore};
use ballotchain_core::{ChainState, ValidatorId};
use parking_lot::Mutex;

use crate::files::ElectionDir;
use crate::http::unix_now;

/// Frames queued per peer before new ones are dropped.
const PEER_QUEUE: usize = 4096;
/// Blocks returned by one sync request at most.
const MAX_SYNC_BLOCKS: u64 = 256;
/// How often an idle node asks its peers whether it has fallen behind.
const SYNC_INTERVAL: Duration = Duration::from_millis(500);

struct Shared {
    node: Mutex<Validator>,
    store: Mutex<LedgerStore>,
    peers: Vec<Option<SyncSender<Arc<Vec<u8>>>>>,
}

impl Shared {
    fn input(&self, input: Input) -> Output {
        let mut node = self.node.lock();
        let out = node.handle(input);
        self.route(&out);
        if !out.committed.is_empty() {
            let mut store = self.store.lock();
            for block in &out.committed {
                if let Err(e) = store.append(block) {
                    tracing::error!("persisting block {}: {e}", block.index);
                }
                tracing::info!(
                    "committed block {} ({} ballots) {}",
                    block.index,
                    block.txs.len(),
                    block.hash
                );
            }
        }
        out
    }

    fn route(&self, out: &Output) {
        for m in &out.messages {
            let frame = Arc::new(encode_frame(&Envelope::Consensus {
                message: m.message.clone(),
            }));
            match m.to {
                Destination::All => {
                    for tx in self.peers.iter().flatten() {
                        queue(tx, frame.clone());
                    }
                }
                Destination::To(id) => {
                    if let Some(Some(tx)) = self.peers.get(id as usize) {
                        queue(tx, frame);
                    }
                }
            }
        }
    }
}

fn queue(tx: &SyncSender<Arc<Vec<u8>>>, frame: Arc<Vec<u8>>) {
    if let Err(TrySendError::Full(_)) = tx.try_send(frame) {
        tracing::warn!("peer queue full, dropping frame");
    }
}

pub struct ValidatorOptions {
    pub id: ValidatorId,
    /// Overrides the address from the config.
    pub listen: Option<String>,
}

pub fn serve(dir: &ElectionDir, opts: ValidatorOptions) -> Result<()> {
    let config = Arc::new(dir.config()?);
    let key = dir.validator_key(opts.id)?;
    let info = config
        .validator(opts.id)
        .context("validator id not in config")?
        .clone();
    anyhow::ensure!(
        info.public_key == key.key.public(),
        "key file does not match the config"
    );

    let ledger = dir.ledger_path(opts.id);
    std::fs::create_dir_all(ledger.parent().unwrap())?;
    let chain = if ledger.exists() {
        let blocks = read_ledger_lines(&ledger)?
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.map_err(|e| anyhow::anyhow!("ledger line {i}: {e}")))
            .collect::<Result<Vec<_>>>()?;
        if blocks.is_empty() {
            None
        } else {
            Some(
                ChainState::replay(config.clone(), blocks)
                    .map_err(|(i, e)| anyhow::anyhow!("replaying block {i}: {e}"))?,
            )
        }
    } else {
        None
    };
    let fresh = chain.is_none();
    let chain = match chain {
        Some(c) => c,
        None => ChainState::new(config.clone(), dir.genesis()?)?,
    };
    let mut store = LedgerStore::open(&ledger)?;
    if fresh {
        store.append(&chain.blocks()[0])?;
    }
    tracing::info!(
        "validator {} starting at height {}",
        opts.id,
        chain.height()
    );

    let mut peers = Vec::new();
    let mut sync_peers = Vec::new();
    for v in &config.validators {
        if v.id == opts.id {
            peers.push(None);
            continue;
        }
        let (tx, rx) = mpsc::sync_channel(PEER_QUEUE);
        sync_peers.push(v.address.clone());
        let addr = v.address.clone();
        let me = opts.id;
        thread::spawn(move || peer_link(me, addr, rx));
        peers.push(Some(tx));
    }
    let shared = Arc::new(Shared {
        node: Mutex::new(Validator::new(opts.id, key.key, chain)),
        store: Mutex::new(store),
        peers,
    });

    let listen = opts.listen.unwrap_or(info.address);
    let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
    tracing::info!(
        "validator {} listening on {}",
        opts.id,
        listener.local_addr()?
    );

    let ticker = shared.clone();
    let tick = Duration::from_millis(config.consensus.tick_ms.max(1));
    thread::spawn(move || {
        let start = Instant::now();
        for n in 1.. {
            let due = start + tick * n as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            ticker.input(Input::Tick {
                tick: n,
                unix_time: unix_now(),
            });
        }
    });

    let syncer = shared.clone();
    thread::spawn(move || {
        let mut clients: Vec<ValidatorClient> =
            sync_peers.into_iter().map(ValidatorClient::new).collect();
        loop {
            for client in &mut clients {
                if let Err(e) = catch_up(&syncer, client) {
                    tracing::debug!("sync: {e:#}");
                }
            }
            thread::sleep(SYNC_INTERVAL);
        }
    });

    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let shared = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = connection(&shared, stream) {
                        tracing::debug!("connection closed: {e}");
                    }
                });
            }
            Err(e) => tracing::warn!("accept: {e}"),
        }
    }
    Ok(())
}

/// Pulls certified blocks from one peer while it is ahead of us. Consensus
/// catch-up only starts once a peer sends something, which a quiet network
/// never does; this covers a node restarted after the others went idle.
fn catch_up(shared: &Shared, peer: &mut ValidatorClient) -> Result<()> {
    loop {
        let Envelope::StatusReply { height } = peer.request(&Envelope::Status {})? else {
            anyhow::bail!("unexpected status reply");
        };
        let mine = shared.node.lock().chain().height();
        if height <= mine {
            return Ok(());
        }
        let Envelope::SyncBlocks { blocks } = peer.request(&Envelope::SyncRequest {
            from: mine + 1,
            to: height,
        })?
        else {
            anyhow::bail!("unexpected sync reply");
        };
        let before = mine;
        for block in blocks {
            shared.input(Input::Synced(block));
        }
        if shared.node.lock().chain().height() == before {
            anyhow::bail!("peer blocks did not apply");
        }
    }
}

/// Keeps one outbound link to a peer alive, reconnecting as needed.
fn peer_link(me: ValidatorId, addr: String, rx: Receiver<Arc<Vec<u8>>>) {
    use std::io::Write;
    let mut backoff = Duration::from_millis(100);
    loop {
        let stream = addr
            .to_socket_addrs()
            .ok()
            .and_then(|mut a| a.next())
            .and_then(|a| TcpStream::connect_timeout(&a, Duration::from_secs(2)).ok());
        let Some(stream) = stream else {
            // Frames queued while the peer is down are stale; drop them.
            while rx.try_recv().is_ok() {}
            thread::sleep(backoff);
            backoff = (backoff * 2).min(Duration::from_secs(2));
            continue;
        };
        backoff = Duration::from_millis(100);
        let _ = stream.set_nodelay(true);
        let mut w = BufWriter::new(stream);
        if write_frame(&mut w, &Envelope::Hello { validator_id: me }).is_err() {
            continue;
        }
        loop {
            let Ok(frame) = rx.recv() else { return };
            if w.write_all(&frame).and_then(|_| w.flush()).is_err() {
                break;
            }
        }
    }
}

fn connection(shared: &Shared, stream: TcpStream) -> Result<()> {
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let Some(first) = read_frame(&mut reader)? else {
        return Ok(());
    };
    if let Envelope::Hello { validator_id } = first {
        tracing::debug!("link from validator {validator_id}");
        while let Some(envelope) = read_frame(&mut reader)? {
            if let Envelope::Consensus { message } = envelope {
                shared.input(Input::Message(message));
            }
        }
        return Ok(());
    }
    let mut next = Some(first);
    while let Some(request) = next {
        let reply = match request {
            Envelope::Submit { tx } => {
                let ballot_hash = tx.ballot_hash;
                let out = shared.input(Input::SubmitTx(tx));
                Envelope::SubmitAck {
                    ballot_hash,
                    error: out.submit.and_then(Result::err),
                }
            }
            Envelope::SyncRequest { from, to } => {
                let node = shared.node.lock();
                let chain = node.chain();
                let to = to
                    .min(chain.height())
                    .min(from.saturating_add(MAX_SYNC_BLOCKS - 1));
                let blocks = if from > to {
                    Vec::new()
                } else {
                    chain
                        .get_blocks(from, to)
                        .map(|b| b.iter().map(|b| (**b).clone()).collect())
                        .unwrap_or_default()
                };
                Envelope::SyncBlocks { blocks }
            }
            Envelope::Status {} => Envelope::StatusReply {
                height: shared.node.lock().chain().height(),
            },
            Envelope::Heartbeat {} => {
                shared.input(Input::Heartbeat);
                Envelope::StatusReply {
                    height: shared.node.lock().chain().height(),
                }
            }
            other => {
                tracing::debug!("unexpected request {other:?}");
                return Ok(());
            }
        };
        write_frame(&mut writer, &reply)?;
        next = read_frame(&mut reader)?;
    }
    Ok(())
}

/// Client side of the validator request protocol, used by the gateway.
pub struct ValidatorClient {
    address: String,
    conn: Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>,
}

impl ValidatorClient {
    pub fn new(address: impl Into<String>) -> Self {
        ValidatorClient {
            address: address.into(),
            conn: None,
        }
    }

    /// One request and its reply, reconnecting once on a stale connection.
    pub fn request(&mut self, envelope: &Envelope) -> Result<Envelope> {
        for attempt in 0..2 {
            if self.conn.is_none() {
                let addr = self
                    .address
                    .to_socket_addrs()?
                    .next()
                    .with_context(|| format!("resolving {}", self.address))?;
                let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
                stream.set_read_timeout(Some(Duration::from_secs(10)))?;
                let _ = stream.set_nodelay(true);
                self.conn = Some((BufReader::new(stream.try_clone()?), BufWriter::new(stream)));
            }
            let (r, w) = self.conn.as_mut().unwrap();
            let result = write_frame(w, envelope).and_then(|_| read_frame(r));
            match result {
                Ok(Some(reply)) => return Ok(reply),
                Ok(None) | Err(_) if attempt == 0 => self.conn = None,
                Ok(None) => anyhow::bail!("{} closed the connection", self.address),
                Err(e) => {
                    self.conn = None;
                    return Err(e.into());
                }
            }
        }
        unreachable!()
    }
}
