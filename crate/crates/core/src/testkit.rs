//! Fixtures shared by unit tests, integration tests, benches and the CLI's
//! tests. Keys are small and the group is the toy group; nothing here is
//! fit for a real election.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use parking_lot::Mutex;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::client::{build_ballot, Token};
use crate::config::{ElectionConfig, ValidatorId};
use crate::crypto::{rsa, shamir, KeyShare};
use crate::ledger::{token_message, BallotTx, Block, TokenSerial};
use crate::setup::{generate_election, ElectionSetup, SetupParams};

pub const TOY_CANDIDATES: [&str; 3] = ["A", "B", "C"];

/// A cached toy election with `validators` validators (seeded, so stable
/// across runs).
pub fn toy_election(validators: usize) -> Arc<ElectionSetup> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ElectionSetup>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    cache
        .lock()
        .entry(validators)
        .or_insert_with(|| {
            let params = SetupParams::toy("toy", &TOY_CANDIDATES, validators);
            let mut rng = ChaCha20Rng::seed_from_u64(0x7e57 + validators as u64);
            Arc::new(generate_election(&params, &mut rng).expect("toy setup"))
        })
        .clone()
}

/// Signs a token directly; equivalent to the blind flow's output.
pub fn token<R: RngCore + CryptoRng + ?Sized>(setup: &ElectionSetup, rng: &mut R) -> Token {
    let serial = TokenSerial::random(rng);
    token_for_serial(setup, serial)
}

pub fn token_for_serial(setup: &ElectionSetup, serial: TokenSerial) -> Token {
    let signature = rsa::sign(
        &token_message(&setup.config.election_id, &serial),
        &setup.registrar_key,
    );
    Token { serial, signature }
}

pub fn ballot<R: RngCore + CryptoRng + ?Sized>(
    setup: &ElectionSetup,
    candidate: usize,
    rng: &mut R,
) -> BallotTx {
    let token = token(setup, rng);
    build_ballot(&setup.config, &token, candidate, rng).expect("toy ballot")
}

/// Signs `block` with the first `count` validators.
pub fn certify(setup: &ElectionSetup, mut block: Block, count: usize) -> Block {
    block.signatures = setup.validator_keys[..count]
        .iter()
        .enumerate()
        .map(|(i, key)| block.sign_with(i as ValidatorId, key))
        .collect();
    block
}

/// The next certified block over `txs` on top of `parent`.
pub fn next_block(setup: &ElectionSetup, parent: &Block, txs: Vec<BallotTx>) -> Block {
    let block = Block::new(
        parent.index + 1,
        parent.timestamp + 1,
        parent.hash,
        setup.config.election_id.clone(),
        txs,
    );
    certify(setup, block, setup.validator_keys.len())
}

/// A genesis-first chain of `len` further blocks holding `per_block`
/// ballots each.
pub fn build_chain<R: RngCore + CryptoRng + ?Sized>(
    setup: &ElectionSetup,
    len: usize,
    per_block: usize,
    rng: &mut R,
) -> Vec<Block> {
    let mut chain = vec![setup.genesis.clone()];
    for i in 0..len {
        let txs = (0..per_block)
            .map(|j| ballot(setup, (i + j) % 3, rng))
            .collect();
        let block = next_block(setup, chain.last().unwrap(), txs);
        chain.push(block);
    }
    chain
}

/// Reconstructs the election secret from the first `threshold` shares.
pub fn election_secret(setup: &ElectionSetup) -> BigUint {
    let shares: Vec<KeyShare> = setup.trustee_shares[..setup.config.threshold]
        .iter()
        .map(|s| s.share.clone())
        .collect();
    shamir::recombine(&shares, &setup.config.group.q).expect("toy shares")
}

pub fn config(setup: &ElectionSetup) -> Arc<ElectionConfig> {
    Arc::new(setup.config.clone())
}
