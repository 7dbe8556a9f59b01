//! Property tests for the cross-module invariants.

use std::collections::BTreeMap;
use std::sync::Arc;

use ballotchain_core::anchoring::{check_contiguous, verify_anchor, AnchorJournal};
use ballotchain_core::consensus::{run_sim, Behavior, SimScenario};
use ballotchain_core::crypto::{elgamal, merkle, rsa, Digest, GroupParams};
use ballotchain_core::ledger::verify_chain;
use ballotchain_core::registrar::{
    demo_roster, format_roster, parse_roster, Registrar, RegistrarError,
};
use ballotchain_core::tally::{combine_tally, compute_partials};
use ballotchain_core::{testkit, AnchorPolicy, Anchorer, MockChain, PublicChainAdapter};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn digest() -> impl Strategy<Value = Digest> {
    any::<[u8; 32]>().prop_map(Digest::from_bytes)
}

proptest! {
    #[test]
    fn digest_hex_roundtrips(d in digest()) {
        let hex = d.to_hex();
        prop_assert_eq!(hex.len(), 64);
        prop_assert_eq!(Digest::from_hex(&hex).unwrap(), d);
    }

    #[test]
    fn blind_signatures_verify_and_hide_the_message(msg in digest(), seed in any::<u64>()) {
        let setup = testkit::toy_election(4);
        let key = &setup.registrar_key;
        let public = key.public();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let r = rsa::random_blinding_factor(&public, &mut rng);
        prop_assume!(r != BigUint::from(1u32));
        let blinded = rsa::blind(&msg, &public, &r).unwrap();
        let sig = rsa::unblind(&rsa::sign_blinded(&blinded, key).unwrap(), &r, &public).unwrap();
        prop_assert!(rsa::verify(&msg, &sig, &public));
        prop_assert_eq!(&sig, &rsa::sign(&msg, key));
        // What the signer saw is neither the message nor the signature.
        prop_assert_ne!(&blinded, &rsa::encode_digest(&msg, &public.n));
        prop_assert_ne!(&blinded, &sig);
        let mut other = *msg.as_bytes();
        other[0] ^= 1;
        prop_assert!(!rsa::verify(&Digest::from_bytes(other), &sig, &public));
    }

    #[test]
    fn ciphertexts_and_partials_stay_in_the_subgroup(
        candidate in 0usize..5,
        nonce in 1u32..11,
        secret in 1u32..11,
    ) {
        let g = GroupParams::toy();
        let pair = elgamal::keypair_from_secret(&g, BigUint::from(secret));
        let ct = elgamal::encrypt(&g, &pair.public, candidate, 5, &BigUint::from(nonce)).unwrap();
        prop_assert!(ct.is_well_formed(&g));
        prop_assert!(g.is_member(&pair.public));
        prop_assert_eq!(elgamal::decrypt(&g, &BigUint::from(secret), &ct, 5).unwrap(), candidate);
    }

    #[test]
    fn merkle_proofs_verify_only_their_own_leaf(
        leaves in prop::collection::vec(digest(), 1..=16),
        pick in any::<prop::sample::Index>(),
        flip in 0usize..256,
    ) {
        let i = pick.index(leaves.len());
        let root = merkle::merkle_root(&leaves).unwrap();
        let proof = merkle::merkle_prove(&leaves, i).unwrap();
        let bound = usize::BITS - (leaves.len() - 1).leading_zeros();
        prop_assert!(proof.path.len() <= bound as usize);
        prop_assert!(merkle::merkle_verify(&leaves[i], &proof, &root));
        let mut bytes = *leaves[i].as_bytes();
        bytes[flip / 8] ^= 1 << (flip % 8);
        prop_assert!(!merkle::merkle_verify(&Digest::from_bytes(bytes), &proof, &root));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Ranges stay contiguous from block 1, every ballot is covered once, and
    /// the public transaction count is ceil(blocks / B).
    #[test]
    fn anchors_cover_the_chain_in_b_sized_batches(
        len in 0usize..30,
        per_block in 0usize..3,
        b in 1u64..6,
        polls in prop::collection::vec(0usize..30, 0..6),
        seed in any::<u64>(),
    ) {
        let setup = testkit::toy_election(4);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let chain = testkit::build_chain(&setup, len, per_block, &mut rng);
        let adapter = Arc::new(MockChain::in_memory());
        let mut anchorer = Anchorer::new(
            setup.config.election_id.clone(),
            AnchorPolicy { blocks: b, seconds: u64::MAX },
            adapter.clone(),
            AnchorJournal::in_memory(),
            0,
        );
        // The chain grows between polls; each poll sees a prefix.
        let mut cuts = polls;
        cuts.sort_unstable();
        for cut in cuts {
            let seen = &chain[..=cut.min(len)];
            while anchorer.poll(seen, 1).unwrap().is_some() {}
        }
        anchorer.force(&chain, 2, 1).unwrap();
        let records = anchorer.records();
        prop_assert!(check_contiguous(records));
        prop_assert_eq!(records.last().map_or(0, |r| r.last_block), len as u64);
        prop_assert_eq!(records.len() as u64, (len as u64).div_ceil(b));
        prop_assert_eq!(adapter.len(), records.len());
        for r in records {
            prop_assert!(r.last_block - r.first_block < b);
            prop_assert_eq!(verify_anchor(&chain, r, &setup.config.election_id, adapter.as_ref() as &dyn PublicChainAdapter), Ok(true));
        }
        for block in &chain[1..] {
            prop_assert_eq!(records.iter().filter(|r| r.covers(block.index)).count(), 1);
        }
    }

    #[test]
    fn tally_conserves_ballots(
        votes in prop::collection::vec(0usize..3, 0..20),
        subset in prop::sample::subsequence(vec![0usize, 1, 2, 3, 4], 3),
        seed in any::<u64>(),
    ) {
        let setup = testkit::toy_election(4);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ballots: Vec<_> = votes.iter().map(|&v| testkit::ballot(&setup, v, &mut rng)).collect();
        let subs: Vec<_> = subset
            .iter()
            .map(|&i| compute_partials(&setup.config, &setup.trustee_shares[i], &ballots))
            .collect();
        let refs: Vec<_> = subs.iter().collect();
        let result = combine_tally(&setup.config, &ballots, &refs).unwrap();
        let total: u64 = result.counts.values().sum();
        prop_assert_eq!(total + result.undecryptable.len() as u64, ballots.len() as u64);
        prop_assert!(result.counts.keys().all(|k| setup.config.candidates.contains(k)));
        for (i, name) in setup.config.candidates.iter().enumerate() {
            let truth = votes.iter().filter(|&&v| v == i).count() as u64;
            prop_assert_eq!(result.counts.get(name).copied().unwrap_or(0), truth);
        }
    }

    /// Any interleaving of requests issues at most one token per voter, and
    /// never more than the roster size.
    #[test]
    fn registrar_issues_once_per_voter(
        requests in prop::collection::vec((0usize..6, any::<bool>()), 0..40),
        seed in any::<u64>(),
    ) {
        let setup = testkit::toy_election(4);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let voters = demo_roster(5, &mut rng);
        let hashes: Vec<_> = voters.iter().map(|(_, c)| c.hash()).collect();
        let roster = parse_roster(&format_roster(voters.iter().map(|(v, _)| v.as_str()).zip(&hashes))).unwrap();
        let registrar = Registrar::new("toy", setup.registrar_key.clone(), roster);
        let blinded = BigUint::from(1234u32);
        let mut issued = std::collections::HashSet::new();
        for (who, good) in requests {
            let (id, cred) = match voters.get(who) {
                Some((v, c)) => (v.clone(), if good { c.secret().to_owned() } else { "wrong".into() }),
                None => ("nobody".to_owned(), "x".to_owned()),
            };
            match registrar.issue_token(&id, &cred, &blinded, 0) {
                Ok(_) => prop_assert!(issued.insert(id)),
                Err(RegistrarError::AlreadyIssued) => prop_assert!(issued.contains(&id)),
                Err(RegistrarError::BadCredential) => prop_assert!(!good),
                Err(RegistrarError::UnknownVoter) => prop_assert!(who >= 5),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
            prop_assert_eq!(registrar.issued_count(), issued.len());
            prop_assert!(registrar.issued_count() <= registrar.roster_size());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Safety, agreement and determinism over random network conditions
    /// with up to f = 1 faulty validator out of 4.
    #[test]
    fn consensus_is_safe_and_deterministic(
        seed in any::<u64>(),
        drop_permille in 0u32..300,
        max_delay in 1u64..4,
        faulty in prop::option::of(0u32..4),
    ) {
        let scenario = SimScenario {
            seed,
            validators: 4,
            byzantine: faulty.map(|v| BTreeMap::from([(v, Behavior::Silent)])).unwrap_or_default(),
            drop_permille,
            min_delay: 0,
            max_delay,
            txs: 12,
            tx_interval: 2,
            replays: 3,
            fuzz_messages: 200,
            fuzz_per_tick: 20,
            max_ticks: 20_000,
        };
        let report = run_sim(&scenario);
        prop_assert!(report.conflicts.is_empty());
        prop_assert_eq!(report.double_spends, 0);
        prop_assert!(report.chains_valid);
        prop_assert!(report.all_committed);
        prop_assert!(report.metrics.max_rounds_to_commit <= 40);
        let chains: Vec<_> = report.chains.values().collect();
        for a in &chains {
            for b in &chains {
                let n = a.len().min(b.len());
                prop_assert_eq!(&a[..n], &b[..n]);
            }
        }
        prop_assert_eq!(run_sim(&scenario).transcript, report.transcript);
    }
}

#[test]
fn honest_chains_audit_clean_and_any_edit_is_flagged() {
    let setup = testkit::toy_election(4);
    let config = testkit::config(&setup);
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let chain = testkit::build_chain(&setup, 200, 1, &mut rng);
    assert!(verify_chain(&chain, &config).is_clean());
    for i in (1..chain.len()).step_by(17) {
        let mut edited = chain.clone();
        edited[i].timestamp += 1;
        let report = verify_chain(&edited, &config);
        assert!(report.flagged_blocks().contains(&(i as u64)), "block {i}");
    }
}
