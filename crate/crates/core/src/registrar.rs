//! Eligibility checks and one-time blind token issuance.
//!
//! The registrar only ever sees blinded values, so nothing it stores can be
//! matched against token serials or ballots on the ledger.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_bigint::BigUint;
use parking_lot::Mutex;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, decimal};
use crate::crypto::{rsa, Digest, RsaKey, RsaPublicKey};
use crate::setup::{credential_hash, Credential};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoterRecord {
    pub voter_id: String,
    pub credential_hash: Digest,
    pub token_issued: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssuanceRecord {
    pub voter_id: String,
    #[serde(with = "decimal")]
    pub blinded_value: BigUint,
    pub issued_at: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistrarError {
    #[error("unknown voter")]
    UnknownVoter,
    #[error("credential does not match")]
    BadCredential,
    #[error("token already issued")]
    AlreadyIssued,
    #[error("blinded value out of range")]
    BadBlindedValue,
    #[error("roster line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate voter id {0:?}")]
    DuplicateVoterId(String),
    #[error("issuance journal: {0}")]
    Journal(String),
}

/// Parses `voter_id,credential_hash_hex` lines. Blank lines are skipped.
pub fn parse_roster(text: &str) -> Result<Vec<VoterRecord>, RegistrarError> {
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: &str| RegistrarError::Parse {
            line: i + 1,
            reason: reason.into(),
        };
        let (id, hash) = line
            .split_once(',')
            .ok_or_else(|| parse("expected voter_id,credential_hash"))?;
        if id.is_empty() || hash.contains(',') {
            return Err(parse("expected voter_id,credential_hash"));
        }
        let credential_hash = Digest::from_hex(hash).map_err(|_| parse("bad credential hash"))?;
        if !seen.insert(id.to_owned()) {
            return Err(RegistrarError::DuplicateVoterId(id.to_owned()));
        }
        records.push(VoterRecord {
            voter_id: id.to_owned(),
            credential_hash,
            token_issued: false,
        });
    }
    Ok(records)
}

pub fn load_roster(path: impl AsRef<Path>) -> Result<Vec<VoterRecord>, RegistrarError> {
    let text = std::fs::read_to_string(path).map_err(|e| RegistrarError::Parse {
        line: 0,
        reason: e.to_string(),
    })?;
    parse_roster(&text)
}

pub fn format_roster<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Digest)>) -> String {
    entries
        .into_iter()
        .map(|(id, hash)| format!("{id},{}\n", hash.to_hex()))
        .collect()
}

/// `n` voters named `voter-0001`.. with fresh credentials.
pub fn demo_roster<R: RngCore + CryptoRng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> Vec<(String, Credential)> {
    (1..=n)
        .map(|i| (format!("voter-{i:04}"), Credential::random(rng)))
        .collect()
}

struct State {
    voters: Vec<VoterRecord>,
    by_id: HashMap<String, usize>,
    log: Vec<IssuanceRecord>,
    journal: Option<File>,
}

pub struct Registrar {
    election_id: String,
    key: RsaKey,
    state: Mutex<State>,
}

impl Registrar {
    pub fn new(election_id: impl Into<String>, key: RsaKey, roster: Vec<VoterRecord>) -> Self {
        let by_id = roster
            .iter()
            .enumerate()
            .map(|(i, v)| (v.voter_id.clone(), i))
            .collect();
        Registrar {
            election_id: election_id.into(),
            key,
            state: Mutex::new(State {
                voters: roster,
                by_id,
                log: Vec::new(),
                journal: None,
            }),
        }
    }

    /// Like `new`, but replays and then appends to an issuance journal so a
    /// restart cannot re-enable issuance.
    pub fn with_journal(
        election_id: impl Into<String>,
        key: RsaKey,
        roster: Vec<VoterRecord>,
        path: impl AsRef<Path>,
    ) -> Result<Self, RegistrarError> {
        let registrar = Self::new(election_id, key, roster);
        let path = path.as_ref();
        let jerr = |e: &dyn std::fmt::Display| RegistrarError::Journal(e.to_string());
        {
            let mut st = registrar.state.lock();
            if path.exists() {
                let file = File::open(path).map_err(|e| jerr(&e))?;
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|e| jerr(&e))?;
                    if line.is_empty() {
                        continue;
                    }
                    let record: IssuanceRecord =
                        canonical::from_canonical(&line).map_err(|e| jerr(&e))?;
                    let i = *st.by_id.get(&record.voter_id).ok_or_else(|| {
                        RegistrarError::Journal(format!(
                            "voter {:?} not in roster",
                            record.voter_id
                        ))
                    })?;
                    if st.voters[i].token_issued {
                        return Err(RegistrarError::Journal(format!(
                            "voter {:?} issued twice",
                            record.voter_id
                        )));
                    }
                    st.voters[i].token_issued = true;
                    st.log.push(record);
                }
            }
            st.journal = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| jerr(&e))?,
            );
        }
        Ok(registrar)
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    pub fn public_key(&self) -> RsaPublicKey {
        self.key.public()
    }

    /// Checks eligibility and signs `blinded`, all under one lock.
    pub fn issue_token(
        &self,
        voter_id: &str,
        credential: &str,
        blinded: &BigUint,
        now: u64,
    ) -> Result<BigUint, RegistrarError> {
        let mut st = self.state.lock();
        let i = *st.by_id.get(voter_id).ok_or(RegistrarError::UnknownVoter)?;
        if credential_hash(credential) != st.voters[i].credential_hash {
            return Err(RegistrarError::BadCredential);
        }
        if st.voters[i].token_issued {
            return Err(RegistrarError::AlreadyIssued);
        }
        let signature =
            rsa::sign_blinded(blinded, &self.key).map_err(|_| RegistrarError::BadBlindedValue)?;
        let record = IssuanceRecord {
            voter_id: voter_id.to_owned(),
            blinded_value: blinded.clone(),
            issued_at: now,
        };
        if let Some(file) = st.journal.as_mut() {
            let mut line = canonical::to_canonical(&record);
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| RegistrarError::Journal(e.to_string()))?;
        }
        st.voters[i].token_issued = true;
        st.log.push(record);
        Ok(signature)
    }

    pub fn export_issuance_log(&self) -> Vec<IssuanceRecord> {
        self.state.lock().log.clone()
    }

    /// The log as canonical lines, byte-identical to the journal file.
    pub fn issuance_log_text(&self) -> String {
        self.state
            .lock()
            .log
            .iter()
            .map(|r| {
                let mut line = canonical::to_canonical(r);
                line.push('\n');
                line
            })
            .collect()
    }

    pub fn voter(&self, voter_id: &str) -> Option<VoterRecord> {
        let st = self.state.lock();
        st.by_id.get(voter_id).map(|&i| st.voters[i].clone())
    }

    pub fn roster_size(&self) -> usize {
        self.state.lock().voters.len()
    }

    pub fn issued_count(&self) -> usize {
        self.state.lock().log.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::PendingToken;
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn registrar(n: usize) -> (Registrar, Vec<(String, Credential)>) {
        let setup = testkit::toy_election(4);
        let voters = demo_roster(n, &mut ChaCha20Rng::seed_from_u64(1));
        let hashes: Vec<Digest> = voters.iter().map(|(_, c)| c.hash()).collect();
        let roster = parse_roster(&format_roster(
            voters.iter().map(|(id, _)| id.as_str()).zip(&hashes),
        ))
        .unwrap();
        (
            Registrar::new("toy", setup.registrar_key.clone(), roster),
            voters,
        )
    }

    #[test]
    fn roster_parsing() {
        assert!(parse_roster("").unwrap().is_empty());
        let h = Digest::ZERO.to_hex();
        let three = parse_roster(&format!("a,{h}\nb,{h}\n\nc,{h}\n")).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.iter().all(|v| !v.token_issued));
        assert_eq!(
            parse_roster(&format!("a,{h}\na,{h}\n")),
            Err(RegistrarError::DuplicateVoterId("a".into()))
        );
        assert!(matches!(
            parse_roster("a\n"),
            Err(RegistrarError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_roster(&format!("a,{h}\nb,zz\n")),
            Err(RegistrarError::Parse { line: 2, .. })
        ));
        let (r, _) = registrar(0);
        assert_eq!(
            r.issue_token("x", "y", &BigUint::from(5u8), 0),
            Err(RegistrarError::UnknownVoter)
        );
    }

    #[test]
    fn issuance_rules() {
        let (r, voters) = registrar(3);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let pending = PendingToken::new("toy", &r.public_key(), &mut rng).unwrap();
        let blinded = pending.blinded().clone();
        let (id, cred) = &voters[0];
        assert_eq!(
            r.issue_token(id, "wrong", &blinded, 1),
            Err(RegistrarError::BadCredential)
        );
        assert!(!r.voter(id).unwrap().token_issued);
        assert!(r.export_issuance_log().is_empty());
        let sig = r.issue_token(id, cred.secret(), &blinded, 1).unwrap();
        let token = pending.finish(&sig, &r.public_key()).unwrap();
        assert!(rsa::verify(
            &crate::ledger::token_message("toy", &token.serial),
            &token.signature,
            &r.public_key()
        ));
        assert_eq!(
            r.issue_token(id, cred.secret(), &blinded, 2),
            Err(RegistrarError::AlreadyIssued)
        );
        let log = r.export_issuance_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].blinded_value, blinded);
        assert!(!r.issuance_log_text().contains(&token.serial.to_hex()));
        let n = r.public_key().n.clone();
        assert_eq!(
            r.issue_token(&voters[1].0, voters[1].1.secret(), &n, 3),
            Err(RegistrarError::BadBlindedValue)
        );
        assert!(!r.voter(&voters[1].0).unwrap().token_issued);
    }

    #[test]
    fn concurrent_requests_issue_once() {
        let (r, voters) = registrar(1);
        let r = Arc::new(r);
        let (id, cred) = voters[0].clone();
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let (r, id, cred) = (r.clone(), id.clone(), cred.clone());
                std::thread::spawn(move || {
                    r.issue_token(&id, cred.secret(), &BigUint::from(1000u32 + i), 0)
                        .is_ok()
                })
            })
            .collect();
        let wins = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|ok| *ok)
            .count();
        assert_eq!(wins, 1);
        assert_eq!(r.issued_count(), 1);
    }

    #[test]
    fn journal_survives_restart() {
        let setup = testkit::toy_election(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("issuance.jsonl");
        let voters = demo_roster(2, &mut ChaCha20Rng::seed_from_u64(3));
        let hashes: Vec<Digest> = voters.iter().map(|(_, c)| c.hash()).collect();
        let roster_text = format_roster(voters.iter().map(|(id, _)| id.as_str()).zip(&hashes));
        let roster = parse_roster(&roster_text).unwrap();
        let r = Registrar::with_journal("toy", setup.registrar_key.clone(), roster.clone(), &path)
            .unwrap();
        r.issue_token(&voters[0].0, voters[0].1.secret(), &BigUint::from(77u8), 5)
            .unwrap();
        let text = r.issuance_log_text();
        drop(r);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
        let r = Registrar::with_journal("toy", setup.registrar_key.clone(), roster, &path).unwrap();
        assert_eq!(
            r.issue_token(&voters[0].0, voters[0].1.secret(), &BigUint::from(78u8), 6),
            Err(RegistrarError::AlreadyIssued)
        );
        assert!(r
            .issue_token(&voters[1].0, voters[1].1.secret(), &BigUint::from(79u8), 6)
            .is_ok());
        assert_eq!(r.issued_count(), 2);
    }
}
