//! Layout of an election directory as written by `election init`.
//!
//! ```text
//! config.json                 public election config
//! genesis.json                signed genesis block
//! registrar.key.json          registrar RSA key (secret)
//! validators/validator-K.json validator keys (secret, one per node)
//! trustees/ID.share.json      trustee shares (secret, one per trustee)
//! operator.secret             credential for /api/close
//! roster.csv                  voter_id,credential_hash
//! voters.csv                  voter_id,credential (demo rosters only)
//! ```
//!
//! Runtime state lives in per-role subdirectories next to these files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ballotchain_core::canonical;
use ballotchain_core::crypto::RsaKey;
use ballotchain_core::registrar::{format_roster, load_roster, VoterRecord};
use ballotchain_core::setup::{TrusteeShareFile, ValidatorKeyFile};
use ballotchain_core::{Block, Credential, ElectionConfig, ElectionSetup, ValidatorId};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct ElectionDir {
    root: PathBuf,
}

impl ElectionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ElectionDir { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn genesis_path(&self) -> PathBuf {
        self.root.join("genesis.json")
    }

    pub fn registrar_key_path(&self) -> PathBuf {
        self.root.join("registrar.key.json")
    }

    pub fn validator_key_path(&self, id: ValidatorId) -> PathBuf {
        self.root
            .join("validators")
            .join(format!("validator-{id}.json"))
    }

    pub fn share_path(&self, trustee_id: &str) -> PathBuf {
        self.root
            .join("trustees")
            .join(format!("{trustee_id}.share.json"))
    }

    pub fn operator_path(&self) -> PathBuf {
        self.root.join("operator.secret")
    }

    pub fn roster_path(&self) -> PathBuf {
        self.root.join("roster.csv")
    }

    pub fn voters_path(&self) -> PathBuf {
        self.root.join("voters.csv")
    }

    pub fn ledger_path(&self, id: ValidatorId) -> PathBuf {
        self.root
            .join(format!("validator-{id}"))
            .join("ledger.jsonl")
    }

    pub fn issuance_path(&self) -> PathBuf {
        self.root.join("registrar").join("issuance.jsonl")
    }

    pub fn anchors_path(&self) -> PathBuf {
        self.root.join("gateway").join("anchors.jsonl")
    }

    pub fn frozen_path(&self) -> PathBuf {
        self.root.join("gateway").join("frozen.json")
    }

    pub fn partials_dir(&self) -> PathBuf {
        self.root.join("gateway").join("partials")
    }

    pub fn tally_path(&self) -> PathBuf {
        self.root.join("tally.json")
    }

    /// Writes everything `election init` produces. Refuses to overwrite an
    /// existing config.
    pub fn write_setup(
        &self,
        setup: &ElectionSetup,
        voters: &[(String, Credential)],
    ) -> Result<()> {
        if self.config_path().exists() {
            bail!("{} already exists", self.config_path().display());
        }
        fs::create_dir_all(self.root.join("validators"))?;
        fs::create_dir_all(self.root.join("trustees"))?;
        write_canonical(&self.config_path(), &setup.config, false)?;
        write_canonical(&self.genesis_path(), &setup.genesis, false)?;
        write_canonical(&self.registrar_key_path(), &setup.registrar_key, true)?;
        for id in 0..setup.validator_keys.len() as ValidatorId {
            write_canonical(
                &self.validator_key_path(id),
                &setup.validator_key_file(id),
                true,
            )?;
        }
        for share in &setup.trustee_shares {
            write_canonical(&self.share_path(&share.trustee_id), share, true)?;
        }
        write_secret(
            &self.operator_path(),
            &format!("{}\n", setup.operator_credential.secret()),
        )?;
        let hashes: Vec<_> = voters.iter().map(|(_, c)| c.hash()).collect();
        fs::write(
            self.roster_path(),
            format_roster(voters.iter().map(|(v, _)| v.as_str()).zip(&hashes)),
        )?;
        if !voters.is_empty() {
            let mut text = String::new();
            for (v, c) in voters {
                text.push_str(&format!("{v},{}\n", c.secret()));
            }
            write_secret(&self.voters_path(), &text)?;
        }
        Ok(())
    }

    pub fn config(&self) -> Result<ElectionConfig> {
        load_config(&self.config_path())
    }

    pub fn genesis(&self) -> Result<Block> {
        read_canonical(&self.genesis_path())
    }

    pub fn registrar_key(&self) -> Result<RsaKey> {
        read_canonical(&self.registrar_key_path())
    }

    pub fn validator_key(&self, id: ValidatorId) -> Result<ValidatorKeyFile> {
        let file: ValidatorKeyFile = read_canonical(&self.validator_key_path(id))?;
        if file.id != id {
            bail!("key file is for validator {}, not {id}", file.id);
        }
        Ok(file)
    }

    pub fn roster(&self) -> Result<Vec<VoterRecord>> {
        load_roster(self.roster_path())
            .with_context(|| format!("reading {}", self.roster_path().display()))
    }
}

pub fn load_config(path: &Path) -> Result<ElectionConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ElectionConfig::from_canonical(&text)?)
}

pub fn load_share(path: &Path) -> Result<TrusteeShareFile> {
    read_canonical(path)
}

pub fn read_canonical<T: DeserializeOwned + Serialize>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    canonical::from_canonical(text.trim_end())
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_canonical<T: Serialize>(path: &Path, value: &T, secret: bool) -> Result<()> {
    let mut text = canonical::to_canonical(value);
    text.push('\n');
    if secret {
        write_secret(path, &text)
    } else {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn write_secret(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    use std::io::Write;
    options
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .with_context(|| format!("writing {}", path.display()))
}
