mod commands;
mod files;
mod http;
mod remote;
mod validator;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use ballotchain_core::canonical::to_canonical;
use ballotchain_core::Mode;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::*;
use crate::files::ElectionDir;

#[derive(Parser)]
#[command(
    name = "ballotchain",
    version,
    about = "Blind-token ballots on a permissioned chain with public anchoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Election setup and operator actions.
    Election {
        #[command(subcommand)]
        command: ElectionCmd,
    },
    /// Registrar service.
    Registrar {
        #[command(subcommand)]
        command: ServeDir,
    },
    /// Validator node.
    Validator {
        #[command(subcommand)]
        command: ValidatorCmd,
    },
    /// Mock public chain.
    Mockchain {
        #[command(subcommand)]
        command: MockchainCmd,
    },
    /// Voter-facing gateway.
    Gateway {
        #[command(subcommand)]
        command: GatewayCmd,
    },
    /// Trustee partial decryption.
    Trustee {
        #[command(subcommand)]
        command: TrusteeCmd,
    },
    /// Offline tally.
    Tally {
        #[command(subcommand)]
        command: TallyCmd,
    },
    /// Independent ledger and anchor verification.
    Audit {
        #[command(subcommand)]
        command: AuditCmd,
    },
    /// Cast one ballot through a gateway and verify its receipt.
    Vote {
        #[arg(long)]
        gateway: String,
        #[arg(long)]
        voter_id: String,
        #[arg(long)]
        credential: String,
        #[arg(long)]
        candidate: String,
        /// Seconds to wait for the receipt to be anchored; 0 returns right after casting.
        #[arg(long, default_value_t = 120)]
        wait_secs: u64,
        /// Public chain URL or file, for an independent anchor check.
        #[arg(long)]
        mockchain: Option<String>,
    },
    /// Run every role in one process with a demo-mode election.
    Demo {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, default_value_t = 10)]
        voters: usize,
        #[arg(long, value_delimiter = ',', default_value = "Alice,Bob,Carol")]
        candidates: Vec<String>,
        #[arg(long, default_value_t = 4)]
        validators: usize,
        #[arg(long, default_value_t = 20)]
        tick_ms: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the 2048-bit group and keys instead of the toy ones.
        #[arg(long)]
        production: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sealed,
    Demo,
}

#[derive(Subcommand)]
enum ElectionCmd {
    /// Generate keys, shares, genesis and roster into a new directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "election")]
        election_id: String,
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<String>,
        #[arg(long, default_value_t = 4)]
        validators: usize,
        #[arg(long, default_value_t = 5)]
        trustees: usize,
        #[arg(long, default_value_t = 3)]
        threshold: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Sealed)]
        mode: ModeArg,
        /// Toy group and short keys. Insecure; for tests only.
        #[arg(long)]
        toy: bool,
        /// Size of a generated demo roster.
        #[arg(long, default_value_t = 0)]
        voters: usize,
        /// Roster file of `voter_id,credential_hash` lines.
        #[arg(long, conflicts_with = "voters")]
        roster: Option<PathBuf>,
        /// Validator addresses in id order; defaults to localhost from --base-port.
        #[arg(long, value_delimiter = ',')]
        validator_addresses: Vec<String>,
        #[arg(long, default_value_t = 7000)]
        base_port: u16,
        #[arg(long, default_value_t = 8)]
        anchor_blocks: u64,
        #[arg(long, default_value_t = 60)]
        anchor_seconds: u64,
        #[arg(long)]
        tick_ms: Option<u64>,
        /// Unix time after which ballots are refused.
        #[arg(long)]
        close_time: Option<u64>,
        /// Deterministic key generation. Insecure; for tests only.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Close voting, anchor the remaining blocks and freeze the ballots.
    Close {
        #[arg(long)]
        gateway: String,
        /// File holding the operator credential.
        #[arg(long)]
        operator_file: PathBuf,
    },
    /// Print the results view.
    Results {
        #[arg(long)]
        gateway: String,
    },
}

#[derive(Subcommand)]
enum ServeDir {
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7100")]
        listen: String,
    },
}

#[derive(Subcommand)]
enum ValidatorCmd {
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        id: u32,
        /// Listen address; defaults to this validator's address in the config.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Subcommand)]
enum MockchainCmd {
    Serve {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7200")]
        listen: String,
    },
}

#[derive(Subcommand)]
enum GatewayCmd {
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long)]
        registrar: String,
        /// Public chain URL or file.
        #[arg(long)]
        mockchain: String,
        #[arg(long, default_value_t = 200)]
        sync_ms: u64,
        #[arg(long, default_value_t = 60)]
        close_timeout_secs: u64,
    },
}

#[derive(Subcommand)]
enum TrusteeCmd {
    /// Partially decrypt the frozen ballots with this trustee's share.
    Decrypt {
        #[arg(long)]
        share: PathBuf,
        /// Fetch ballots from and submit partials to this gateway.
        #[arg(long)]
        gateway: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frozen ballots file, instead of fetching them.
        #[arg(long)]
        ballots: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TallyCmd {
    /// Combine trustee partials into counts.
    Combine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ballots: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        partials: Vec<PathBuf>,
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Public chain URL or file.
        #[arg(long)]
        mockchain: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Re-verify a ledger file and every anchor against the public chain.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        /// Public chain URL or file.
        #[arg(long)]
        mockchain: String,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Election {
            command:
                ElectionCmd::Init {
                    dir,
                    election_id,
                    candidates,
                    validators,
                    trustees,
                    threshold,
                    mode,
                    toy,
                    voters,
                    roster,
                    validator_addresses,
                    base_port,
                    anchor_blocks,
                    anchor_seconds,
                    tick_ms,
                    close_time,
                    seed,
                },
        } => init(InitOptions {
            dir,
            election_id,
            candidates,
            validators,
            trustees,
            threshold,
            mode: match mode {
                ModeArg::Sealed => Mode::Sealed,
                ModeArg::Demo => Mode::Demo,
            },
            toy,
            voters,
            roster,
            validator_addresses,
            base_port,
            anchor_blocks,
            anchor_seconds,
            tick_ms,
            close_time,
            seed,
        })?,
        Command::Election {
            command:
                ElectionCmd::Close {
                    gateway,
                    operator_file,
                },
        } => close(&gateway, &operator_file)?,
        Command::Election {
            command: ElectionCmd::Results { gateway },
        } => results(&gateway)?,
        Command::Registrar {
            command: ServeDir::Serve { dir, listen },
        } => registrar_serve(&ElectionDir::new(dir), &listen)?,
        Command::Validator {
            command: ValidatorCmd::Serve { dir, id, listen },
        } => validator::serve(
            &ElectionDir::new(dir),
            validator::ValidatorOptions { id, listen },
        )?,
        Command::Mockchain {
            command: MockchainCmd::Serve { file, listen },
        } => mockchain_serve(&file, &listen)?,
        Command::Gateway {
            command:
                GatewayCmd::Serve {
                    dir,
                    listen,
                    registrar,
                    mockchain,
                    sync_ms,
                    close_timeout_secs,
                },
        } => gateway_serve(
            &ElectionDir::new(dir),
            GatewayOptions {
                listen,
                registrar,
                mockchain,
                sync_ms,
                close_timeout: Duration::from_secs(close_timeout_secs),
            },
        )?,
        Command::Trustee {
            command:
                TrusteeCmd::Decrypt {
                    share,
                    gateway,
                    config,
                    ballots,
                    out,
                },
        } => trustee_decrypt(TrusteeOptions {
            share,
            gateway,
            config,
            ballots,
            out,
        })?,
        Command::Tally {
            command:
                TallyCmd::Combine {
                    config,
                    ballots,
                    partials,
                    ledger,
                    anchors,
                    mockchain,
                    out,
                },
        } => {
            let result = tally_combine(CombineOptions {
                config,
                ballots,
                partials,
                ledger,
                anchors,
                mockchain,
            })?;
            if let Some(out) = out {
                files::write_canonical(&out, &result, false)?;
            }
            println!("{}", to_canonical(&result));
        }
        Command::Audit {
            command:
                AuditCmd::Verify {
                    config,
                    ledger,
                    anchors,
                    mockchain,
                },
        } => {
            let problems = audit_verify(AuditOptions {
                config,
                ledger,
                anchors,
                mockchain,
            })?;
            if problems > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Vote {
            gateway,
            voter_id,
            credential,
            candidate,
            wait_secs,
            mockchain,
        } => vote(VoteOptions {
            gateway,
            voter_id,
            credential,
            candidate,
            wait: Duration::from_secs(wait_secs),
            mockchain,
        })?,
        Command::Demo {
            listen,
            voters,
            candidates,
            validators,
            tick_ms,
            seed,
            production,
        } => demo(DemoOptions {
            listen,
            voters,
            candidates,
            validators,
            tick_ms,
            seed,
            production,
        })?,
    }
    Ok(ExitCode::SUCCESS)
}
