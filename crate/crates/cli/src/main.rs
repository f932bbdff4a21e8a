//! `evcharge`: operator CLI for registration, authentication, attack
//! scenarios, key backup/recovery and the operation-count benchmark.
//!
//! Every command prints a human-readable summary and one machine-readable
//! `RESULT key=value ...` line. Exit status: 0 expected outcome, 1 unexpected
//! protocol outcome, 2 usage or scenario configuration error, 3 I/O or
//! state-file integrity error.

mod commands;
mod driver;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "evcharge", version, about = "DID/VC authenticated key exchange for EV charging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register the USP, a charging station or a user.
    Register(RegisterArgs),
    /// Run one authentication between a user, a station and the USP.
    Authenticate(AuthenticateArgs),
    /// Run a built-in attack scenario.
    Attack(AttackArgs),
    /// Split the wallet's private key into sealed custodian share files.
    Backup(BackupArgs),
    /// Restore the wallet's private key from share files.
    Recover(RecoverArgs),
    /// Delete the wallet's private key (simulates the usability attack).
    DeleteKey(DeleteKeyArgs),
    /// Run a scenario script and print its transcript.
    Scenario(ScenarioArgs),
    /// Count operations per authentication against the reference cost table.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoleArg {
    Usp,
    Cs,
    User,
}

#[derive(Args, Debug, Clone)]
pub struct StateArgs {
    /// USP database file.
    #[arg(long)]
    pub usp_db: Option<PathBuf>,
    /// DID registry log; defaults to `<usp-db>.registry`.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// RNG seed; fresh OS entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[command(flatten)]
    pub state: StateArgs,
    /// Station state file (role cs).
    #[arg(long)]
    pub cs_state: Option<PathBuf>,
    /// Wallet file (role user).
    #[arg(long)]
    pub wallet: Option<PathBuf>,
    /// Station location area identifier (role cs).
    #[arg(long)]
    pub lai: Option<String>,
    #[arg(long)]
    pub biometric: Option<String>,
    #[arg(long)]
    pub password: Option<String>,
    /// Number of shadow identities (role user).
    #[arg(long, default_value_t = evcharge_core::protocol::DEFAULT_SHADOW_COUNT)]
    pub shadows: usize,
}

#[derive(Args, Debug)]
pub struct AuthenticateArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long)]
    pub wallet: PathBuf,
    #[arg(long)]
    pub cs_state: PathBuf,
    #[arg(long)]
    pub biometric: String,
    #[arg(long)]
    pub password: String,
    /// The user's location area identifier; defaults to the station's.
    #[arg(long)]
    pub lai: Option<String>,
    /// Start through a shadow identity.
    #[arg(long)]
    pub shadow: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackType {
    #[value(name = "replay-m-a3")]
    ReplayMA3,
    #[value(name = "replay-m-a4")]
    ReplayMA4,
    #[value(name = "replay-m-a5")]
    ReplayMA5,
    #[value(name = "replay-m-a6")]
    ReplayMA6,
    ForgeLocation,
    ForgeLocationUser,
    ImpersonateUser,
    ImpersonateCs,
    StolenDevice,
    TamperV2,
    TamperDelivery,
    Privacy,
    Desync,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long = "type", value_enum)]
    pub kind: AttackType,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BackupArgs {
    #[arg(long)]
    pub wallet: PathBuf,
    /// Threshold and share count as `k/n`.
    #[arg(long)]
    pub shares: String,
    /// Directory receiving `share-<i>.evsh`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// One passphrase per custodian, in order; repeat `n` times.
    #[arg(long = "passphrase")]
    pub passphrases: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RecoverArgs {
    #[arg(long)]
    pub wallet: PathBuf,
    #[command(flatten)]
    pub state: StateArgs,
    /// Share file; repeat at least `k` times.
    #[arg(long = "share")]
    pub shares: Vec<PathBuf>,
    /// Passphrase for the share at the same position.
    #[arg(long = "passphrase")]
    pub passphrases: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DeleteKeyArgs {
    #[arg(long)]
    pub wallet: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub file: PathBuf,
    /// Overrides the script's SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the transcript here instead of standard output.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub iterations: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let (name, result) = match cli.command {
        Command::Register(a) => ("register", commands::cmd_register(&a)),
        Command::Authenticate(a) => ("authenticate", commands::cmd_authenticate(&a)),
        Command::Attack(a) => ("attack", commands::cmd_attack(&a)),
        Command::Backup(a) => ("backup", commands::cmd_backup(&a)),
        Command::Recover(a) => ("recover", commands::cmd_recover(&a)),
        Command::DeleteKey(a) => ("delete-key", commands::cmd_delete_key(&a)),
        Command::Scenario(a) => ("scenario", commands::cmd_scenario(&a)),
        Command::Bench(a) => ("bench", commands::cmd_bench(&a)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            println!("RESULT command={name} outcome={}", e.class());
            ExitCode::from(e.exit_code())
        }
    }
}
