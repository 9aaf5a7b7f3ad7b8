//! pgbk: encode files into layered code shards, simulate failures and repairs
//! with exact transfer accounting, and check every structural claim of a
//! configuration. Exit codes: 0 success or all-match, 1 verification mismatch,
//! 2 usage or I/O error.

mod commands;
mod config;
mod shard;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pgbk", version, about = "Layered systematic codes with metered repair")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode one file into k+r shards plus a manifest.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output directory for shards and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Permit a valid but unbalanced injection table.
        #[arg(long)]
        allow_suboptimal: bool,
    },
    /// Rebuild the original file from any k shards.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the shard files.
        #[arg(long)]
        shards: PathBuf,
        /// Comma-separated 1-based node ids, exactly k of them.
        #[arg(long)]
        nodes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate one lost shard from the survivors and meter every symbol.
    Repair {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        shards: PathBuf,
        /// 1-based id of the failed node.
        #[arg(long)]
        node: usize,
        /// Where to write the transfer ledger CSV.
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        allow_suboptimal: bool,
    },
    /// Check a configuration: table validity, decodability, reconstruction.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate repairs over a parameter grid and tabulate measured vs analytic.
    Bench {
        /// Grid like "k∈{4,8}, r=2, s=2" (w and seed optional).
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a block design file, or emit a built-in preset.
    Bibd {
        #[arg(long)]
        validate: Option<PathBuf>,
        /// Preset name: 13-4-1 or fano.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Print analytic repair costs for one parameter set.
    Bandwidth {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        s: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.cmd {
        Cmd::Encode {
            config,
            input,
            out,
            allow_suboptimal,
        } => commands::encode(&config, &input, &out, allow_suboptimal),
        Cmd::Reconstruct {
            config,
            shards,
            nodes,
            out,
        } => commands::reconstruct(&config, &shards, &nodes, &out),
        Cmd::Repair {
            config,
            shards,
            node,
            ledger,
            allow_suboptimal,
        } => commands::repair(&config, &shards, node, &ledger, allow_suboptimal),
        Cmd::Verify { config } => commands::verify(&config),
        Cmd::Bench { grid, out } => commands::bench(&grid, &out),
        Cmd::Bibd {
            validate,
            preset,
            emit,
        } => commands::bibd(validate.as_deref(), preset.as_deref(), emit.as_deref()),
        Cmd::Bandwidth { k, r, s } => commands::bandwidth(k, r, s),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}
