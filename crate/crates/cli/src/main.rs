use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser as ClapParser, Subcommand, ValueEnum};
use lsfs_cli::http::{self, AppState};
use lsfs_cli::load_config;
use lsfs_cli::tty::LineApprover;
use lsfs_core::bench::{latency_suite, retrieval_suite, rollback_suite, sharing_suite, BenchReport};
use lsfs_core::clock::SystemClock;
use lsfs_core::config::RuntimeConfig;
use lsfs_core::engine::{Lsfs, Transcript, EXIT_FAILED};
use lsfs_core::gate::{AlwaysApprove, Approver, NoApprover};
use lsfs_core::supervisor::MIN_INTERVAL_MS;

#[derive(ClapParser)]
#[command(name = "lsfs", version, about = "Semantic file system driven by natural-language prompts")]
struct Cli {
    /// Managed directory tree (defaults to $LSFS_ROOT).
    #[arg(long, global = true)]
    root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct ApprovalFlags {
    /// Never ask; anything that needs confirmation is refused.
    #[arg(long, conflicts_with = "yes")]
    no_input: bool,
    /// Approve every confirmation request.
    #[arg(long, short = 'y')]
    yes: bool,
    /// Print the transcript as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Create the bookkeeping directory and index the files already on disk.
    Init,
    /// Run a natural-language prompt.
    Prompt {
        #[command(flatten)]
        flags: ApprovalFlags,
        #[arg(required = true, num_args = 1..)]
        text: Vec<String>,
    },
    /// Run one API call directly, e.g. `exec del_ --arg directory=notes --arg name=old`.
    Exec {
        api: String,
        /// `name=value`; list values are separated by `|`.
        #[arg(long = "arg", value_parser = parse_pair)]
        args: Vec<(String, String)>,
        #[command(flatten)]
        flags: ApprovalFlags,
    },
    /// Keep the index in sync with the disk tree.
    Watch {
        #[arg(long)]
        interval_ms: Option<u64>,
        /// Stop after this many scans.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Run the disk supervisor in the same process.
        #[arg(long)]
        watch: bool,
    },
    /// Run the synthetic benchmark suites.
    Bench {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 40])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Simulated cost of one LLM call on the per-file path.
        #[arg(long, default_value_t = 1)]
        llm_latency_ms: u64,
        #[arg(long)]
        json: bool,
    },
    /// Show the recorded versions of a file.
    Versions {
        name: String,
        #[arg(long)]
        directory: Option<String>,
    },
    /// List share links.
    Links {
        /// Include expired and revoked links.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Retrieval,
    Latency,
    Rollback,
    Sharing,
    All,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED as u8)
        }
    }
}

fn open(root: Option<PathBuf>) -> anyhow::Result<(RuntimeConfig, Lsfs)> {
    let config = load_config(root)?;
    let lsfs = Lsfs::open(&config, Arc::new(SystemClock::new())).with_context(|| format!("opening {}", config.root.display()))?;
    Ok((config, lsfs))
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Init => {
            let config = load_config(cli.root)?;
            std::fs::create_dir_all(&config.root)?;
            let lsfs = Lsfs::open(&config, Arc::new(SystemClock::new()))?;
            let imported = lsfs.sync()?.map_or(0, |r| r.created.len());
            lsfs.persist()?;
            println!("initialized {} ({} files indexed, {imported} imported now)", config.root.display(), lsfs.store().len());
            Ok(0)
        }
        Command::Prompt { flags, text } => {
            let (_, lsfs) = open(cli.root)?;
            lsfs.sync()?;
            let prompt = text.join(" ");
            let t = with_approver(flags, |a| lsfs.run_prompt(&prompt, a));
            finish(&lsfs, t, flags.json)
        }
        Command::Exec { api, args, flags } => {
            let (_, lsfs) = open(cli.root)?;
            lsfs.sync()?;
            let t = match lsfs.parser().from_pairs(&api, &args) {
                Ok(call) => with_approver(flags, |a| lsfs.run_call(call, a)),
                Err(e) => {
                    let e = lsfs_core::Error::Parse(e);
                    eprintln!("error: {e}");
                    return Ok(lsfs_core::engine::EXIT_PARSE);
                }
            };
            finish(&lsfs, t, flags.json)
        }
        Command::Watch { interval_ms, iterations } => {
            let (config, lsfs) = open(cli.root)?;
            let interval = interval_ms.unwrap_or(config.scan_interval_ms);
            if interval < MIN_INTERVAL_MS {
                return Err(lsfs_core::Error::IntervalTooShort(interval).into());
            }
            let mut n = 0u64;
            loop {
                if let Some(report) = lsfs.sync()?.filter(|r| !r.is_quiet()) {
                    println!("{}", serde_json::to_string(&report)?);
                    lsfs.persist()?;
                }
                n += 1;
                if iterations.is_some_and(|max| n >= max) {
                    return Ok(0);
                }
                std::thread::sleep(Duration::from_millis(interval));
            }
        }
        Command::Serve { port, host, watch } => {
            let mut config = load_config(cli.root)?;
            // share URLs point at the port actually served
            let port = port.or(config.http_port).unwrap_or(lsfs_core::config::DEFAULT_HTTP_PORT);
            config.http_port = Some(port);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            let lsfs = Arc::new(Lsfs::open(&config, Arc::new(SystemClock::new()))?);
            lsfs.sync()?;
            if watch {
                if let Some(s) = lsfs.supervisor() {
                    s.start(config.scan_interval_ms)?;
                }
            }
            let state = AppState::new(lsfs.clone(), config.bearer_token.clone());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(http::serve(state, addr))?;
            lsfs.persist()?;
            Ok(0)
        }
        Command::Bench { suite, sizes, seed, llm_latency_ms, json } => {
            let want = |s: Suite| suite == Suite::All || suite == s;
            let report = BenchReport {
                retrieval: want(Suite::Retrieval).then(|| retrieval_suite(&sizes, seed)).transpose()?,
                latency: want(Suite::Latency).then(|| latency_suite(&sizes, Duration::from_millis(llm_latency_ms), 7, seed)).transpose()?,
                rollback: want(Suite::Rollback).then(|| rollback_suite(40, &(5..=40).step_by(5).collect::<Vec<_>>(), 15, 4096)).transpose()?,
                sharing: want(Suite::Sharing).then(|| sharing_suite(20)).transpose()?,
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.tsv());
            }
            Ok(0)
        }
        Command::Versions { name, directory } => {
            let (_, lsfs) = open(cli.root)?;
            let key = lsfs.apis().resolve(&name, directory.as_deref())?;
            let chain = lsfs.apis().versions().versions(&key);
            if chain.is_empty() {
                println!("no versions recorded for {key}");
            }
            for v in chain {
                let first = v.content.lines().next().unwrap_or("");
                println!("{}\t{}\t{} bytes\t{}", v.seq, v.recorded_at.to_rfc3339(), v.content.len(), first);
            }
            Ok(0)
        }
        Command::Links { all } => {
            let (_, lsfs) = open(cli.root)?;
            let now = lsfs.store().clock().now();
            for l in lsfs.apis().links().list() {
                let live = l.is_live(now);
                if !all && !live {
                    continue;
                }
                let expires = l.expires_at.map(|t| t.to_rfc3339()).unwrap_or_else(|| "never".into());
                let state = if l.revoked { "revoked" } else if live { "live" } else { "expired" };
                println!("{}\t{}\t{}\texpires {}\t{}", l.token, l.key, state, expires, l.url);
            }
            Ok(0)
        }
    }
}

fn with_approver(flags: ApprovalFlags, f: impl FnOnce(&dyn Approver) -> Transcript) -> Transcript {
    if flags.yes {
        f(&AlwaysApprove)
    } else if flags.no_input {
        f(&NoApprover)
    } else {
        // questions go to stderr so stdout stays a clean transcript
        f(&LineApprover::new(io::BufReader::new(io::stdin()), io::stderr()))
    }
}

fn finish(lsfs: &Lsfs, t: Transcript, json: bool) -> anyhow::Result<i32> {
    if t.is_ok() {
        lsfs.persist()?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&t)?);
    } else {
        print!("{}", t.render());
    }
    Ok(t.exit_code())
}
