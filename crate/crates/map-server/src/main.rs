use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use map_server::{serve_blocking, ServerConfig, DEFAULT_PORT};

/// Serve the aspect-mapping workbench for one working directory.
#[derive(Debug, Parser)]
#[command(name = "map-server", version)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Loopback unless overridden.
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    host: IpAddr,
    /// Teacher checkpoint; defaults to teacher/teacher.json in the workdir.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Directory of UI assets served under /; defaults to <workdir>/static.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = ServerConfig {
        workdir: args.workdir,
        checkpoint: args.checkpoint,
        static_dir: args.static_dir,
        addr: SocketAddr::new(args.host, args.port),
    };
    match serve_blocking(config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("map-server: {e}");
            ExitCode::FAILURE
        }
    }
}
