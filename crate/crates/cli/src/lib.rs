//! Operator surface: configuration loading, the four CLI commands, and the
//! HTTP gateway. The binary in `main.rs` is a thin shell around [`run_main`].

pub mod commands;
pub mod config;
pub mod gateway;

use clap::error::ErrorKind;
use clap::Parser;

use commands::Cli;

/// Parse arguments, dispatch, and map the outcome onto the stable exit-code
/// contract: 0 success, 1 usage error, 2 data error, 3 backend error.
pub fn run_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };

    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: failed to start async runtime: {e}");
            return 3;
        }
    };

    match runtime.block_on(commands::dispatch(cli)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.code()
        }
    }
}

pub use commands::{dispatch, CliError as CommandError};
pub use config::{AppConfig, BackendSpec};
pub use gateway::{router, serve_with_shutdown, GatewayState};
