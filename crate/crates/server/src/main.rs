use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use memscope::masklab::HarnessConfig;
use memscope_server::commands::{format_table, generate, mask_report};
use memscope_server::{build_router, AppState, DataCatalog};

#[derive(Parser)]
#[command(
    name = "memscope",
    version,
    about = "Inspect the hidden-state memory of recurrent navigation agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the API and the UI bundle.
    Serve {
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DATA_DIR", default_value = "./data")]
        data_dir: PathBuf,
        #[arg(long, env = "UI_DIR", default_value = "./ui/dist")]
        ui_dir: PathBuf,
        #[arg(long, env = "HOST", default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Generate toy episodes with the planted controller.
    Gen {
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "./data")]
        out: PathBuf,
        /// Also render one PNG frame per step.
        #[arg(long)]
        frames: bool,
    },
    /// Compare memory-masking strategies against full memory.
    Mask {
        /// Strategy names, e.g. top-half-activation, random-half-3. Repeatable.
        #[arg(long, required = true, value_delimiter = ',')]
        strategy: Vec<String>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the table as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve {
            port,
            data_dir,
            ui_dir,
            host,
        } => {
            let catalog = DataCatalog::open(&data_dir).with_context(|| format!("opening {}", data_dir.display()))?;
            log::info!("{} episodes in {}", catalog.summaries().len(), data_dir.display());
            if !ui_dir.is_dir() {
                log::warn!("UI directory {} not found; serving the API only", ui_dir.display());
            }
            let app = build_router(AppState::new(catalog), ui_dir.is_dir().then_some(ui_dir.as_path()));
            let addr = SocketAddr::new(host, port);
            let listener = tokio::net::TcpListener::bind(addr).await?;
            log::info!("listening on http://{addr}");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
        }
        Command::Gen {
            episodes,
            seed,
            out,
            frames,
        } => {
            let config = HarnessConfig::default();
            let written =
                tokio::task::spawn_blocking(move || generate(&out, episodes, seed, frames, &config)).await??;
            println!("wrote {} episodes", written.len());
        }
        Command::Mask {
            strategy,
            episodes,
            seed,
            report,
        } => {
            let config = HarnessConfig::default();
            let table =
                tokio::task::spawn_blocking(move || mask_report(&strategy, episodes, seed, report.as_deref(), &config))
                    .await??;
            print!("{}", format_table(&table));
        }
    }
    Ok(())
}
