use clap::Parser;
use tracing_subscriber::EnvFilter;

use proto_ocl_core::api::DEFAULT_ADDR;

#[derive(Parser)]
#[command(name = "proto-ocl-server", version, about = "Serve the proto-ocl learner over HTTP/JSON")]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "PROTO_OCL_ADDR", default_value = DEFAULT_ADDR)]
    addr: String,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let listener = match tokio::net::TcpListener::bind(&args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.addr);
            std::process::exit(2);
        }
    };
    tracing::info!(addr = %listener.local_addr().map_or(args.addr.clone(), |a| a.to_string()), "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = proto_ocl_server::serve(listener, shutdown).await {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
