#[tokio::main]
async fn main() {
    let code = proto_ocl_client::cli::main_with(std::env::args_os()).await;
    std::process::exit(code);
}
