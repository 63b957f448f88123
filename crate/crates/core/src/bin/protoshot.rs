fn main() {
    std::process::exit(protoshot::cli::run(std::env::args_os()));
}
