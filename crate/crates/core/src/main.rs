fn main() {
    std::process::exit(asap_stream::cli::run(std::env::args_os()));
}
