fn main() {
    std::process::exit(etcl::bench::cli::run_cli(std::env::args_os()));
}
