fn main() {
    std::process::exit(maplaw_harness::cli::run(std::env::args_os()));
}
