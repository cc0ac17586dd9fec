fn main() {
    std::process::exit(motpose_harness::cli::run(std::env::args_os()));
}
