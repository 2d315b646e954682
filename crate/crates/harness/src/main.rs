fn main() {
    std::process::exit(clasr_harness::cli::main_with_args(std::env::args_os()));
}
