fn main() {
    std::process::exit(irs_sim::cli::main_with_args(std::env::args_os()));
}
