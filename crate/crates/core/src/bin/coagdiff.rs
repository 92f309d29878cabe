fn main() {
    std::process::exit(coagdiff::cli::main_with_args(std::env::args_os()));
}
