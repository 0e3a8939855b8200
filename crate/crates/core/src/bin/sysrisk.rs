fn main() {
    std::process::exit(sysrisk::cli::main_with_args(std::env::args_os()));
}
