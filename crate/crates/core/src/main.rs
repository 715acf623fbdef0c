fn main() {
    std::process::exit(fiscal_arena::cli::run(std::env::args_os()));
}
