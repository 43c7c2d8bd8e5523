fn main() {
    std::process::exit(tpp_core::cli::run(std::env::args_os()));
}
