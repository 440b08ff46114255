fn main() {
    std::process::exit(robust_privacy::cli::dispatch(std::env::args_os()));
}
