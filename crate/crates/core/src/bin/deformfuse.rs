fn main() {
    std::process::exit(deformfuse::cli::dispatch(std::env::args_os()));
}
