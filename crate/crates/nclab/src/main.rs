fn main() {
    std::process::exit(nclab::cli::dispatch(std::env::args_os()));
}
