fn main() {
    std::process::exit(ser_core::cli::dispatch(std::env::args_os()));
}
