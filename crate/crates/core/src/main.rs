fn main() {
    std::process::exit(headprobe::cli::run(std::env::args_os()));
}
