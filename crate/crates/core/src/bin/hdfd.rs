fn main() {
    std::process::exit(hdfd::cli::run(std::env::args_os()));
}
