fn main() {
    std::process::exit(pilotwave::cli::run(std::env::args_os()));
}
