fn main() {
    std::process::exit(netadjust::cli::run(std::env::args_os()));
}
