fn main() {
    std::process::exit(weft::cli::run(std::env::args_os()));
}
