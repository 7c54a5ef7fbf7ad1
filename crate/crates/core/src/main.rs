fn main() {
    std::process::exit(rigidsched::cli::run(std::env::args_os()));
}
