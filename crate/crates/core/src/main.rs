fn main() {
    std::process::exit(choicesim::cli::run(std::env::args_os()));
}
