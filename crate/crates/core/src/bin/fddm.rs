fn main() {
    std::process::exit(fddm::cli::run(std::env::args_os()));
}
