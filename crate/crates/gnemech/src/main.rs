fn main() {
    std::process::exit(gnemech::cli::main());
}
