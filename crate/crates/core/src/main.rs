fn main() {
    std::process::exit(magflow::cli::main());
}
