fn main() {
    std::process::exit(romforge::cli::main());
}
