fn main() {
    std::process::exit(densa::cli::main());
}
