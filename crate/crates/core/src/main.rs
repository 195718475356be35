fn main() {
    std::process::exit(thermoacoustic::cli::main());
}
