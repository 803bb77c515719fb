fn main() {
    std::process::exit(regen_tad::cli::main());
}
