fn main() {
    std::process::exit(linvt::cli::main());
}
