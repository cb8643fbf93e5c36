fn main() {
    std::process::exit(eqsearch::cli::main());
}
