fn main() {
    std::process::exit(planact::cli::main());
}
