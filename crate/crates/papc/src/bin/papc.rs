fn main() {
    std::process::exit(papc::cli::run());
}
