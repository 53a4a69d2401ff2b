fn main() {
    std::process::exit(geomatch_service::cli::main());
}
