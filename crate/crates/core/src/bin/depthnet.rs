fn main() {
    std::process::exit(depthnet::cli::main_from_env());
}
