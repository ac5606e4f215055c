fn main() {
    std::process::exit(thermonet_cli::main_with_args(std::env::args_os()));
}
