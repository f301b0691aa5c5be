fn main() {
    std::process::exit(spikedet::cli::main_with_args(std::env::args_os()));
}
