fn main() {
    std::process::exit(omniroute_cli::run_main());
}
