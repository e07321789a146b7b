fn main() {
    std::process::exit(ccsolid_tools::run_command(std::env::args_os()));
}
