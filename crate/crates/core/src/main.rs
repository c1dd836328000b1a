fn main() {
    std::process::exit(chkp_hdg::cli::main_with_args(std::env::args_os()));
}
