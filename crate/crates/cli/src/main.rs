fn main() {
    std::process::exit(uav_aou_cli::main_with_args(std::env::args_os()));
}
