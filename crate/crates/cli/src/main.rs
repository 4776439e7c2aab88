fn main() {
    std::process::exit(nc_cli::cli::main(std::env::args_os()));
}
