fn main() {
    std::process::exit(mindqa::harness::cli_main(std::env::args_os()));
}
