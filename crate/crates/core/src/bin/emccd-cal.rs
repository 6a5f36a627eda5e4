fn main() {
    std::process::exit(emccd_cal::cli::run(std::env::args_os()));
}
