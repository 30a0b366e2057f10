fn main() {
    std::process::exit(online_fcr::cli::main_exit());
}
