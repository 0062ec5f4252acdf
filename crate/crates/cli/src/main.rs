fn main() { std::process::exit(paratrap_cli::cli_main(std::env::args_os().collect())); }
