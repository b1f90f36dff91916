fn main() { std::process::exit(dfsmem_cli::cli_main(std::env::args().collect())); }
