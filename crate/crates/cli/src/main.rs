use clap::Parser;

fn main() {
    let cli = gpunion_cli::Cli::parse();
    let code = gpunion_cli::run(cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
