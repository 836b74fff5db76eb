use clap::Parser;
use phlink_cli::app::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, &mut stdout) {
        eprintln!("phlink: {e}");
        std::process::exit(e.exit_code());
    }
}
