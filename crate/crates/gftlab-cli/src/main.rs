use clap::Parser;
use gftlab_cli::commands::{run, Cli};

fn main() {
    gftlab::mc::init_threads_from_env();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("gft-lab: {e}");
        if let Some(h) = e.hint() {
            eprintln!("{h}");
        }
        std::process::exit(e.exit_code());
    }
}
