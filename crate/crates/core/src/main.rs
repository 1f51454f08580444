use clap::Parser;
use hypercomplex_mhd::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let code = match run(&cli, &mut out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("hcmhd: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
