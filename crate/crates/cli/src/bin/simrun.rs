//! `simrun --config <file> --seed <n> --out <dir>`

use clap::Parser;
use gpunion_cli::output::{OutputMode, Printer};
use gpunion_cli::SimArgs;

#[derive(Parser)]
#[command(name = "simrun", version, about = "Run a churn simulation scenario")]
struct Opts {
    #[command(flatten)]
    sim: SimArgs,
}

fn main() {
    let opts = Opts::parse();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let mut p = Printer { mode: OutputMode::Human, out: &mut out, err: &mut err };
    let code = match gpunion_cli::simulate(&opts.sim) {
        Ok(r) => {
            println!("seed {}: report.json, trace.csv and plots/ written to {}", r.seed, opts.sim.out.display());
            0
        }
        Err(e) => p.fail(&e),
    };
    std::process::exit(code);
}
