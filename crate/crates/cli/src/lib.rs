//! The `pitn` command-line workflow.

pub mod args;
pub mod commands;
pub mod settings;

use std::path::PathBuf;

use pitn_core::{Error, Result};

use args::{Cli, Command};
use commands::Context;
use settings::{apply_bp, load_config};

/// Merge configuration sources and run the selected subcommand.
pub fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    match &cli.command {
        Command::Synth(a) => {
            if let Some(n) = a.n_beats {
                config.synth.n_beats = n;
            }
            if let Some(s) = a.noise_std {
                config.synth.noise_std = s;
            }
        }
        Command::Preprocess(a) => {
            if let Some(n) = a.fixed_len {
                config.preprocess.fixed_len = n;
            }
        }
        Command::Split(a) => {
            if let Some(w) = a.bin_width {
                config.split.bin_width_mmhg = w;
            }
            apply_bp(&mut config, &a.bp);
        }
        Command::Train(a) => {
            a.train.apply(&mut config);
            apply_bp(&mut config, &a.bp);
        }
        Command::Eval(a) => apply_bp(&mut config, &a.bp),
        Command::Sweep(a) => {
            a.train.apply(&mut config);
            apply_bp(&mut config, &a.bp);
        }
        Command::Augment(_) | Command::Report(_) => {}
    }
    config.validate()?;
    let out: PathBuf = cli.out.clone().ok_or_else(|| Error::Usage("an output directory (-o/--out) is required".into()))?;
    let seed = cli.seed.unwrap_or(config.train.seed);
    let ctx = Context::new(config, seed, out, cli.jobs)?;
    match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Preprocess(a) => commands::preprocess(&ctx, &a.input),
        Command::Split(a) => commands::split(&ctx, &a.input),
        Command::Train(a) => commands::train(&ctx, &a.input, &a.splits),
        Command::Augment(a) => commands::augment(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
    }
}
