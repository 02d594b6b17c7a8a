use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use saferl::config::{env_overrides, parse_pairs, HyperConfig};
use saferl::exact_penalty::{exactness_suite, QuadraticProblem, SubgradientOptions};
use saferl::harness::{score, summary_text, sweep, write_csv, Trainer};

#[derive(Parser)]
#[command(name = "saferl", version, about = "Safe RL experiments on the speed-limit task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve.
    Train {
        /// `key = value` config file; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// td3, safety_layer, recovery, lagrangian, fac or epo.
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per value of a single config key.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks that a large fixed penalty recovers constrained optima on random QPs.
    VerifyPenalty {
        #[arg(long, default_value_t = 20)]
        problems: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// File, then `SAFERL_*` environment variables, then command-line flags.
fn load_config(path: Option<&Path>, extra: Vec<(String, String)>) -> Result<HyperConfig> {
    let mut pairs = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_pairs(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Vec::new(),
    };
    pairs.extend(env_overrides(std::env::vars()));
    pairs.extend(extra);
    Ok(HyperConfig::from_pairs(&pairs)?)
}

fn train(config: Option<&Path>, algo: Option<String>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(a) = algo {
        extra.push(("algorithm".to_string(), a));
    }
    if let Some(s) = seed {
        extra.push(("seed".to_string(), s.to_string()));
    }
    let cfg = load_config(config, extra)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stem = format!("{}_seed{}", cfg.algorithm, cfg.seed);
    std::fs::write(out.join(format!("{stem}.config")), cfg.to_config_string())?;

    let (records, _) = Trainer::new(&cfg)?.run()?;
    write_csv(&out.join(format!("{stem}.csv")), &records)?;
    let summary = summary_text(&stem, &[score(&records, cfg.total_steps)?])?;
    std::fs::write(out.join(format!("{stem}_summary.txt")), &summary)?;
    print!("{summary}");
    Ok(())
}

fn run_sweep(config: Option<&Path>, key: &str, values: &[String], out: &Path) -> Result<()> {
    let cfg = load_config(config, Vec::new())?;
    let runs = sweep(&cfg, key, values, out)?;
    for run in &runs {
        let s = score(&run.records, cfg.total_steps)?;
        println!(
            "{key} = {}: reward {:.2}, episode cost {:.2}, cost rate {:.4} -> {}",
            run.value,
            s.eval_ep_reward,
            s.eval_ep_cost,
            s.train_cost_rate,
            run.path.display()
        );
    }
    Ok(())
}

fn verify_penalty(problems: usize, seed: u64) -> Result<()> {
    let opts = SubgradientOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = exactness_suite(problems, &opts, &mut rng)?;
    let mut failures = 0;
    for (i, c) in cases.iter().enumerate() {
        let ok = c.exact_error <= 1e-3 && c.weak_violation > 1e-2;
        failures += usize::from(!ok);
        println!(
            "problem {i:2} dim {} multiplier {:.3}: error at 2x {:.2e}, violation at 0.5x {:.3e} {}",
            c.dim,
            c.multiplier,
            c.exact_error,
            c.weak_violation,
            if ok { "ok" } else { "FAIL" }
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for i in 0..problems {
        let p = QuadraticProblem::random(1 + i % 4, (0.5, 4.0), &mut rng)?;
        let xs = [5.0, 10.0, 20.0]
            .iter()
            .map(|&k| p.solve_penalized(k, &opts).map(|s| s.x))
            .collect::<saferl::Result<Vec<_>>>()?;
        let spread = xs
            .iter()
            .flat_map(|a| xs.iter().map(move |b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)))
            .fold(0.0, f64::max);
        if spread > 1e-3 {
            failures += 1;
            println!("problem {i:2}: factors 5, 10, 20 disagree by {spread:.2e} FAIL");
        }
    }
    if failures > 0 {
        bail!("{failures} exact-penalty checks failed");
    }
    println!("all exact-penalty checks passed");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, algo, seed, out } => train(config.as_deref(), algo, seed, &out),
        Command::Sweep { config, key, values, out } => run_sweep(config.as_deref(), &key, &values, &out),
        Command::VerifyPenalty { problems, seed } => verify_penalty(problems, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
