use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ppca_elbo::harness::{self, ExperimentConfig};
use ppca_elbo::variational::{optimize_elbo, FamilyRecord};
use ppca_elbo::{CovStructure, Dataset, ModelPrior, Result};

/// Tempered variational inference for probabilistic PCA.
#[derive(Parser, Debug)]
#[command(name = "ppca-elbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw W₀ and a synthetic dataset; writes data.csv and truth.csv.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Sample size (defaults to the first entry of n_grid).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Single-rank ELBO maximization; writes fit.toml.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        k: usize,
    },
    /// Penalized-ELBO rank selection; writes selection.csv and selection.toml.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Selected-fit risk against d K₀ log(d n)/n; writes rate_sweep.csv.
    RateSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Selected-fit risk against the certified oracle bound; writes theorem1_check.csv.
    Theorem1Check {
        #[command(flatten)]
        common: Common,
    },
    /// Markov transfer q(D > M s_n) <= E_q[D]/(M s_n); writes markov_check.csv.
    MarkovCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        multiplier: f64,
        #[arg(long)]
        s_n: f64,
    },
    /// Discrete Donsker-Varadhan battery; writes oracle_suite.csv.
    OracleSuite {
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Input {
    /// Dataset CSV, one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// The dataset has no header line.
    #[arg(long)]
    no_header: bool,
}

/// Config file plus per-key overrides.
#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` TOML file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    s2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    clip_bound: Option<f64>,
    #[arg(long)]
    risk_samples: Option<usize>,
    #[arg(long)]
    certificate_samples: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    final_step_fraction: Option<f64>,
    #[arg(long)]
    final_samples: Option<usize>,
    #[arg(long, value_parser = parse_structure)]
    structure: Option<CovStructure>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_structure(s: &str) -> std::result::Result<CovStructure, String> {
    match s {
        "diagonal" => Ok(CovStructure::Diagonal),
        "full" => Ok(CovStructure::Full),
        _ => Err(format!("expected `diagonal` or `full`, got `{s}`")),
    }
}

macro_rules! override_fields {
    ($cfg:ident, $c:ident; $($field:ident),*) => {
        $(if let Some(v) = $c.$field.clone() { $cfg.$field = v; })*
    };
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        let c = self;
        override_fields!(cfg, c; d, k0, k_max, sigma2, s2, alpha, n_grid, replicates, clip_bound,
            risk_samples, certificate_samples, mc_samples, step_size, iterations, restarts,
            final_step_fraction, structure, output_dir);
        if self.final_samples.is_some() {
            cfg.final_samples = self.final_samples;
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn start(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    harness::write_manifest(&cfg.output_dir, command, &cfg.to_toml())
}

fn report(name: &str, passed: usize, total: usize) -> bool {
    println!("{name}: {passed}/{total} rows pass");
    passed == total
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { common, n, replicate } => {
            let cfg = common.resolve()?;
            start(&cfg, "generate")?;
            let n = n.unwrap_or(cfg.n_grid[0]);
            let (truth, data) = harness::draw_cell(&cfg, n, replicate)?;
            data.write_csv(create(&cfg.output_dir, "data.csv")?, true)?;
            truth.w().write_csv(create(&cfg.output_dir, "truth.csv")?)?;
            println!("wrote n={n}, d={} to {}", data.d(), cfg.output_dir.display());
            Ok(true)
        }
        Command::Fit { common, input, k } => {
            let cfg = common.resolve()?;
            start(&cfg, "fit")?;
            let data = Dataset::load(&input.data, !input.no_header)?;
            let fit = optimize_elbo(&data, k, &cfg.prior()?, &cfg.temper(cfg.seed)?)?;
            #[derive(serde::Serialize)]
            struct FitOut {
                seed: u64,
                elbo: f64,
                elbo_se: f64,
                restart: usize,
                family: FamilyRecord,
            }
            let out = FitOut {
                seed: cfg.seed,
                elbo: fit.elbo.value,
                elbo_se: fit.elbo.std_err,
                restart: fit.restart,
                family: FamilyRecord::from(&fit.family),
            };
            let text = toml::to_string(&out).map_err(|e| ppca_elbo::Error::Parse(e.to_string()))?;
            std::fs::write(cfg.output_dir.join("fit.toml"), text)?;
            println!("K={k} elbo={:.6} (se {:.2e})", fit.elbo.value, fit.elbo.std_err);
            Ok(true)
        }
        Command::Select { common, input } => {
            let cfg = common.resolve()?;
            start(&cfg, "select")?;
            let data = Dataset::load(&input.data, !input.no_header)?;
            let rep = ppca_elbo::selection::select_model(
                &data,
                cfg.k_max,
                &cfg.prior()?,
                &ModelPrior::uniform(cfg.k_max)?,
                &cfg.temper(cfg.seed)?,
            )?;
            rep.write_csv(create(&cfg.output_dir, "selection.csv")?)?;
            std::fs::write(cfg.output_dir.join("selection.toml"), rep.to_toml()?)?;
            println!("selected K={}", rep.selected_k);
            Ok(true)
        }
        Command::RateSweep { common } => {
            let cfg = common.resolve()?;
            start(&cfg, "rate-sweep")?;
            let rows = harness::run_rate_sweep(&cfg)?;
            harness::write_rate_csv(&rows, create(&cfg.output_dir, "rate_sweep.csv")?)?;
            for s in harness::summarize_rates(&rows) {
                println!("n={:>6} risk={:.4e} (se {:.1e}) ratio={:.3}", s.n, s.mean_risk, s.risk_se, s.mean_ratio);
            }
            Ok(report("rate-sweep", rows.iter().filter(|r| r.is_ok()).count(), rows.len()))
        }
        Command::Theorem1Check { common } => {
            let cfg = common.resolve()?;
            start(&cfg, "theorem1-check")?;
            let rows = harness::run_theorem1_check(&cfg)?;
            harness::write_theorem1_csv(&rows, create(&cfg.output_dir, "theorem1_check.csv")?)?;
            Ok(report("theorem1-check", rows.iter().filter(|r| r.pass).count(), rows.len()))
        }
        Command::MarkovCheck { common, multiplier, s_n } => {
            let cfg = common.resolve()?;
            start(&cfg, &format!("markov-check multiplier={multiplier} s_n={s_n}"))?;
            let rows = harness::run_markov_check(&cfg, multiplier, s_n)?;
            harness::write_markov_csv(&rows, create(&cfg.output_dir, "markov_check.csv")?)?;
            Ok(report("markov-check", rows.iter().filter(|r| r.sides.pass).count(), rows.len()))
        }
        Command::OracleSuite { output_dir } => {
            let cases = harness::run_oracle_suite()?;
            harness::write_oracle_csv(&cases, create(&output_dir, "oracle_suite.csv")?)?;
            harness::write_manifest(&output_dir, "oracle-suite", "")?;
            Ok(report("oracle-suite", cases.iter().filter(|c| c.pass).count(), cases.len()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
