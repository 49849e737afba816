use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qgan_harness::gradcheck;
use qgan_harness::metrics::{fit_gaussian, frechet_between, ExtractorKind};
use qgan_harness::{
    emit_samples, generator_from_checkpoint, qsn_ablation, Checkpoint, Dataset, Result, TrainConfig, Trainer,
};
use qgan_models::{build_gan, Domain, ModelSpec, SnKind};

#[derive(Parser)]
#[command(name = "qgan", about = "Quaternion GAN training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    None,
    Split,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write generated images from a checkpoint as PPM files plus a grid.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fréchet distance between checkpoint samples and a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "pixels")]
        extractor: String,
    },
    /// Parameter counts of a preset and its real-valued twin.
    CountParams {
        #[arg(long)]
        spec: String,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        #[arg(long)]
        module: Option<String>,
    },
    /// Critic spectral norms over a toy run with the given normalization.
    QsnAblation {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 2000)]
        iterations: u64,
        /// Base config; the 16x16 toy run when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<TrainConfig> {
    let mut c = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::toy(),
    };
    c.apply_env()?;
    c.validate()?;
    Ok(c)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config } => {
            let mut t = Trainer::new(load_config(Some(&config))?)?;
            let r = t.run()?;
            if let Some(last) = r.steps.last() {
                println!(
                    "iterations {} loss_d {:.6} loss_g {:.6}",
                    last.iteration, last.loss_d, last.loss_g
                );
            }
            println!("critic updates {} generator updates {}", r.d_updates, r.g_updates);
            println!(
                "max critic sigma full {:.4} split {:.4}",
                r.max_sigma_full(),
                r.max_sigma_split()
            );
            for (it, fid) in &r.evals {
                println!("frechet {it} {fid:.6}");
            }
            for p in &r.checkpoints {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Sample {
            checkpoint,
            n,
            out,
            seed,
        } => {
            let (_, g) = generator_from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let r = emit_samples(&g, n, seed, &out)?;
            println!("wrote {} samples and {}", r.files.len(), r.grid.display());
            println!("max |q0| {:.4e}, clamped components {}", r.max_real_part, r.clamped);
        }
        Command::Eval {
            checkpoint,
            data,
            extractor,
        } => {
            let ex = ExtractorKind::parse(&extractor)?.build();
            let (config, g) = generator_from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let data = Dataset::load(&data)?;
            let reference = fit_gaussian(&ex.features(&data.head_batch(data.len().max(2))?)?)?;
            let dir = std::env::temp_dir().join(format!("qgan-eval-{}", std::process::id()));
            let samples = emit_samples(&g, config.eval_generated.max(2), config.seed, &dir);
            let _ = std::fs::remove_dir_all(&dir);
            let generated = fit_gaussian(&ex.features(&samples?.raw)?)?;
            println!("frechet[{}] {:.6}", ex.name(), frechet_between(&generated, &reference)?);
        }
        Command::CountParams { spec } => {
            let s = ModelSpec::preset(&spec)?;
            let (g, d) = build_gan::<f32>(&s, 0)?;
            let (tg, td) = build_gan::<f32>(&s.with_domain(Domain::Real), 0)?;
            let (q, r) = (
                g.count_parameters() + d.count_parameters(),
                tg.count_parameters() + td.count_parameters(),
            );
            println!("{spec} ({:?})", s.domain);
            println!("generator {}", g.count_parameters());
            println!("discriminator {}", d.count_parameters());
            println!("total {q}");
            println!("twin generator {}", tg.count_parameters());
            println!("twin discriminator {}", td.count_parameters());
            println!("twin total {r}");
            println!("ratio {:.4}", q as f64 / r as f64);
        }
        Command::GradCheck { module } => {
            let results = gradcheck::run(module.as_deref())?;
            let mut failed = 0;
            for r in &results {
                let ok = r.passed();
                failed += usize::from(!ok);
                println!(
                    "{} {}/{}: max relative error {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    r.module,
                    r.name,
                    r.report.max_error()
                );
            }
            if failed > 0 {
                return Err(qgan_harness::HarnessError::Numeric {
                    iteration: 0,
                    detail: format!("{failed} gradient checks failed"),
                });
            }
        }
        Command::QsnAblation {
            mode,
            iterations,
            config,
        } => {
            let base = load_config(config.as_ref())?;
            let sn = match mode {
                Mode::None => SnKind::None,
                Mode::Split => SnKind::Split,
                Mode::Full => SnKind::Full,
            };
            let r = qsn_ablation(&base, sn, iterations)?;
            println!("mode {sn:?} iterations {}", r.g_updates);
            println!("max critic sigma full {:.4}", r.max_sigma_full());
            println!("max critic sigma split {:.4}", r.max_sigma_split());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
