use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hyred::flops::account;
use hyred::runner::{
    emit_heatmap, plan_for, run_analysis, run_prefill, ConfigOverrides, HeatmapMode,
    HeatmapOptions, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "hyred",
    version,
    about = "Query-conditioned visual token reduction for hybrid models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run prefill with per-layer token reduction and write report.json.
    Prefill {
        #[command(flatten)]
        common: Common,
        /// Also write wall-clock timing to timing.json.
        #[arg(long)]
        timing: bool,
        /// Attach a stability analysis of the unreduced pass to the report.
        #[arg(long)]
        stability: bool,
    },
    /// Write tau, density and score CSVs for the model and the comparison preset.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Comparison preset; `none` disables it.
        #[arg(long)]
        compare: Option<String>,
    },
    /// Write text-to-visual implicit weights of one Mamba layer as CSV.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum, default_value_t = Decay::With)]
        decay: Decay,
        /// Write log10 values.
        #[arg(long)]
        log: bool,
        /// Include causal text columns.
        #[arg(long)]
        text_columns: bool,
    },
    /// Print the retention plan, compression rate and FLOPs without running the model.
    Plan {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Decay {
    With,
    Free,
}

#[derive(Args)]
struct Common {
    /// Run config: a JSON file or the name of a shipped config.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pattern: Option<String>,
    /// Shipped schedule name or JSON file.
    #[arg(long)]
    schedule: Option<String>,
    /// query-based, avg-pool or query-attn-avg-pool-mamba.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(c) => RunConfig::load(c).with_context(|| format!("loading config `{c}`"))?,
            None => RunConfig::default(),
        };
        cfg.apply(&ConfigOverrides {
            preset: self.preset.clone(),
            frames: self.frames,
            seed: self.seed,
            pattern: self.pattern.clone(),
            schedule: self.schedule.clone(),
            mode: self.mode.clone(),
            out_dir: self.out_dir.clone(),
        })?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Prefill {
            common,
            timing,
            stability,
        } => {
            let mut cfg = common.load()?;
            cfg.record_timing |= timing;
            cfg.analysis.stability |= stability;
            let report = run_prefill(&cfg)?;
            let dir = out_dir(&cfg);
            report.write_to(&dir)?;
            println!(
                "{}: {} -> {} visual tokens, compression {:.2}%, speedup {:.2}x",
                report.architecture,
                report.num_visual,
                report.final_visual_tokens,
                report.compression_rate,
                report.flops.speedup
            );
            if let Some(p) = &report.planted {
                println!("planted survival {:.4}", p.survival);
            }
            println!("wrote {}", dir.join("report.json").display());
        }
        Command::Analyze { common, compare } => {
            let mut cfg = common.load()?;
            match compare.as_deref() {
                Some("none") => cfg.analysis.compare_preset = None,
                Some(name) => cfg.analysis.compare_preset = Some(name.into()),
                None => {}
            }
            let dir = out_dir(&cfg);
            for run in run_analysis(&cfg)? {
                let mean = run.stability.mean_density().unwrap_or(f64::NAN);
                println!(
                    "{}: {} maps, mean density {mean:.4}",
                    run.name,
                    run.maps.len()
                );
                for path in run.write_csvs(&dir)? {
                    println!("wrote {}", path.display());
                }
            }
        }
        Command::Heatmap {
            common,
            layer,
            decay,
            log,
            text_columns,
        } => {
            let cfg = common.load()?;
            let mode = match decay {
                Decay::With => HeatmapMode::WithDecay,
                Decay::Free => HeatmapMode::DecayFree,
            };
            let map = emit_heatmap(
                &cfg,
                HeatmapOptions {
                    layer,
                    mode,
                    log,
                    text_columns,
                },
            )?;
            let dir = out_dir(&cfg);
            std::fs::create_dir_all(&dir)?;
            let tag = match mode {
                HeatmapMode::WithDecay => "with_decay",
                HeatmapMode::DecayFree => "decay_free",
            };
            let path = dir.join(format!("heatmap_layer{layer}_{tag}.csv"));
            map.write_csv(create(&path)?)?;
            println!("wrote {} ({} cells)", path.display(), map.cells.len());
        }
        Command::Plan { common } => {
            let cfg = common.load()?;
            let arch = cfg.architecture()?;
            let plan = plan_for(&cfg, &arch)?;
            let flops = account(&plan, &arch, cfg.text_tokens);
            let doc = serde_json::json!({
                "architecture": cfg.arch_name(),
                "layout": arch.layout(),
                "compression_rate": plan.compression_rate(),
                "plan": plan,
                "flops": flops,
            });
            let text = serde_json::to_string_pretty(&doc)?;
            // a closed pipe (e.g. `| head`) is not an error
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("plan.json"), text + "\n")?;
            }
        }
    }
    Ok(())
}
