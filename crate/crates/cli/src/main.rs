use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use clickforge::service::{Predictor, PredictorConfig, SessionStore};
use clickforge::train::Regime;
use clickforge_cli::commands::{self, Config, FuseArgs};

#[derive(Parser)]
#[command(name = "clickforge", version, about = "One-click instance pseudo-labelling toolkit")]
struct Cli {
    /// Seed for data generation, click derivation, splits and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file overriding synth/train/eval/pseudo settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Standard,
    Negative,
    Panoptic,
    PanopticCenterHead,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Standard => Regime::Standard,
            RegimeArg::Negative => Regime::Negative,
            RegimeArg::Panoptic => Regime::Panoptic,
            RegimeArg::PanopticCenterHead => Regime::PanopticCenterHead,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the Gaussian click map of a click list as a grayscale PNG.
    Encode {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
    },
    /// Train a toy model on a dataset directory or on synthetic scenes.
    Train {
        #[arg(long, value_enum)]
        regime: RegimeArg,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Turn clicks on one image into an instance map.
    Fuse {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        /// Panoptic checkpoint; the classical ExG predictor is used without one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Take centers from the center head instead of the clicks.
        #[arg(long)]
        recover: bool,
        #[arg(long, default_value_t = commands::default_threshold())]
        threshold: f64,
    },
    /// Score a checkpoint: mIoU, fgIoU and PQ/SQ/RQ.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Split a dataset, pseudo-label the unlabelled side and export the merge.
    Pseudolabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Time N-pass against single-pass training epochs.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        objects: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// `classical` or `toy:<checkpoint>`.
        #[arg(long, default_value = "classical")]
        predictor: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = Config::load(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Encode { image, clicks } => {
            let path = commands::encode(&image, &clicks, &cfg.eval.encoding, out)?;
            println!("{}", path.display());
        }
        Command::Train { regime, data } => {
            let path = commands::train_cmd(regime.into(), data.as_deref(), &cfg, cli.seed, out)?;
            println!("{}", path.display());
        }
        Command::Fuse { image, clicks, checkpoint, recover, threshold } => {
            let args = FuseArgs { image: &image, clicks: &clicks, checkpoint: checkpoint.as_deref(), recover, threshold };
            let pred = commands::fuse_cmd(&args, &cfg, out)?;
            println!("{}", serde_json::to_string(&pred)?);
        }
        Command::Eval { checkpoint, data } => {
            let r = commands::eval_cmd(&checkpoint, data.as_deref(), &cfg, cli.seed, out)?;
            println!(
                "{}",
                serde_json::json!({ "miou": r.miou, "fg_iou": r.fg_iou, "pq": r.pq, "sq": r.sq, "rq": r.rq })
            );
        }
        Command::Pseudolabel { checkpoint, data } => {
            let n = commands::pseudolabel_cmd(&checkpoint, data.as_deref(), &cfg, cli.seed, out)?;
            println!("exported {n} scenes to {}", out.display());
        }
        Command::Bench { objects, epochs, warmup } => {
            for (n, ratio) in commands::bench_cmd(&objects, epochs, warmup, &cfg, cli.seed, out)? {
                println!("objects={n} ratio={ratio:.2}");
            }
        }
        Command::Serve { port, predictor } => {
            let predictor = Predictor::load(&PredictorConfig::parse(&predictor)?).context("loading predictor")?;
            let store = Arc::new(SessionStore::new(predictor, cli.out.join("sessions")));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let addr = SocketAddr::from(([127, 0, 0, 1], port));
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, clickforge_cli::server::router(store))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
