use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rccdbg::{analysis, assign, evaluate, generate, heatmaps, report, retrain, server, PipelineConfig, Workspace};

#[derive(Parser)]
#[command(name = "rccdbg", version, about = "Cluster DNN errors by relevance heatmaps and retrain on the unsafe set")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Workspace root (DNNModels, DataSets, UnsafeSet, T)
    #[arg(long)]
    workspace: PathBuf,
    /// JSON pipeline configuration; defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic training, test and improvement sets
    Gen(Common),
    /// Train the initial model on the training set
    Train(Common),
    /// Evaluate the model; writes T/trainResult.csv and T/testResult.csv
    Test(Common),
    /// Relevance heatmaps of the error-inducing test images, per layer
    Heatmaps(Common),
    /// Root cause clusters per layer and the best layer
    Cluster(Common),
    /// Select the unsafe set from the improvement set
    Assign(Common),
    /// Retrain on the training set plus the balanced, labeled unsafe set
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Labels file (image_id,label); defaults to UnsafeSet/labels.csv
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Inspection effort and variance-reduction summary
    Report(Common),
    /// Serve the review API and UI on localhost
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn setup(c: &Common) -> Result<(Workspace, PipelineConfig)> {
    let cfg = PipelineConfig::load(c.config.as_deref(), c.seed)?;
    Ok((Workspace::new(&c.workspace), cfg))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => {
            let (ws, cfg) = setup(&c)?;
            let s = generate::cmd_gen(&ws, &cfg)?;
            println!("generated {} training, {} test and {} improvement images", s.training, s.test, s.improvement);
        }
        Command::Train(c) => {
            let (ws, cfg) = setup(&c)?;
            let (_, r) = generate::cmd_train(&ws, &cfg)?;
            println!("trained {} for {} epochs, final loss {:.4}", cfg.model, r.epoch_losses.len(), r.epoch_losses.last().unwrap_or(&f64::NAN));
        }
        Command::Test(c) => {
            let (ws, cfg) = setup(&c)?;
            let s = evaluate::cmd_test(&ws, &cfg)?;
            println!(
                "training accuracy {:.4}, test accuracy {:.4}, {} error-inducing test images",
                s.train_accuracy,
                s.test_accuracy,
                s.error_ids.len()
            );
        }
        Command::Heatmaps(c) => {
            let (ws, cfg) = setup(&c)?;
            let s = heatmaps::cmd_heatmaps(&ws, &cfg)?;
            println!("heatmaps for {} images at {} layers", s.images, s.layers);
        }
        Command::Cluster(c) => {
            let (ws, cfg) = setup(&c)?;
            let s = analysis::cmd_cluster(&ws, &cfg)?;
            for l in &s.layers {
                let score = l.layer_score.map_or("n/a".into(), |v| format!("{v:.4}"));
                let weak = if l.weak_knee { " (weak knee)" } else { "" };
                println!("layer {:>2} {:<9} K={:<3} score {score}{weak}", l.layer_index, l.layer, l.k);
            }
            println!("best layer: {}", s.best_layer);
        }
        Command::Assign(c) => {
            let (ws, cfg) = setup(&c)?;
            let s = assign::cmd_assign(&ws, &cfg)?;
            println!("{} of {} improvement images in the unsafe set (layer {})", s.unsafe_images, s.improvement_images, s.layer_index);
        }
        Command::Retrain { common, labels } => {
            let (ws, cfg) = setup(&common)?;
            let c = retrain::cmd_retrain(&ws, &cfg, labels.as_deref())?;
            println!(
                "{} saved; training accuracy {:.4} -> {:.4}, test accuracy {:.4} -> {:.4}",
                c.retrained_model, c.original.training_set, c.retrained.training_set, c.original.test_set, c.retrained.test_set
            );
        }
        Command::Report(c) => {
            let (ws, cfg) = setup(&c)?;
            print!("{}", report::render_text(&report::cmd_report(&ws, &cfg)?));
        }
        Command::Serve { common, port } => {
            let (ws, cfg) = setup(&common)?;
            let srv = server::ReviewServer::start(ws, cfg, port)?;
            println!("review server on http://{}", srv.addr());
            srv.wait();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
