//! Command-line front end: train, eval, grad-check, export-graph.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scg_net::checkpoint::Checkpoint;
use scg_net::config::{load_config, parse_config};
use scg_net::error::Result;
use scg_net::gradcheck;
use scg_net::metrics::argmax_predictions;
use scg_net::model::ScgNet;
use scg_net::pnm::{write_pgm, write_ppm};
use scg_net::scene::{batch_from_indices, generate_scene};
use scg_net::scg::SamplingMode;
use scg_net::tensor::io::save_tensor;
use scg_net::train::{evaluate_scenes, train};
use scg_net::Mode;

#[derive(Parser)]
#[command(name = "scg", about = "Self-constructing graph network on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes checkpoints and CSV logs into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out scenes; writes PPM/PGM pairs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Configuration file providing the scene generator settings.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Finite-difference verification of the registered operations.
    GradCheck {
        /// One scope name, or every registered scope by default.
        #[arg(long)]
        scope: Option<String>,
        /// Tolerance override applied to the selected scopes.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Dump the learned graph of one scene as TSR files plus a summary.
    ExportGraph {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene index within the checkpoint's generator settings.
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train { config, resume, out } => cmd_train(&config, resume.as_deref(), &out),
        Cmd::Eval { ckpt, scenes, out } => cmd_eval(&ckpt, &scenes, &out),
        Cmd::GradCheck { scope, tol } => cmd_grad_check(scope.as_deref(), tol),
        Cmd::ExportGraph { ckpt, scene, out } => cmd_export_graph(&ckpt, scene, &out),
    }
}

fn cmd_train(config: &Path, resume: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let ckpt = resume.map(Checkpoint::load).transpose()?;
    let (_, report) = train(&cfg, Some(out), ckpt.as_ref())?;
    if let Some(last) = report.loss_history.last() {
        println!("steps: {}  final total loss: {:.6}", last.step, last.total);
    }
    println!(
        "train: oa {:.4}  mf1 {:.4}",
        report.final_train.overall_accuracy, report.final_train.mean_f1
    );
    println!(
        "eval:  oa {:.4}  mf1 {:.4}",
        report.final_eval.overall_accuracy, report.final_eval.mean_f1
    );
    println!("wrote {}", out.join("final.scgc").display());
    Ok(ExitCode::SUCCESS)
}

fn load_model(ckpt_path: &Path) -> Result<(Checkpoint, scg_net::config::FullConfig, ScgNet)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = parse_config(&ckpt.config_text)?;
    let mut model = ScgNet::new(&cfg.model)?;
    ckpt.restore_model(&mut model)?;
    Ok((ckpt, cfg, model))
}

fn cmd_eval(ckpt_path: &Path, scenes: &Path, out: &Path) -> Result<ExitCode> {
    let (_, _, model) = load_model(ckpt_path)?;
    let scene_cfg = load_config(scenes)?;
    let spec = &scene_cfg.scene;
    std::fs::create_dir_all(out)?;

    // the held-out index range, disjoint from the training corpus
    let lo = scene_cfg.train.train_scenes;
    let indices: Vec<usize> = (lo..lo + scene_cfg.train.eval_scenes).collect();
    let report = evaluate_scenes(&model, spec, &indices, scene_cfg.train.batch_size)?;

    for &i in &indices {
        let scene = generate_scene(spec, i);
        let batch = batch_from_indices(spec, &[i])?;
        let output = model.forward(&batch.images, Mode::Eval, SamplingMode::Eval)?;
        let preds = argmax_predictions(&output.logits)?;
        let s = spec.image_size;
        write_ppm(&out.join(format!("scene_{i:05}.ppm")), &scene.image, s, s)?;
        write_pgm(
            &out.join(format!("pred_{i:05}.pgm")),
            &preds.data,
            s,
            s,
            (spec.classes - 1) as u8,
        )?;
    }

    print!("{}", report.to_key_value_text());
    std::fs::write(out.join("metrics.txt"), report.to_key_value_text())?;
    std::fs::write(out.join("metrics.csv"), report.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_grad_check(scope: Option<&str>, tol: Option<f64>) -> Result<ExitCode> {
    let seed = scg_net::config::seed_override_from_env()?.unwrap_or(42);
    let reports = gradcheck::run_scope(scope.unwrap_or("all"), tol, seed)?;
    let mut failed = false;
    for report in &reports {
        let status = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<24} max rel err {:.3e} (tol {:.0e})",
            report.scope,
            report.max_rel_error(),
            report.tolerance
        );
        if !report.passed() {
            failed = true;
            for (group, err) in &report.groups {
                if *err >= report.tolerance {
                    println!("     {group}: {err:.3e}");
                }
            }
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_export_graph(ckpt_path: &Path, scene: usize, out: &Path) -> Result<ExitCode> {
    let (_, cfg, model) = load_model(ckpt_path)?;
    std::fs::create_dir_all(out)?;
    let batch = batch_from_indices(&cfg.scene, &[scene])?;
    let output = model.forward(&batch.images, Mode::Eval, SamplingMode::Eval)?;
    let graph = &output.scg.graphs[0];

    save_tensor(&out.join("a_raw.tsr"), &graph.a_raw)?;
    save_tensor(&out.join("a_norm.tsr"), &graph.a_norm)?;
    let density = graph.a_raw.data().iter().filter(|&&v| v > 1e-6).count() as f64
        / graph.a_raw.numel() as f64;
    let summary = format!(
        "n = {}\ngamma = {}\nedge_density = {}\n",
        graph.n,
        graph.gamma.item(),
        density
    );
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}
