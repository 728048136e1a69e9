//! The six subcommands. Every command validates first, writes its outputs
//! under the configured directory, and emits one structured log line per
//! major step on stdout.

use std::path::{Path, PathBuf};

use serde::Serialize;

use eelab_core::data::{render_dataset, render_table};
use eelab_core::hardness;
use eelab_core::inference;
use eelab_core::model::{Checkpoint, ModelBundle, EXIT_INDEX};
use eelab_core::numeric::{finite_diff_check, Rng, Tape};
use eelab_core::training;
use eelab_core::{Error, Result};

use crate::config::{ExperimentConfig, Overrides};

/// Checkpoint file format: the model checkpoint plus run provenance.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    config_hash: String,
    seed: u64,
    checkpoint: Checkpoint,
}

fn log_line<T: Serialize>(event: &str, payload: &T) {
    let mut value = serde_json::to_value(payload).expect("log payload serializes");
    if let Some(map) = value.as_object_mut() {
        map.insert("event".to_string(), event.into());
    }
    println!("{value}");
}

#[derive(Serialize)]
struct StartLog<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    out_dir: String,
}

fn start(command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out_dir = cfg.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    log_line(
        "start",
        &StartLog {
            command,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            out_dir: out_dir.display().to_string(),
        },
    );
    Ok(out_dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    log_line("wrote", &serde_json::json!({ "path": path.display().to_string() }));
    Ok(())
}

fn save_checkpoint(path: &Path, cfg: &ExperimentConfig, m: &ModelBundle) -> Result<()> {
    let file = CheckpointFile {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        checkpoint: m.to_checkpoint(),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| Error::Data(format!("checkpoint encode: {e}")))?;
    write_text(path, &text)
}

fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    // accept both the CLI wrapper and a bare library checkpoint
    let ck = match serde_json::from_str::<CheckpointFile>(&text) {
        Ok(file) => file.checkpoint,
        Err(_) => Checkpoint::from_json(&text)?,
    };
    ModelBundle::from_checkpoint(&ck)
}

fn float(v: f64) -> String {
    format!("{v}")
}

pub fn gen_data(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let spec = cfg.data.synthetic.clone().ok_or_else(|| {
        Error::Config("gen-data needs a synthetic data section".to_string())
    })?;
    let out_dir = start("gen-data", &cfg)?;
    let ds = eelab_core::data::gen_synthetic(&spec, cfg.seed)?;
    let path = out_dir.join("dataset.csv");
    write_text(&path, &render_dataset(&ds, &cfg.table_comments()))?;
    log_line(
        "done",
        &serde_json::json!({ "instances": ds.len(), "classes": ds.num_classes }),
    );
    Ok(())
}

#[derive(Serialize)]
struct RoundLog<'a> {
    config_hash: &'a str,
    seed: u64,
    round: usize,
    stage: &'a str,
    objective: f64,
    dev_accuracy: f64,
    mean_exit_layer: f64,
}

pub fn train(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let out_dir = start("train", &cfg)?;
    let splits = cfg.build_splits()?;
    let train_cfg = cfg.effective_train(None);
    let hash = cfg.hash();

    let mut m = ModelBundle::build(&cfg.model, &Rng::new(cfg.seed))?;
    let mut log_records: Vec<String> = Vec::new();
    let mut round_paths: Vec<(PathBuf, Checkpoint)> = Vec::new();

    let outcome = training::train_iterative_observed(
        &mut m,
        &splits.train,
        &splits.dev,
        &train_cfg,
        &mut |record, model| {
            for (stage, objective) in [
                ("policy", record.policy_objective),
                ("task", record.task_objective),
            ] {
                let line = RoundLog {
                    config_hash: &hash,
                    seed: cfg.seed,
                    round: record.round,
                    stage,
                    objective,
                    dev_accuracy: record.dev_accuracy,
                    mean_exit_layer: record.mean_exit_layer,
                };
                log_line("round", &line);
                log_records.push(serde_json::to_string(&serde_json::json!({
                    "event": "round",
                    "config_hash": hash,
                    "seed": cfg.seed,
                    "round": record.round,
                    "stage": stage,
                    "objective": objective,
                    "dev_accuracy": record.dev_accuracy,
                    "mean_exit_layer": record.mean_exit_layer,
                })).expect("log record serializes"));
            }
            round_paths.push((
                out_dir.join(format!("round_{:02}.ckpt.json", record.round)),
                model.to_checkpoint(),
            ));
            Ok(())
        },
    )?;

    for (path, ck) in &round_paths {
        let file = CheckpointFile {
            config_hash: hash.clone(),
            seed: cfg.seed,
            checkpoint: ck.clone(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| Error::Data(format!("checkpoint encode: {e}")))?;
        write_text(path, &text)?;
    }

    let best = ModelBundle::from_checkpoint(&outcome.best)?;
    save_checkpoint(&out_dir.join("best.ckpt.json"), &cfg, &best)?;
    write_text(&out_dir.join("train_log.jsonl"), &(log_records.join("\n") + "\n"))?;

    let report_json = serde_json::to_string_pretty(&serde_json::json!({
        "config_hash": hash,
        "seed": cfg.seed,
        "report": outcome.report,
    }))
    .map_err(|e| Error::Data(format!("report encode: {e}")))?;
    write_text(&out_dir.join("report.json"), &report_json)?;

    log_line(
        "done",
        &serde_json::json!({
            "best_round": outcome.report.best_round,
            "best_dev_accuracy": outcome.report.best_dev_accuracy,
            "rounds": outcome.report.rounds.len(),
        }),
    );
    Ok(())
}

/// Entropy thresholds for the baseline comparison curve.
const ENTROPY_THRESHOLDS: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0];

pub fn eval(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let ckpt_path = overrides
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join("best.ckpt.json"));
    let out_dir = start("eval", &cfg)?;
    let splits = cfg.build_splits()?;
    let m = load_checkpoint(&ckpt_path)?;

    let metrics = inference::evaluate(&m, &splits.test)?;
    let comments = cfg.table_comments();
    write_text(
        &out_dir.join("summary.csv"),
        &render_table(
            &comments,
            &["accuracy", "mean_exit_layer", "saved_layers", "n"],
            &[vec![
                float(metrics.accuracy),
                float(metrics.mean_exit_layer),
                float(metrics.saved_layers),
                metrics.n.to_string(),
            ]],
        ),
    )?;

    let records = inference::instance_records(&m, &splits.test)?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.label.to_string(),
                r.prediction.to_string(),
                r.exit_layer.to_string(),
            ]
        })
        .collect();
    write_text(
        &out_dir.join("per_instance.csv"),
        &render_table(&comments, &["id", "label", "prediction", "exit_layer"], &rows),
    )?;

    // comparison curve: learned exit, entropy baseline, full depth
    let mut baseline_rows = Vec::new();
    baseline_rows.push(vec![
        "policy".to_string(),
        float(0.5),
        float(metrics.accuracy),
        float(metrics.mean_exit_layer),
        float(metrics.saved_layers),
    ]);
    for threshold in ENTROPY_THRESHOLDS {
        let e = inference::evaluate_entropy(&m, &splits.test, threshold)?;
        baseline_rows.push(vec![
            "entropy".to_string(),
            float(threshold),
            float(e.accuracy),
            float(e.mean_exit_layer),
            float(e.saved_layers),
        ]);
    }
    let full = inference::evaluate_full_depth(&m, &splits.test)?;
    baseline_rows.push(vec![
        "full_depth".to_string(),
        float(0.0),
        float(full.accuracy),
        float(full.mean_exit_layer),
        float(full.saved_layers),
    ]);
    write_text(
        &out_dir.join("baselines.csv"),
        &render_table(
            &comments,
            &["method", "param", "accuracy", "mean_exit_layer", "saved_layers"],
            &baseline_rows,
        ),
    )?;

    log_line(
        "done",
        &serde_json::json!({
            "accuracy": metrics.accuracy,
            "mean_exit_layer": metrics.mean_exit_layer,
            "saved_layers": metrics.saved_layers,
        }),
    );
    Ok(())
}

pub fn hardness_cmd(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let out_dir = start("hardness", &cfg)?;
    let splits = cfg.build_splits()?;
    let train_cfg = cfg.effective_train(None);

    // forgetting events need the per-epoch history, so the init stage always
    // runs here (deterministic per seed); the report model is the checkpoint
    // when one is given, else that same init-stage model
    let mut init_model = ModelBundle::build(&cfg.model, &Rng::new(cfg.seed))?;
    let trace = training::train_init(&mut init_model, &splits.train, &train_cfg)?;
    let forgetting = trace.forgetting_counts();

    let report_model = match &overrides.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => init_model,
    };

    let report = hardness::hardness_report(&report_model, &splits.train, &forgetting)?;
    let comments = cfg.table_comments();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.memorized_layer.to_string(),
                float(r.final_layer_loss),
                r.forgetting_events.to_string(),
            ]
        })
        .collect();
    write_text(
        &out_dir.join("hardness_report.csv"),
        &render_table(
            &comments,
            &["id", "memorized_layer", "final_layer_loss", "forgetting_events"],
            &rows,
        ),
    )?;

    let profile = hardness::layer_profile(&report_model, &splits.train)?;
    let rows: Vec<Vec<String>> = profile
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1).to_string(), float(s.mean_loss), float(s.accuracy)])
        .collect();
    write_text(
        &out_dir.join("layer_profile.csv"),
        &render_table(&comments, &["layer", "mean_loss", "accuracy"], &rows),
    )?;

    let corr = |v: Option<f64>| v.map(float).unwrap_or_else(|| "undefined".to_string());
    write_text(
        &out_dir.join("correlations.csv"),
        &render_table(
            &comments,
            &["statistic", "value"],
            &[
                vec!["spearman_memorized_loss".to_string(), corr(report.spearman_loss)],
                vec![
                    "spearman_memorized_forgetting".to_string(),
                    corr(report.spearman_forgetting),
                ],
            ],
        ),
    )?;

    log_line(
        "done",
        &serde_json::json!({
            "spearman_loss": report.spearman_loss,
            "spearman_forgetting": report.spearman_forgetting,
            "instances": report.rows.len(),
        }),
    );
    Ok(())
}

pub fn sweep(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let out_dir = start("sweep", &cfg)?;
    let splits = cfg.build_splits()?;
    let train_cfg = cfg.effective_train(None);
    let alphas = match overrides.alpha {
        Some(alpha) => vec![alpha],
        None => cfg.sweep.alphas.clone(),
    };
    let seeds = cfg.sweep_seeds();

    let records = inference::sweep_alpha(&cfg.model, &train_cfg, &splits, &alphas, &seeds)?;
    let comments = cfg.table_comments();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                float(r.alpha),
                r.seed.to_string(),
                float(r.accuracy),
                float(r.mean_exit_layer),
                float(r.saved_layers),
                r.best_round.to_string(),
            ]
        })
        .collect();
    write_text(
        &out_dir.join("sweep.csv"),
        &render_table(
            &comments,
            &["alpha", "seed", "accuracy", "mean_exit_layer", "saved_layers", "best_round"],
            &rows,
        ),
    )?;

    let averaged = inference::average_by_alpha(&records);
    let rows: Vec<Vec<String>> = averaged
        .iter()
        .map(|(alpha, acc, saved)| vec![float(*alpha), float(*acc), float(*saved)])
        .collect();
    write_text(
        &out_dir.join("sweep_mean.csv"),
        &render_table(&comments, &["alpha", "mean_accuracy", "mean_saved_layers"], &rows),
    )?;

    log_line(
        "done",
        &serde_json::json!({ "runs": records.len(), "alphas": alphas.len(), "seeds": seeds.len() }),
    );
    Ok(())
}

const GRAD_TOLERANCE: f64 = 1e-4;

pub fn gradcheck(overrides: &Overrides) -> Result<()> {
    let cfg = overrides.resolve()?;
    let out_dir = start("gradcheck", &cfg)?;

    // small instantiation of the configured architecture: full layer stack,
    // reduced widths, 20 seeds
    let check_cfg = eelab_core::model::BackboneConfig {
        num_layers: cfg.model.num_layers.min(4),
        input_dim: 4,
        hidden_dim: 6,
        num_classes: cfg.model.num_classes.min(3),
        policy_hidden_dim: 5,
    };
    let l = check_cfg.num_layers;
    let denom = (l * (l + 1)) as f64 / 2.0;

    let mut rows = Vec::new();
    let mut worst_overall: f64 = 0.0;
    for i in 0..20u64 {
        let seed = cfg.seed.wrapping_add(i);
        let mut m = ModelBundle::build(&check_cfg, &Rng::new(seed))?;
        let mut rng = Rng::new(seed).substream("gradcheck");
        let theta = m.theta_ids();
        for &id in &theta {
            for v in m.store_mut().get_mut(id).values.iter_mut() {
                *v += rng.uniform(-0.5, 0.5);
            }
        }
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let label = (i as usize) % check_cfg.num_classes;

        let worst = finite_diff_check(&mut m, 1e-5, |m: &ModelBundle| {
            let mut tape = Tape::new();
            let states = m.tape_states(&mut tape, &x, l)?;
            let mut terms = Vec::new();
            for (t, &state) in states.iter().enumerate() {
                let logits = m.tape_classifier_logits(&mut tape, t + 1, state)?;
                let ce = tape.softmax_ce(logits, label)?;
                terms.push((ce, (t + 1) as f64 / denom));
                let plogits = m.tape_policy_logits(&mut tape, t + 1, state, false)?;
                let logp = tape.log_prob(plogits, EXIT_INDEX)?;
                terms.push((logp, 0.31));
            }
            let tail = tape.weighted_sum(&terms)?;
            Ok((tape, tail))
        })?;
        println!("seed {seed}: max relative error {worst:.3e}");
        rows.push(vec![seed.to_string(), float(worst)]);
        worst_overall = worst_overall.max(worst);
    }

    write_text(
        &out_dir.join("gradcheck.csv"),
        &render_table(&cfg.table_comments(), &["seed", "max_relative_error"], &rows),
    )?;

    println!("max relative error over 20 seeds: {worst_overall:.3e} (tolerance {GRAD_TOLERANCE:.0e})");
    if worst_overall >= GRAD_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst_overall:.3e} >= {GRAD_TOLERANCE:.0e}"
        )));
    }
    log_line("done", &serde_json::json!({ "max_relative_error": worst_overall }));
    Ok(())
}
