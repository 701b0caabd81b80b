use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use igd::denoiser::{train_denoiser, Denoiser};
use igd::detector::{Classifier, ClassifierConfig};
use igd::eval::ablation::confusion_csv;
use igd::eval::{
    evaluate_classifier, feature_distances, pca_project, permuted_label_control, projection_csv, roc_export, rows_csv,
    run_ablation_concat, run_ablation_depth, run_ablation_timesteps, run_multiclass, ScoredSample, VariantReports,
};
use igd::experiment::{Experiment, ExperimentConfig, FeatureBank};
use igd::gate::{generate_with_gate, GateStatus};
use igd::io::{read_json, write_json, write_text};
use igd::rng::{derive_seed, SeedStream};
use igd::world::{build_dataset, build_world, Dataset, Variant, World};
use igd::Exec;
use serde_json::json;

use crate::args::*;
use crate::manifest::{all_seeds, Recorder};

pub const EXIT_BLOCKED: u8 = 3;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenWorld(a) => gen_world(a),
        Command::GenData(a) => gen_data(a),
        Command::TrainDenoiser(a) => cmd_train_denoiser(a),
        Command::TrainClassifier(a) => train_classifier(a),
        Command::Gate(a) => return gate(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Project(a) => project(a),
        Command::Reference(a) => reference(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn note(msg: impl std::fmt::Display) {
    eprintln!("[igd] {msg}");
}

fn base_config(run: &RunArgs) -> Result<ExperimentConfig> {
    match &run.config {
        Some(path) => Ok(read_json(path)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn exec(run: &RunArgs) -> Exec {
    if run.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn apply_shape(cfg: &mut ExperimentConfig, s: &WorldShape) {
    let w = &mut cfg.world;
    if let Some(n) = s.concepts_clean {
        w.n_clean = n as usize;
    }
    if let Some(n) = s.concepts_nsfw {
        w.n_nsfw = n as usize;
    }
    if let Some(d) = s.dim {
        w.dim = d as usize;
    }
    if let Some(d) = s.embed_dim {
        w.embed_dim = d as usize;
    }
}

fn apply_classifier(cfg: &mut ClassifierConfig, f: &ClassifierFlags) -> Result<()> {
    if let Some(e) = f.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = f.lr {
        ensure!(lr > 0.0 && lr.is_finite(), "--lr must be positive, got {lr}");
        cfg.adam.lr = lr;
    }
    if let Some(l) = f.layers {
        cfg.hidden = ClassifierConfig::hidden_for_depth(l as usize)?;
    }
    if let Some(t) = f.threshold {
        ensure!((0.0..=1.0).contains(&t), "--threshold must be in [0, 1], got {t}");
        cfg.threshold = t;
    }
    Ok(())
}

fn classifier_flags(c: &ClassifierConfig) -> serde_json::Value {
    json!({
        "epochs": c.epochs,
        "lr": c.adam.lr,
        "layers": c.hidden.len() + 1,
        "hidden": c.hidden,
        "batch_size": c.batch_size,
        "threshold": c.threshold,
        "adam": c.adam,
    })
}

fn load_world(path: &Path) -> Result<World> {
    let world: World = read_json(path)?;
    world
        .validate()
        .with_context(|| format!("invalid world {}", path.display()))?;
    Ok(world)
}

/// Experiment over existing world and denoiser files. Commands that read
/// these artifacts never need the denoiser's training pairs.
fn load_experiment(cfg: ExperimentConfig, a: &Artifacts) -> Result<Experiment> {
    let world = load_world(&a.world)?;
    let denoiser = Denoiser::load(&a.denoiser)?;
    let empty = Dataset {
        dim: world.dim(),
        embed_dim: world.embed_dim(),
        pairs: Vec::new(),
    };
    Ok(Experiment::from_parts(cfg, world, empty, denoiser)?)
}

fn loss_csv(index: &str, losses: &[f64]) -> String {
    let mut out = format!("{index},loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("write to string");
    }
    out
}

fn save_text(rec: &mut Recorder, path: PathBuf, text: &str) -> Result<()> {
    write_text(&path, text)?;
    rec.output(&path);
    Ok(())
}

fn save_json<T: serde::Serialize>(rec: &mut Recorder, path: PathBuf, value: &T) -> Result<()> {
    write_json(&path, value)?;
    rec.output(&path);
    Ok(())
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let mut rec = Recorder::start("gen-world");
    let mut cfg = base_config(&a.run)?;
    apply_shape(&mut cfg, &a.shape);
    if let Some(s) = a.run.seed {
        cfg.world_seed = s;
    }
    let world = build_world(&cfg.world, cfg.world_seed)?;
    save_json(&mut rec, a.out.join("world.json"), &world)?;
    note(format!(
        "world: {} concepts, D={}, d_e={}",
        world.concepts.len(),
        world.dim(),
        world.embed_dim()
    ));
    rec.finish(
        &a.out,
        json!({ "world": cfg.world }),
        [("world", cfg.world_seed)].into(),
    )?;
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut rec = Recorder::start("gen-data");
    let mut cfg = base_config(&a.run)?;
    if let Some(s) = a.run.seed {
        cfg.dataset_seed = s;
    }
    if let Some(n) = a.per_variant {
        ensure!(n > 0, "--per-variant must be positive");
        cfg.train_per_variant = n;
    }
    let world = load_world(&a.world)?;
    let ds = build_dataset(&world, cfg.train_per_variant, cfg.dataset_seed)?;
    let path = a.out.join("dataset.ndjson");
    ds.save(&path)?;
    rec.output(&path);
    note(format!("dataset: {} pairs", ds.len()));
    rec.finish(
        &a.out,
        json!({ "world": a.world, "per_variant": cfg.train_per_variant }),
        [("dataset", cfg.dataset_seed)].into(),
    )?;
    Ok(())
}

fn cmd_train_denoiser(a: TrainDenoiserArgs) -> Result<()> {
    let mut rec = Recorder::start("train-denoiser");
    let mut cfg = base_config(&a.run)?;
    if let Some(s) = a.run.seed {
        cfg.denoiser_seed = s;
    }
    if let Some(n) = a.epochs {
        cfg.denoiser.train_steps = n;
    }
    if let Some(lr) = a.lr {
        ensure!(lr > 0.0 && lr.is_finite(), "--lr must be positive, got {lr}");
        cfg.denoiser.adam.lr = lr;
    }
    let ds = Dataset::load(&a.dataset)?;
    note(format!(
        "training denoiser on {} pairs for {} steps",
        ds.len(),
        cfg.denoiser.train_steps
    ));
    let (dn, losses) = train_denoiser(&ds, cfg.schedule, &cfg.denoiser, cfg.denoiser_seed, exec(&a.run))?;
    let path = a.out.join("denoiser.json");
    dn.save(&path)?;
    rec.output(&path);
    save_text(&mut rec, a.out.join("denoiser_loss.csv"), &loss_csv("step", &losses))?;
    if let Some(last) = losses.last() {
        note(format!("final batch loss {last:.5}"));
    }
    rec.finish(
        &a.out,
        json!({
            "dataset": a.dataset,
            "epochs": cfg.denoiser.train_steps,
            "lr": cfg.denoiser.adam.lr,
            "denoiser": cfg.denoiser,
            "schedule": cfg.schedule,
        }),
        [("denoiser", cfg.denoiser_seed)].into(),
    )?;
    Ok(())
}

fn train_classifier(a: TrainClassifierArgs) -> Result<()> {
    let mut rec = Recorder::start("train-classifier");
    let mut cfg = base_config(&a.run)?;
    apply_classifier(&mut cfg.classifier, &a.classifier)?;
    if let Some(s) = a.run.seed {
        cfg.classifier_seed = s;
    }
    if let Some(steps) = &a.gate_step {
        cfg.gate_steps = steps.clone();
    }
    let exp = load_experiment(cfg, &a.artifacts)?;
    let ex = exec(&a.run);
    let bank = exp.record(exp.classifier_prompts()?, max_step(&exp.config.gate_steps), ex)?;
    let (cls, summary) = fit_and_save(&exp, &bank, &a.out, &mut rec, ex)?;
    note(format!(
        "classifier on steps {:?}: train accuracy {:.4}",
        cls.feature_steps(),
        summary
    ));
    let c = &exp.config;
    let mut flags = classifier_flags(&c.classifier);
    flags["gate_steps"] = json!(c.gate_steps);
    flags["train_prompts"] = json!(bank.len());
    rec.finish(
        &a.out,
        flags,
        [
            ("classifier", c.classifier_seed),
            ("classifier_prompts", c.classifier_prompt_seed),
            ("feature", c.feature_seed),
        ]
        .into(),
    )?;
    Ok(())
}

fn max_step(steps: &[usize]) -> usize {
    steps.iter().copied().max().unwrap_or(0)
}

fn fit_and_save(
    exp: &Experiment,
    bank: &FeatureBank,
    out: &Path,
    rec: &mut Recorder,
    ex: Exec,
) -> Result<(Classifier, f64)> {
    let (cls, summary) = exp.train_gate_classifier(bank, ex)?;
    let path = out.join("classifier.json");
    cls.save(&path)?;
    rec.output(&path);
    save_text(
        rec,
        out.join("classifier_loss.csv"),
        &loss_csv("epoch", &summary.loss_trace),
    )?;
    Ok((cls, summary.train_accuracy))
}

fn gate(a: GateArgs) -> Result<ExitCode> {
    let mut rec = Recorder::start("gate");
    let mut cfg = base_config(&a.run)?;
    let mut cls = Classifier::load(&a.classifier)?;
    if let Some(t) = a.threshold {
        ensure!((0.0..=1.0).contains(&t), "--threshold must be in [0, 1], got {t}");
        cls = cls.with_threshold(t)?;
    }
    cfg.classifier.threshold = cls.threshold();
    cfg.gate_steps = match &a.gate_step {
        Some(steps) if steps.as_slice() != cls.feature_steps() => bail!(
            "--gate-step {steps:?} does not match the classifier's feature steps {:?}",
            cls.feature_steps()
        ),
        _ => cls.feature_steps().to_vec(),
    };
    let seed = a.run.seed.unwrap_or(cfg.feature_seed);
    let exp = load_experiment(cfg, &a.artifacts)?;
    let embedding = match (&a.prompt_embedding, a.concept, a.variant) {
        (Some(path), _, _) => read_json::<Vec<f64>>(path)?,
        (None, Some(c), Some(v)) => {
            let mut rng = SeedStream::new(derive_seed(seed, 0));
            exp.world.sample_prompt(c, v.into(), 0, &mut rng)?.embedding
        }
        _ => bail!("pass --prompt-embedding FILE or --concept ID --variant VARIANT"),
    };
    ensure!(
        embedding.len() == exp.world.embed_dim() && embedding.iter().all(|v| v.is_finite()),
        "prompt embedding must hold {} finite numbers, got {}",
        exp.world.embed_dim(),
        embedding.len()
    );
    let result = generate_with_gate(
        &exp.denoiser,
        &cls,
        &exp.schedule,
        &exp.map,
        &exp.gate_config(),
        &embedding,
        seed,
    )?;
    print_stdout(&serde_json::to_string_pretty(&result)?)?;
    if let Some(out) = &a.out {
        save_json(&mut rec, out.join("gate_result.json"), &result)?;
        rec.finish(
            out,
            json!({
                "gate_steps": exp.config.gate_steps,
                "threshold": exp.config.classifier.threshold,
                "inference_steps": exp.num_steps(),
                "prompt_embedding": a.prompt_embedding,
                "concept": a.concept,
                "variant": a.variant,
            }),
            [("generation", seed)].into(),
        )?;
    }
    Ok(match result.status {
        GateStatus::Completed => ExitCode::SUCCESS,
        GateStatus::Blocked => ExitCode::from(EXIT_BLOCKED),
    })
}

/// A closed pipe (`igd gate ... | head`) is not an error: the exit status
/// still reports the verdict.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn scores_csv(bank: &FeatureBank, samples: &[ScoredSample]) -> String {
    let mut out = String::from("prompt_id,concept_id,variant,label,score\n");
    for (p, s) in bank.prompts.iter().zip(samples) {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.prompt_id, p.concept_id, p.variant, s.label, s.score
        )
        .expect("write to string");
    }
    out
}

/// Scores the held-out bank and writes the report, per-prompt scores and ROC curves.
fn write_eval(
    exp: &Experiment,
    cls: &Classifier,
    bank: &FeatureBank,
    out: &Path,
    rec: &mut Recorder,
) -> Result<VariantReports> {
    let (samples, reports) = evaluate_classifier(cls, bank)?;
    let vectors = bank.vectors(cls.feature_steps())?;
    let distances = feature_distances(&bank.prompts, &vectors)?;
    save_json(
        rec,
        out.join("eval_report.json"),
        &json!({
            "feature_steps": cls.feature_steps(),
            "threshold": cls.threshold(),
            "naive": reports.naive,
            "adversarial": reports.adversarial,
            "feature_distances": distances,
            "inference_steps": exp.num_steps(),
        }),
    )?;
    save_text(rec, out.join("scores.csv"), &scores_csv(bank, &samples))?;
    for (name, variant) in [("naive", Variant::Naive), ("adversarial", Variant::Adversarial)] {
        let subset: Vec<ScoredSample> = samples
            .iter()
            .filter(|s| s.variant == Variant::Clean || s.variant == variant)
            .cloned()
            .collect();
        let path = out.join(format!("roc_{name}.csv"));
        roc_export(&subset, &path)?;
        rec.output(&path);
    }
    note(format!(
        "naive: acc {:.4} auroc {:.4} fpr@tpr95 {:.4} | adversarial: acc {:.4} auroc {:.4} fpr@tpr95 {:.4}",
        reports.naive.accuracy,
        reports.naive.auroc,
        reports.naive.fpr_at_tpr95,
        reports.adversarial.accuracy,
        reports.adversarial.auroc,
        reports.adversarial.fpr_at_tpr95
    ));
    Ok(reports)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut rec = Recorder::start("eval");
    let mut cfg = base_config(&a.run)?;
    if let Some(s) = a.run.seed {
        cfg.eval_seed = s;
    }
    let mut cls = Classifier::load(&a.classifier)?;
    if let Some(t) = a.threshold {
        ensure!((0.0..=1.0).contains(&t), "--threshold must be in [0, 1], got {t}");
        cls = cls.with_threshold(t)?;
    }
    cfg.gate_steps = cls.feature_steps().to_vec();
    let exp = load_experiment(cfg, &a.artifacts)?;
    let bank = exp.record(exp.eval_prompts()?, max_step(cls.feature_steps()), exec(&a.run))?;
    write_eval(&exp, &cls, &bank, &a.out, &mut rec)?;
    let c = &exp.config;
    rec.finish(
        &a.out,
        json!({
            "classifier": a.classifier,
            "threshold": cls.threshold(),
            "feature_steps": cls.feature_steps(),
            "eval_per_variant": c.eval_per_variant,
        }),
        [("eval", c.eval_seed), ("feature", c.feature_seed)].into(),
    )?;
    Ok(())
}

fn parse_set(s: &str, num_steps: usize) -> Result<Vec<usize>> {
    if s.trim() == "all" {
        return Ok((1..=num_steps).collect());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad step {t:?} in --set {s:?}"))
        })
        .collect()
}

struct Sweep {
    kind: AblationKind,
    steps: Option<Vec<usize>>,
    sets: Vec<String>,
    layer_counts: Option<Vec<usize>>,
}

impl Sweep {
    fn all(kind: AblationKind) -> Self {
        Self {
            kind,
            steps: None,
            sets: Vec::new(),
            layer_counts: None,
        }
    }

    /// Highest inference step the sweep reads.
    fn max_step(&self, exp: &Experiment) -> Result<usize> {
        Ok(match self.kind {
            AblationKind::Timesteps => max_step(&self.timesteps(exp)),
            AblationKind::Concat => self.concat_sets(exp)?.iter().map(|s| max_step(s)).max().unwrap_or(0),
            AblationKind::Depth | AblationKind::Multiclass => max_step(&self.feature_steps(exp)),
        })
    }

    fn timesteps(&self, exp: &Experiment) -> Vec<usize> {
        self.steps
            .clone()
            .unwrap_or_else(|| (5..=exp.num_steps()).step_by(5).collect())
    }

    fn feature_steps(&self, exp: &Experiment) -> Vec<usize> {
        self.steps.clone().unwrap_or_else(|| exp.config.gate_steps.clone())
    }

    fn concat_sets(&self, exp: &Experiment) -> Result<Vec<Vec<usize>>> {
        if self.sets.is_empty() {
            return Ok(vec![vec![5], vec![5, 15, 25], (1..=exp.num_steps()).collect()]);
        }
        self.sets.iter().map(|s| parse_set(s, exp.num_steps())).collect()
    }

    fn run(
        &self,
        exp: &Experiment,
        bank: &igd::experiment::Banks,
        out: &Path,
        rec: &mut Recorder,
        ex: Exec,
    ) -> Result<()> {
        let ctx = exp.ablation_context(bank, ex);
        let name = match self.kind {
            AblationKind::Timesteps => "timesteps",
            AblationKind::Concat => "concat",
            AblationKind::Depth => "depth",
            AblationKind::Multiclass => "multiclass",
        };
        note(format!("ablation: {name}"));
        let rows = match self.kind {
            AblationKind::Timesteps => {
                let steps = self.timesteps(exp);
                let control = permuted_label_control(&ctx, steps[0])?;
                note(format!(
                    "  {:<20} auroc {:.4} acc {:.4}",
                    control.config, control.auroc, control.accuracy
                ));
                save_text(rec, out.join("ablation_control.csv"), &rows_csv(&[control]))?;
                run_ablation_timesteps(&ctx, &steps)?
            }
            AblationKind::Concat => run_ablation_concat(&ctx, &self.concat_sets(exp)?)?,
            AblationKind::Depth => {
                let counts = self.layer_counts.clone().unwrap_or_else(|| vec![3, 5, 10]);
                run_ablation_depth(&ctx, &counts, &self.feature_steps(exp))?
            }
            AblationKind::Multiclass => {
                let rep = run_multiclass(&ctx, &self.feature_steps(exp), exp.class_names(), |p| {
                    exp.concept_class(p)
                })?;
                save_json(rec, out.join("multiclass.json"), &rep)?;
                save_text(rec, out.join("multiclass_confusion.csv"), &confusion_csv(&rep))?;
                note(format!(
                    "{}-way accuracy {:.4} (chance {:.4})",
                    rep.n_classes, rep.accuracy, rep.chance
                ));
                return Ok(());
            }
        };
        for r in &rows {
            note(format!("  {:<20} auroc {:.4} acc {:.4}", r.config, r.auroc, r.accuracy));
        }
        save_text(rec, out.join(format!("ablation_{name}.csv")), &rows_csv(&rows))
    }
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut rec = Recorder::start("ablate");
    let mut cfg = base_config(&a.run)?;
    apply_classifier(&mut cfg.classifier, &a.classifier)?;
    if let Some(s) = a.run.seed {
        cfg.classifier_seed = s;
    }
    let sweep = Sweep {
        kind: a.kind,
        steps: a.steps.clone(),
        sets: a.sets.clone(),
        layer_counts: a.layer_counts.clone(),
    };
    let exp = load_experiment(cfg, &a.artifacts)?;
    let ex = exec(&a.run);
    let banks = exp.banks(sweep.max_step(&exp)?, ex)?;
    sweep.run(&exp, &banks, &a.out, &mut rec, ex)?;
    let mut flags = classifier_flags(&exp.config.classifier);
    flags["kind"] = json!(a.kind);
    flags["steps"] = json!(a.steps);
    flags["sets"] = json!(a.sets);
    flags["layer_counts"] = json!(a.layer_counts);
    rec.finish(&a.out, flags, all_seeds(&exp.config))?;
    Ok(())
}

fn write_projections(exp: &Experiment, bank: &FeatureBank, out: &Path, rec: &mut Recorder) -> Result<()> {
    let steps = &exp.config.gate_steps;
    let noise = pca_project(&bank.vectors(steps)?, 2)?;
    let embeds: Vec<Vec<f64>> = bank.prompts.iter().map(|p| p.embedding.clone()).collect();
    let emb = pca_project(&embeds, 2)?;
    save_text(
        rec,
        out.join("projection_noise.csv"),
        &projection_csv(&noise.points, &bank.prompts)?,
    )?;
    save_text(
        rec,
        out.join("projection_embedding.csv"),
        &projection_csv(&emb.points, &bank.prompts)?,
    )?;
    save_json(
        rec,
        out.join("projection.json"),
        &json!({
            "feature_steps": steps,
            "noise_explained_ratio": noise.explained_ratio,
            "embedding_explained_ratio": emb.explained_ratio,
            "noise_distances": feature_distances(&bank.prompts, &bank.vectors(steps)?)?,
            "embedding_distances": feature_distances(&bank.prompts, &embeds)?,
        }),
    )
}

fn project(a: ProjectArgs) -> Result<()> {
    let mut rec = Recorder::start("project");
    let mut cfg = base_config(&a.run)?;
    if let Some(s) = a.run.seed {
        cfg.eval_seed = s;
    }
    if let Some(steps) = &a.gate_step {
        cfg.gate_steps = steps.clone();
    }
    let exp = load_experiment(cfg, &a.artifacts)?;
    let bank = exp.record(exp.eval_prompts()?, max_step(&exp.config.gate_steps), exec(&a.run))?;
    write_projections(&exp, &bank, &a.out, &mut rec)?;
    let c = &exp.config;
    rec.finish(
        &a.out,
        json!({ "gate_steps": c.gate_steps, "eval_per_variant": c.eval_per_variant }),
        [("eval", c.eval_seed), ("feature", c.feature_seed)].into(),
    )?;
    Ok(())
}

fn reference(a: ReferenceArgs) -> Result<()> {
    let mut rec = Recorder::start("reference");
    let mut cfg = base_config(&a.run)?;
    apply_shape(&mut cfg, &a.shape);
    apply_classifier(&mut cfg.classifier, &a.classifier)?;
    if let Some(steps) = &a.gate_step {
        cfg.gate_steps = steps.clone();
    }
    if let Some(s) = a.run.seed {
        cfg.world_seed = derive_seed(s, 0);
        cfg.dataset_seed = derive_seed(s, 1);
        cfg.eval_seed = derive_seed(s, 2);
        cfg.denoiser_seed = derive_seed(s, 3);
        cfg.classifier_seed = derive_seed(s, 4);
        cfg.feature_seed = derive_seed(s, 5);
        cfg.classifier_prompt_seed = derive_seed(s, 6);
    }
    let ex = exec(&a.run);
    let out = &a.out;
    note("building world and dataset, training denoiser");
    let exp = Experiment::prepare(cfg, ex)?;
    save_json(&mut rec, out.join("world.json"), &exp.world)?;
    let ds_path = out.join("dataset.ndjson");
    exp.dataset.save(&ds_path)?;
    rec.output(&ds_path);
    let dn_path = out.join("denoiser.json");
    exp.denoiser.save(&dn_path)?;
    rec.output(&dn_path);
    save_text(
        &mut rec,
        out.join("denoiser_loss.csv"),
        &loss_csv("step", &exp.denoiser_loss),
    )?;

    let sweeps: Vec<Sweep> = if a.no_ablations {
        Vec::new()
    } else {
        [
            AblationKind::Timesteps,
            AblationKind::Concat,
            AblationKind::Depth,
            AblationKind::Multiclass,
        ]
        .into_iter()
        .map(Sweep::all)
        .collect()
    };
    let mut depth = max_step(&exp.config.gate_steps);
    for s in &sweeps {
        depth = depth.max(s.max_step(&exp)?);
    }
    note(format!("recording trajectories to step {depth}"));
    let banks = exp.banks(depth, ex)?;
    let (cls, train_acc) = fit_and_save(&exp, &banks.train, out, &mut rec, ex)?;
    note(format!("classifier train accuracy {train_acc:.4}"));
    let reports = write_eval(&exp, &cls, &banks.eval, out, &mut rec)?;
    let baseline = exp.embedding_baseline(&banks.eval.prompts, ex)?;
    save_json(&mut rec, out.join("embedding_baseline.json"), &baseline)?;
    note(format!(
        "embedding baseline: adversarial auroc {:.4}",
        baseline.adversarial.auroc
    ));
    write_projections(&exp, &banks.eval, out, &mut rec)?;
    for s in &sweeps {
        s.run(&exp, &banks, out, &mut rec, ex)?;
    }
    save_json(
        &mut rec,
        out.join("summary.json"),
        &json!({
            "classifier_train_accuracy": train_acc,
            "naive": reports.naive,
            "adversarial": reports.adversarial,
            "embedding_baseline": baseline,
            "denoiser_final_loss": exp.denoiser_loss.last(),
        }),
    )?;
    let c = &exp.config;
    let mut flags = classifier_flags(&c.classifier);
    flags["gate_steps"] = json!(c.gate_steps);
    flags["experiment"] = serde_json::to_value(c)?;
    flags["ablations"] = json!(!a.no_ablations);
    rec.finish(out, flags, all_seeds(c))?;
    Ok(())
}
