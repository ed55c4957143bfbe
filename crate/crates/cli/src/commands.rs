use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cloudformer::eval::{aggregate, fit_predict, prepare_split, run_matrix, score_cell, EvalConfig, EvalReport, Method, REPORT_VERSION};
use cloudformer::model::{Checkpoint, CloudFormer, CloudFormerConfig, Variant};
use cloudformer::baselines::LstmConfig;
use cloudformer::par::map_range;
use cloudformer::preprocess::{fit_norm, make_split, normalize_runs, SplitSpec};
use cloudformer::synthgen::{gen_dataset, GenConfig, GroundTruthLabeler};
use cloudformer::traceio::{read_dataset, validate_dataset, write_dataset, MetricSchema, TraceDataset};
use cloudformer::train::{holdout, predict_runs, train_loop, TrainConfig};
use cloudformer::{Parallelism, SeedStream};
use log::warn;

use crate::args::*;
use crate::manifest::{manifest_path, Manifest};

const PAR: Parallelism = Parallelism::Rayon;

/// What a command produced, for its manifest.
pub struct Outcome {
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub schema_hash: Option<String>,
    /// Where the manifest goes, or `None` for commands without artifacts.
    pub manifest: Option<std::path::PathBuf>,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load(data: &Path) -> Result<TraceDataset> {
    read_dataset(data, PAR).with_context(|| format!("loading dataset {}", data.display()))
}

fn load_split(ds: &TraceDataset, file: Option<&Path>, seed: u64) -> Result<SplitSpec> {
    let split = match file {
        Some(p) => SplitSpec::load(p).with_context(|| format!("loading split {}", p.display()))?,
        None => make_split(ds, seed)?,
    };
    split.check(ds)?;
    Ok(split)
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

pub fn model_config(m: &ModelArgs, width: usize, variant: Variant) -> CloudFormerConfig {
    let mut c = match m.preset {
        Preset::Desk => CloudFormerConfig::desk(width),
        Preset::Large => CloudFormerConfig::large(width),
        Preset::Tiny => CloudFormerConfig::tiny(width),
    };
    if let Some(d) = m.dropout {
        c.dropout = d;
    }
    c.identity_embeddings = !m.no_identity;
    c.with_variant(variant)
}

pub fn train_config(m: &ModelArgs) -> TrainConfig {
    TrainConfig {
        epochs: m.epochs,
        batch_size: m.batch,
        peak_lr: m.lr,
        floor_lr: m.floor_lr,
        warmup_frac: m.warmup_frac,
        patience: m.patience,
        clip_norm: (m.clip > 0.0).then_some(m.clip),
        seed: 0,
        parallelism: PAR,
    }
}

fn eval_config(m: &ModelArgs, b: &BaselineArgs, width: usize, seeds: Vec<u64>, methods: Vec<Method>) -> EvalConfig {
    let train = train_config(m);
    EvalConfig {
        seeds,
        methods,
        cf: model_config(m, width, Variant::Full),
        cf_train: train.clone(),
        lstm: LstmConfig { width, hidden: b.lstm_hidden },
        lstm_train: train,
        val_frac: m.val_frac,
        tune_budget: b.budget,
        tune_folds: b.folds,
        parallelism: PAR,
    }
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    if a.out.join("runs").exists() {
        bail!("{} already holds a dataset", a.out.display());
    }
    let schema = match a.schema {
        SchemaChoice::Desk => MetricSchema::desk(),
        SchemaChoice::Full => MetricSchema::full(),
    };
    let cfg = GenConfig {
        n_apps: a.apps,
        runs_per_app: a.runs_per_app,
        static_only_fraction: a.static_only_frac,
        t_min: a.t_min,
        t_max: a.t_max,
        seed: a.seed,
        labeler: GroundTruthLabeler {
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
        },
        noise_sigma: a.noise,
        ..GenConfig::default()
    };
    let ds = gen_dataset(&cfg, &schema, PAR)?;
    write_dataset(&ds, &a.out)?;
    println!("wrote {} runs of {} apps to {}", ds.runs.len(), ds.apps.len(), a.out.display());
    Ok(Outcome {
        seeds: vec![a.seed],
        inputs: vec![],
        outputs: vec![path_str(&a.out)],
        schema_hash: Some(schema.hash()),
        manifest: Some(manifest_path(&a.out, true)),
    })
}

/// Prints every violation; fails when there is at least one.
pub fn validate(a: &ValidateArgs) -> Result<Outcome> {
    let violations = validate_dataset(&a.data, PAR);
    for v in &violations {
        println!("{v}");
    }
    println!("{} violations", violations.len());
    if !violations.is_empty() {
        bail!("dataset {} has {} violations", a.data.display(), violations.len());
    }
    Ok(Outcome {
        seeds: vec![],
        inputs: vec![path_str(&a.data)],
        outputs: vec![],
        schema_hash: None,
        manifest: None,
    })
}

pub fn split(a: &SplitArgs) -> Result<Outcome> {
    let ds = load(&a.data)?;
    let s = make_split(&ds, a.seed)?;
    ensure_parent(&a.out)?;
    s.save(&a.out)?;
    println!("train: {}\ntest:  {}", s.train_apps.join(", "), s.test_apps.join(", "));
    Ok(Outcome {
        seeds: vec![a.seed],
        inputs: vec![path_str(&a.data)],
        outputs: vec![path_str(&a.out)],
        schema_hash: Some(ds.schema.hash()),
        manifest: Some(manifest_path(&a.out, false)),
    })
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let ds = load(&a.data)?;
    let split = load_split(&ds, a.split.as_deref(), a.seed)?;
    let variant = match a.variant {
        VariantChoice::Full => Variant::Full,
        VariantChoice::Temporal => Variant::TemporalOnly,
        VariantChoice::System => Variant::SystemOnly,
    };
    let cfg = model_config(&a.model, ds.schema.width(), variant);
    let train_runs = split.train_runs(&ds);
    let stats = fit_norm(&train_runs, PAR)?;
    let train = normalize_runs(&train_runs, &stats, PAR)?;
    let test = normalize_runs(&split.test_runs(&ds), &stats, PAR)?;
    let root = SeedStream::root(a.seed);
    let mut model = CloudFormer::new(cfg.clone(), root.named("init"))?;
    let (tr, va) = holdout(train, a.model.val_frac, root.named("holdout"));
    let tc = TrainConfig {
        seed: root.named("train").seed(),
        ..train_config(&a.model)
    };
    if tc.epochs == 0 {
        warn!("--epochs 0: saving the initialized weights");
        eprintln!("warning: --epochs 0, the checkpoint holds untrained weights");
    }
    let log = train_loop(&mut model, &tr, &va, &tc)?;
    ensure_parent(&a.out)?;
    Checkpoint::new("cloudformer", cfg, &ds.schema.hash(), stats, &model.store).save(&a.out)?;
    let mut outputs = vec![path_str(&a.out)];
    if let Some(p) = &a.log {
        ensure_parent(p)?;
        fs::write(p, serde_json::to_string_pretty(&log)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        outputs.push(path_str(p));
    }
    if !test.is_empty() {
        let pred = predict_runs(&model, &test, tc.batch_size, PAR)?;
        let cell = score_cell(split.seed, Method::CfFull, &test, &pred, vec![])?;
        println!("test MAE {:.3}  MSE {:.3}  ({} runs)", cell.pooled.mae, cell.pooled.mse, cell.pooled.n);
    }
    println!("{} epochs, {} steps; checkpoint {}", log.epochs.len(), log.steps, a.out.display());
    Ok(Outcome {
        seeds: vec![a.seed],
        inputs: vec![path_str(&a.data)],
        outputs,
        schema_hash: Some(ds.schema.hash()),
        manifest: Some(manifest_path(&a.out, false)),
    })
}

pub fn baselines(a: &BaselinesArgs) -> Result<Outcome> {
    let methods = Method::parse_list(&a.methods)?;
    let ds = load(&a.data)?;
    let split = load_split(&ds, a.split.as_deref(), a.seed)?;
    let cfg = eval_config(&a.model, &a.baseline, ds.schema.width(), vec![split.seed], methods.clone());
    let (train, test) = prepare_split(&ds, &split, PAR)?;
    let cells = map_range(PAR, methods.len(), |i| {
        let m = methods[i];
        let stream = SeedStream::root(split.seed).named("eval").named(m.key());
        let (raw, notes) = fit_predict(m, &train, &test, &cfg, stream)?;
        score_cell(split.seed, m, &test, &raw, notes)
    })
    .into_iter()
    .collect::<cloudformer::Result<Vec<_>>>()?;
    let report = EvalReport {
        version: REPORT_VERSION,
        schema_hash: ds.schema.hash(),
        aggregates: aggregate(&cells, &methods)?,
        config: cfg,
        splits: vec![split.clone()],
        cells,
    };
    ensure_parent(&a.out)?;
    fs::write(&a.out, report.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", report.table_csv());
    Ok(Outcome {
        seeds: vec![split.seed],
        inputs: vec![path_str(&a.data)],
        outputs: vec![path_str(&a.out)],
        schema_hash: Some(ds.schema.hash()),
        manifest: Some(manifest_path(&a.out, false)),
    })
}

pub fn matrix(a: &MatrixArgs, default_methods: &[Method]) -> Result<Outcome> {
    let methods = match &a.methods {
        Some(s) => Method::parse_list(s)?,
        None => default_methods.to_vec(),
    };
    let ds = load(&a.data)?;
    let cfg = eval_config(&a.model, &a.baseline, ds.schema.width(), a.seeds.0.clone(), methods);
    let report = run_matrix(&ds, &cfg)?;
    let files = report.emit(&a.out)?;
    print!("{}", report.markdown());
    Ok(Outcome {
        seeds: a.seeds.0.clone(),
        inputs: vec![path_str(&a.data)],
        outputs: files.iter().map(|f| path_str(&a.out.join(f))).collect(),
        schema_hash: Some(ds.schema.hash()),
        manifest: Some(manifest_path(&a.out, true)),
    })
}

pub fn report(a: &ReportArgs) -> Result<Outcome> {
    let r = EvalReport::load(&a.input)?;
    let files = r.emit(&a.out)?;
    print!("{}", r.markdown());
    Ok(Outcome {
        seeds: r.config.seeds.clone(),
        inputs: vec![path_str(&a.input)],
        outputs: files.iter().map(|f| path_str(&a.out.join(f))).collect(),
        schema_hash: Some(r.schema_hash.clone()),
        manifest: Some(manifest_path(&a.out, true)),
    })
}

/// Runs a command and, when it produced artifacts, records its manifest.
pub fn execute(cmd: &Command, argv: &[String]) -> Result<()> {
    if let Command::Rerun(r) = cmd {
        let m = Manifest::read(&r.manifest)?;
        let args = m.argv_with_out(r.out.as_deref());
        let mut full = vec!["cloudformer".to_string()];
        full.extend(args.iter().cloned());
        let cli = <Cli as clap::Parser>::try_parse_from(&full).with_context(|| format!("manifest {} has invalid arguments", r.manifest.display()))?;
        if matches!(cli.command, Command::Rerun(_)) {
            bail!("a manifest cannot record a rerun");
        }
        return execute(&cli.command, &args);
    }
    let started = Instant::now();
    let outcome = match cmd {
        Command::Synth(a) => synth(a)?,
        Command::Validate(a) => validate(a)?,
        Command::Split(a) => split(a)?,
        Command::Train(a) => train(a)?,
        Command::Baselines(a) => baselines(a)?,
        Command::Ablate(a) => matrix(a, &Method::ABLATION)?,
        Command::Eval(a) => matrix(a, &Method::COMPARISON)?,
        Command::Report(a) => report(a)?,
        Command::Rerun(_) => unreachable!("handled above"),
    };
    if let Some(path) = &outcome.manifest {
        let m = Manifest {
            tool: "cloudformer".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: cmd.name().into(),
            argv: argv.to_vec(),
            config: serde_json::to_value(cmd)?,
            seeds: outcome.seeds,
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            schema_hash: outcome.schema_hash,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        m.write(path)?;
    }
    Ok(())
}
