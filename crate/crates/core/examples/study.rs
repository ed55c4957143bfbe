//! Runs the synthetic comparison and ablation study and prints the tables.

use cloudformer::eval::{run_matrix, EvalConfig, Method};
use cloudformer::synthgen::{gen_dataset, GenConfig};
use cloudformer::traceio::MetricSchema;
use cloudformer::Parallelism;

fn main() -> cloudformer::Result<()> {
    let schema = MetricSchema::desk();
    let ds = gen_dataset(&GenConfig::default(), &schema, Parallelism::Rayon)?;
    let mut cfg = EvalConfig::desk(schema.width());
    cfg.methods = std::env::args()
        .nth(1)
        .map(|s| Method::parse_list(&s))
        .transpose()?
        .unwrap_or_else(|| Method::ALL.to_vec());
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    if let Some(v) = env("EPOCHS") { cfg.cf_train.epochs = v as usize; }
    if let Some(v) = env("LR") { cfg.cf_train.peak_lr = v; }
    if let Some(v) = env("BATCH") { cfg.cf_train.batch_size = v as usize; }
    if let Some(v) = env("PATIENCE") { cfg.cf_train.patience = v as usize; }
    if let Some(v) = env("DROPOUT") { cfg.cf.dropout = v; }
    if let Some(v) = env("D") { cfg.cf.d_temporal = v as usize; cfg.cf.d_system = v as usize; }
    if let Some(v) = env("HH") { cfg.cf.head_hidden = v as usize; }
    if let Some(v) = env("SEEDS") { cfg.seeds = (0..v as u64).collect(); }
    let t = std::time::Instant::now();
    let report = run_matrix(&ds, &cfg)?;
    print!("{}", report.markdown());
    for c in &report.cells {
        if !c.notes.is_empty() {
            println!("seed {} {}: {}", c.seed, c.method.key(), c.notes.join("; "));
        }
    }
    println!("elapsed {:?}", t.elapsed());
    Ok(())
}
