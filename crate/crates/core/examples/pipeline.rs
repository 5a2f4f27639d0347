//! The file-based recipes behind the command line: a JSON config overriding
//! a few defaults, then labelling, training, evaluation and a latency bench,
//! each leaving its artifacts and the resolved config in a scratch directory.

use mpc_imitation::config::ExperimentConfig;
use mpc_imitation::experiment::{bench, eval, gen_data, train_sl};
use mpc_imitation::features::FeatureKind;

fn main() -> mpc_imitation::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "dataset": { "samples_per_set": 5000 },
            "train": { "epochs": 100 },
            "bench_calls": 2000
        }"#,
    )?;
    let dir = tempfile::tempdir()?;
    let root = dir.path();

    let data = root.join("data/ds3_i40.csv");
    let rep = gen_data(&cfg, FeatureKind::I40, &data)?;
    println!("labelled {} poses -> {}", rep.samples, data.display());

    let model = root.join("models/headline.json");
    let (_, tr) = train_sl(&cfg, &data, &model)?;
    println!("trained {} epochs, best validation MSE {:.3e}", tr.train_loss.len(), tr.best_val_loss);

    let ev = eval(&cfg, Some(&model), &root.join("eval"))?;
    println!("closed loop: {:?}", ev.metrics);
    let b = bench(&cfg, Some(&model), &root.join("bench"))?;
    println!("{}: median {:.3} us per call", b.controller, b.latency.median_s * 1e6);

    let mut files: Vec<String> = walk(root).into_iter().map(|p| p.strip_prefix(root).unwrap().display().to_string()).collect();
    files.sort();
    println!("artifacts:\n  {}", files.join("\n  "));
    Ok(())
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![];
    for e in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
