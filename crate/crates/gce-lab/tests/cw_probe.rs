//! Scratch probe for C&W settings against a trained checkpoint.
//! Not part of the suites: run by hand with --ignored.

mod common;

use gce_lab::attacks::{self, AttackConfig, AttackKind};
use gce_lab::checkpoint;
use gce_lab::data;

#[test]
#[ignore = "manual probe"]
fn cw_success_rate_probe() {
    let root = common::data_root();
    let ckpt = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../runs/b9ddab01fb10-s42/checkpoint.bin");
    let (spec, params, _) = checkpoint::load_checkpoint(&ckpt).unwrap();
    let test = data::load_mnist_split(&root, false).unwrap();
    let subset = test.subset(100, 13).unwrap();
    let (images, labels) = subset.gather(&(0..subset.len()).collect::<Vec<_>>());

    for (tag, binary_steps, max_iter) in [("9x200", 9usize, 200usize), ("9x400", 9, 400)] {
        let mut cfg = AttackConfig::new(AttackKind::Cw);
        cfg.binary_steps = binary_steps;
        cfg.max_opt_iterations = max_iter;
        cfg.initial_constant = 0.001;
        cfg.confidence = 0.0;
        cfg.seed = 13;
        let started = std::time::Instant::now();
        let out = attacks::cw(&spec, &params, &images, &labels, &cfg).unwrap();
        let ok: Vec<f64> = out
            .success
            .iter()
            .zip(&out.l2)
            .filter(|(s, _)| **s)
            .map(|(_, &l)| l)
            .collect();
        println!(
            "{tag}: success {:.1}% mean_l2 {:.4} ({} ok) in {:.0}s",
            out.success_rate() * 100.0,
            ok.iter().sum::<f64>() / ok.len().max(1) as f64,
            ok.len(),
            started.elapsed().as_secs_f64()
        );
    }
}
