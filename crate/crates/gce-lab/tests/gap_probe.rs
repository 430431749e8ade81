//! Scratch probe: FGSM robustness gap between two checkpoints on the
//! pinned evaluation subset. Not part of the suites.

mod common;

use gce_lab::attacks::{self, AttackConfig, AttackKind};
use gce_lab::checkpoint;
use gce_lab::data;

#[test]
#[ignore = "manual probe"]
fn full_criterion5_probe() {
    let root = common::data_root();
    let test = data::load_mnist_split(&root, false).unwrap();
    let subset = test.subset(1000, 7).unwrap();
    let dir = std::env::var("PROBE_DIR").unwrap_or_else(|_| "/tmp/b64".into());
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path().join("checkpoint.bin");
        if !path.exists() {
            continue;
        }
        let (spec, params, meta) = checkpoint::load_checkpoint(&path).unwrap();
        let run = |kind: AttackKind, eps: f64, iters: usize| {
            let mut cfg = AttackConfig::new(kind);
            cfg.epsilon = eps;
            cfg.iterations = iters;
            cfg.seed = 7;
            attacks::evaluate_attack(&spec, &params, &subset, &cfg, 200)
                .unwrap()
                .accuracy_pct
        };
        println!(
            "{}: fgsm .1/.2/.3 = {:.2}/{:.2}/{:.2}  bim .1/.2/.3 = {:.2}/{:.2}/{:.2}  pgd@.1 = {:.2}  mim@.2 = {:.2}",
            meta.loss_kind,
            run(AttackKind::Fgsm, 0.1, 1),
            run(AttackKind::Fgsm, 0.2, 1),
            run(AttackKind::Fgsm, 0.3, 1),
            run(AttackKind::Bim, 0.1, 10),
            run(AttackKind::Bim, 0.2, 10),
            run(AttackKind::Bim, 0.3, 10),
            run(AttackKind::Pgd, 0.1, 40),
            run(AttackKind::Mim, 0.2, 40),
        );
    }
}

#[test]
#[ignore = "manual probe"]
fn fgsm_gap_probe() {
    let root = common::data_root();
    let test = data::load_mnist_split(&root, false).unwrap();
    let subset = test.subset(1000, 7).unwrap();

    let dir = std::env::var("PROBE_DIR").unwrap_or_else(|_| "/tmp/b64".into());
    let mut accs: Vec<(String, f64, f64)> = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path().join("checkpoint.bin");
        if !path.exists() {
            continue;
        }
        let (spec, params, meta) = checkpoint::load_checkpoint(&path).unwrap();
        let mut cfg = AttackConfig::new(AttackKind::Fgsm);
        cfg.epsilon = 0.2;
        cfg.seed = 7;
        let fgsm = attacks::evaluate_attack(&spec, &params, &subset, &cfg, 200).unwrap();
        let clean = attacks::clean_accuracy(&spec, &params, &subset).unwrap();
        accs.push((meta.loss_kind.clone(), clean, fgsm.accuracy_pct));
        println!(
            "{}: clean {:.2}%  fgsm@0.2 {:.2}%",
            meta.loss_kind, clean, fgsm.accuracy_pct
        );
    }
    if accs.len() == 2 {
        let xe = accs.iter().find(|a| a.0 == "xe").unwrap();
        let gce = accs.iter().find(|a| a.0 == "gce").unwrap();
        println!("gap: {:.2}pp", gce.2 - xe.2);
    }
}
