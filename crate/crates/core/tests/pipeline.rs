mod common;

use featcomp::completion::{Generator, Model};
use featcomp::eval::Subset;
use featcomp::occlusion::BetaMode;
use featcomp::pipeline::{build_prototypes, evaluate, group, synthesize, train_model};
use featcomp::synth::Label;

#[test]
fn synthesis_is_seeded() {
    let cfg = common::small_config();
    let (train, eval) = synthesize(&cfg).unwrap();
    let (again, _) = synthesize(&cfg).unwrap();
    assert_eq!(train, again);
    let (other, _) = synthesize(&cfg.clone().with_seed(8)).unwrap();
    assert_ne!(train, other);
    let g = group(&train);
    assert_eq!((g.visible.len(), g.occluded.len(), g.background.len()), (120, 120, 120));
    assert_eq!(eval.iter().filter(|p| p.label == Label::Background).count(), 50 * 4);
}

#[test]
fn history_covers_both_stages() {
    let cfg = common::small_config();
    let (train, _) = synthesize(&cfg).unwrap();
    let bank = build_prototypes(&cfg, &train).unwrap();
    let (model, progress) = train_model(&cfg, &train, &bank).unwrap();
    assert_eq!(progress.history.len(), 30);
    assert!(progress.history.iter().enumerate().all(|(i, r)| r.iteration == i + 1));
    assert!(model.head.is_trained());
    assert_eq!(model.stages, cfg.stages);
}

#[test]
fn empty_completion_leaves_miss_rates_unchanged() {
    let mut cfg = common::small_config();
    let (train, eval) = synthesize(&cfg).unwrap();
    let bank = build_prototypes(&cfg, &train).unwrap();
    let (model, _) = train_model(&cfg, &train, &bank).unwrap();
    let identity = Model {
        generator: Generator::identity(cfg.world.channels),
        ..model
    };
    cfg.occlusion.beta_mode = BetaMode::Fixed;
    cfg.occlusion.beta = -1e6;
    let report = evaluate(&cfg, &eval, &bank, &identity).unwrap();
    for subset in Subset::ALL {
        let row = report.row(subset);
        assert_eq!(row.delta_mr(), 0.0, "{subset}");
        assert!((row.compactness_ratio - 1.0).abs() < 1e-12);
    }
}

#[test]
fn evaluation_reports_every_subset() {
    let cfg = common::small_config();
    let (train, eval) = synthesize(&cfg).unwrap();
    let bank = build_prototypes(&cfg, &train).unwrap();
    let (model, _) = train_model(&cfg, &train, &bank).unwrap();
    let report = evaluate(&cfg, &eval, &bank, &model).unwrap();
    let rho = report.row(Subset::RHO);
    assert_eq!(
        rho.ground_truths,
        report.row(Subset::R).ground_truths + report.row(Subset::HO).ground_truths
    );
    for row in &report.rows {
        assert!((1e-4..=1.0).contains(&row.mr_baseline));
        assert!((1e-4..=1.0).contains(&row.mr_completed));
        assert!((0.0..=1.0).contains(&row.mask_iou));
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("subset,mr_baseline,mr_completed,delta_mr,"));
}
