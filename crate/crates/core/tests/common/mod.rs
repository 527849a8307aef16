use featcomp::config::RunConfig;

/// Key-value settings for a run small enough for the test suite.
pub const SMALL: &str = "\
# reduced sizes for tests
seed = 7
data.train_visible = 120
data.train_occluded = 120
data.train_background = 120
data.eval_images = 50
data.eval_background = 4
proto.K = 3
stage1.T = 20
stage1.m = 16
stage2.T = 10
stage2.m = 16
eval.probe_epochs = 5
";

#[allow(dead_code)]
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for line in SMALL.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').unwrap();
        cfg.set(k.trim(), v).unwrap();
    }
    cfg.with_seed(7)
}
