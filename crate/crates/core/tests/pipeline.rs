use edgellm::error::Error;
use edgellm::pipeline::{self, exit_code, RunConfig};

fn config(root: &std::path::Path) -> RunConfig {
    let text = "the ferry crossed the river at dawn and the lamps were still lit. ".repeat(60);
    std::fs::write(root.join("corpus.txt"), text).unwrap();
    let mut cfg = RunConfig::default().with_seed(2);
    cfg.paths.corpus = root.join("corpus.txt");
    cfg.paths.checkpoint_dir = root.join("ck");
    cfg.paths.policy = root.join("policy.txt");
    cfg.paths.report_dir = root.join("reports");
    cfg.model.embed_dim = 32;
    cfg.model.num_heads = 2;
    cfg.model.max_seq_len = 24;
    cfg.pretrain.steps = 60;
    cfg.tuning.steps = 60;
    cfg.tuning.lr = 3e-3;
    cfg.tuning.eval_every = 30;
    cfg.eval.max_sequences = 8;
    cfg.compression.calib_sequences = 8;
    cfg.compression.calib_len = 24;
    cfg
}

#[test]
fn tuning_lowers_final_exit_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    pipeline::run_pretrain(&cfg).unwrap();
    pipeline::run_profile(&cfg).unwrap();
    let rep = pipeline::run_tune(&cfg).unwrap();
    assert_eq!(rep.outputs.len(), 3);
    let evals = std::fs::read_to_string(cfg.report("tune_eval.tsv")).unwrap();
    let rows: Vec<Vec<f64>> = evals
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let last_exit = cfg.tuning.exits;
    assert!(rows[2][last_exit] < rows[0][last_exit], "{evals}");
}

#[test]
fn stages_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let err = pipeline::run_tune(&cfg).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(exit_code(&err), 2);
    let mut bad = cfg.clone();
    bad.tuning.exits = 1;
    assert_eq!(exit_code(&pipeline::run_pretrain(&bad).unwrap_err()), 1);
    let mut wrong = cfg;
    wrong.paths.corpus = dir.path().join("nope.txt");
    let err = pipeline::run_pretrain(&wrong).unwrap_err();
    assert!(err.to_string().contains("nope.txt"));
}
