mod common;

use std::path::Path;

use mindqa::agent::Mode;
use mindqa::harness::{
    cli_main, dump_topdown, evaluate, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, RunConfig,
};
use mindqa::trainer::Stage;

fn cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("mind").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn config_rejects_unknown_keys_and_mismatches() {
    assert!(RunConfig::from_json("{\"seed\": 3}").is_ok());
    assert!(RunConfig::from_json("{\"sede\": 3}").is_err());
    assert!(RunConfig::from_json("{\"train\": {\"rl\": {\"gama\": 0.5}}}").is_err());
    let mut c = RunConfig::default();
    c.imagery.latent_dim = 7;
    assert!(c.validate().is_err());
    let mut c = RunConfig::default();
    c.agent.n_max = 40;
    assert!(c.validate().is_err());
    let c = common::tiny_config();
    assert!(c.validate().is_ok());
    assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    assert_eq!(c.hash(), RunConfig::from_json(&c.to_json()).unwrap().hash());
    assert_ne!(c.hash(), RunConfig::default().hash());
}

#[test]
fn checkpoints_round_trip_and_fail_loudly() {
    let w = common::tiny_world();
    let mut m = w.models().unwrap();
    w.train(&mut m, Stage::Vae, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let hash = w.config.hash();
    save_checkpoint(&m, &hash, &path).unwrap();

    let mut fresh = w.models().unwrap();
    assert!(load_checkpoint(&mut fresh, &hash, &path)
        .unwrap()
        .is_empty());
    assert_eq!(fresh.stages, vec![Stage::Vae]);
    assert_eq!(fresh.mind.vae_params.flatten(), m.mind.vae_params.flatten());
    assert_eq!(
        fresh.agent.nav_params.flatten(),
        m.agent.nav_params.flatten()
    );

    let warnings = load_checkpoint(&mut w.models().unwrap(), "other", &path).unwrap();
    assert_eq!(warnings.len(), 1);

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let e = load_checkpoint(&mut w.models().unwrap(), &hash, &cut).unwrap_err();
    assert!(matches!(e, CheckpointError::Truncated { .. }), "{e}");
    assert!(matches!(
        Checkpoint::from_bytes(b"NOTACKPT........"),
        Err(CheckpointError::Magic)
    ));

    let mut other = w.config.clone();
    other.vae.latent_dim = 5;
    other.imagery.latent_dim = 5;
    let mut wrong = other.build_models(&w.corpus.vocab).unwrap();
    assert!(matches!(
        load_checkpoint(&mut wrong, &hash, &path),
        Err(CheckpointError::Shape { .. })
    ));
}

#[test]
fn evaluation_is_deterministic_and_oracle_replays_score_the_tier() {
    let w = common::tiny_world();
    let m = w.models().unwrap();
    let run = || {
        evaluate(
            &m,
            w.houses(),
            &w.corpus.val,
            &[4, 8],
            &w.config.render,
            &w.config.rewards,
            "h",
            9,
        )
        .unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(ta, tb);
    assert_eq!(a.tiers.len(), 2);
    for t in &ta {
        assert!(t.n_actions <= w.config.agent.n_max);
    }
    assert!(evaluate(
        &m,
        w.houses(),
        &[],
        &[4],
        &w.config.render,
        &w.config.rewards,
        "h",
        0
    )
    .is_err());

    // the expert, replayed through the policy, closes the whole gap
    let e = &w.corpus.val[0];
    let env = w.corpus.env(e, e.spawn).unwrap();
    let tr = mindqa::agent::run_episode(
        &m.agent,
        &m.mind,
        &mut mindqa::agent::FeatureCache::new(w.config.render),
        env,
        &Mode::DemoForced(e.actions.clone()),
        &Default::default(),
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(tr.d_delta(), e.spawn_k as i64);

    let img = dump_topdown(w.house(), &[tr.poses()], 4).unwrap();
    assert_eq!((img.height, img.width), (36, 36));
}

#[test]
fn cli_usage_errors_exit_2() {
    assert_eq!(cli(&[]), 2);
    assert_eq!(cli(&["fly"]), 2);
    assert_eq!(cli(&["train", "nope", "--data", "x"]), 2);
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mind"))
        .arg("--bogus")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("missing");
    assert_eq!(
        cli(&["--out", p(&out), "train", "vae", "--data", p(&missing)]),
        1
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"nope\": 1}").unwrap();
    assert_eq!(
        cli(&["--config", p(&bad), "--out", p(&out), "gen-dataset"]),
        1
    );
}

#[test]
fn cli_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_config();
    cfg.dataset.houses = 10;
    cfg.dataset.episodes_per_house = 2;
    cfg.dataset.spawn_k = 6;
    cfg.eval.tiers = vec![4];
    cfg.eval.max_episodes = Some(2);
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let out = dir.path().join("out");
    let base = ["--config", p(&cfg_path), "--out", p(&out)];
    let go = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        cli(&args)
    };

    assert_eq!(go(&["gen-world", "--rooms", "2", "--size", "9"]), 0);
    assert!(out.join("house.json").exists() && out.join("house.ppm").exists());
    assert_eq!(go(&["gen-dataset"]), 0);
    let data = out.join("dataset");
    let data = p(&data);

    let mut prev: Option<String> = None;
    for stage in ["vae", "imagery", "bc", "rl"] {
        let mut args = vec!["train", stage, "--data", data];
        if let Some(c) = &prev {
            args.extend(["--checkpoint", c.as_str()]);
        }
        assert_eq!(go(&args), 0, "stage {stage}");
        let ck = out.join(format!("{stage}.ckpt"));
        assert!(ck.exists());
        prev = Some(p(&ck).to_string());
    }
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    for stage in ["vae", "imagery", "bc", "rl"] {
        assert!(metrics.contains(&format!("\"stage\":\"{stage}\"")));
    }
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in [
            "stage",
            "epoch",
            "loss",
            "success_rate",
            "mean_d_delta",
            "qa_accuracy",
        ] {
            assert!(v.get(k).is_some(), "{k} missing in {line}");
        }
    }

    let ck = prev.unwrap();
    assert_eq!(go(&["eval", "--checkpoint", &ck, "--data", data]), 0);
    let first = std::fs::read(out.join("eval.json")).unwrap();
    assert_eq!(go(&["eval", "--checkpoint", &ck, "--data", data]), 0);
    assert_eq!(std::fs::read(out.join("eval.json")).unwrap(), first);
    assert!(out.join("trajectories.jsonl").exists());

    assert_eq!(
        go(&[
            "dump-topdown",
            "--data",
            data,
            "--episode",
            "0",
            "--checkpoint",
            &ck
        ]),
        0
    );
    assert!(out.join("topdown_0.ppm").exists());
    assert_eq!(
        go(&[
            "dump-imagery",
            "--checkpoint",
            &ck,
            "--data",
            data,
            "--episode",
            "0",
            "--horizon",
            "3"
        ]),
        0
    );
    assert!(out.join("imagery_0").join("latents.json").exists());
    assert_eq!(
        go(&["dump-topdown", "--data", data, "--episode", "99999"]),
        1
    );
    assert_eq!(go(&["grad-check"]), 0);
}
