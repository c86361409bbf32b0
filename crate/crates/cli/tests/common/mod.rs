#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use cospeech_core::persist::RunConfig;

/// A configuration small enough to run every stage in seconds.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.corpus.s2m = 12;
    c.corpus.t2m = 24;
    c.corpus.test_fraction = 0.25;
    c.rvq.code_dim = 8;
    c.rvq.codebook_size = 16;
    c.rvq.width = 16;
    c.rvq_train.epochs = 1;
    c.align.dim = 8;
    c.align.text_hidden = 16;
    c.align.motion_hidden = 16;
    c.align.decoder_hidden = 16;
    c.align.epochs = 2;
    c.diffusion.code_dim = 8;
    c.diffusion.prompt_dim = 8;
    c.diffusion.audio_dim = 4;
    c.diffusion.audio_width = 8;
    c.diffusion.step_embed = 8;
    c.diffusion.width = 32;
    c.diffusion.steps = 10;
    c.diffusion_train.epochs = 1;
    c.diffusion_train.batch = 8;
    c
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

pub fn cli(args: &[&str]) -> i32 {
    let argv: Vec<String> = std::iter::once("cospeech").chain(args.iter().copied()).map(String::from).collect();
    cospeech_cli::run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// datagen, the three trainings, a few samples and eval, all through `run`.
/// Returns the metric CSV bytes.
pub fn scripted_pipeline(dir: &Path, cfg: &RunConfig) -> Vec<u8> {
    let config = write_config(dir, cfg);
    let data = dir.join("data");
    let ckpt = dir.join("ckpt");
    let gen = dir.join("gen");
    assert_eq!(cli(&["datagen", "--config", s(&config), "--out", s(&data)]), 0);
    for stage in ["rvq", "align", "diffusion"] {
        assert_eq!(cli(&["train", stage, "--config", s(&config), "--data", s(&data), "--ckpt-dir", s(&ckpt)]), 0, "train {stage}");
    }
    let audio = data.join("clip_0.json");
    let jobs: [(&str, &str, &str); 4] = [("walk", "1", "a"), ("sit", "2", "b"), ("wave while walk", "3", "c"), ("kneel", "4", "d")];
    for (prompt, seed, name) in jobs {
        let out = gen.join(format!("{name}.json"));
        let code = cli(&[
            "sample", "--ckpt-dir", s(&ckpt), "--audio", s(&audio), "--prompt", prompt, "--wa", "1", "--wp", "2", "--seed", seed, "--out",
            s(&out),
        ]);
        assert_eq!(code, 0, "sample {prompt}");
    }
    let metrics = dir.join("metrics.csv");
    assert_eq!(
        cli(&["eval", "--real", s(&data), "--gen", s(&gen), "--ckpt-dir", s(&ckpt), "--seed", "1", "--out", s(&metrics)]),
        0
    );
    fs::read(&metrics).unwrap()
}
