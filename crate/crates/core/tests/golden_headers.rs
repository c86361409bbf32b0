//! Checkpoint headers of freshly built desk-preset modules against committed
//! copies. Set `COSPEECH_BLESS=1` to rewrite the fixtures after an intended
//! format change.

use std::path::PathBuf;

use cospeech_core::align::{AlignConfig, AlignSpace};
use cospeech_core::data::BodyPart;
use cospeech_core::diffusion::{DenoiserModel, DiffusionConfig};
use cospeech_core::persist::{align_checkpoint, diffusion_checkpoint, rvq_checkpoint, seed, Checkpoint};
use cospeech_core::rvq::{RvqConfig, RvqStack};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}_header.json"))
}

fn check(name: &str, ck: Checkpoint) {
    let json = serde_json::to_string_pretty(&ck.header()).unwrap() + "\n";
    let path = fixture(name);
    if std::env::var_os("COSPEECH_BLESS").is_some() {
        std::fs::write(&path, &json).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(json, golden, "{name} header drifted from {}", path.display());
}

#[test]
fn rvq_header() {
    let mut rng = seed::stream(1, "golden");
    let stacks = BodyPart::ALL.map(|p| RvqStack::new(p, RvqConfig::desk(), &mut rng).unwrap());
    check("rvq", rvq_checkpoint(&stacks).unwrap());
}

#[test]
fn align_header() {
    let space = AlignSpace::new(AlignConfig::desk(), &mut seed::stream(1, "golden")).unwrap();
    check("align", align_checkpoint(&space).unwrap());
}

#[test]
fn diffusion_header() {
    let model = DenoiserModel::new(DiffusionConfig::desk(), &mut seed::stream(1, "golden")).unwrap();
    check("diffusion", diffusion_checkpoint(&model).unwrap());
}
