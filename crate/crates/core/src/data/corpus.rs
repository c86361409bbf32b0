use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::{AudioTrack, MotionClip, PartLabels, PartLayout, FPS};
use super::speech::{gen_speech_clip, SpeechConfig};
use super::text::{gen_text_clip, pick_companion, TextConfig};
use super::vocab::{PromptTokens, Template};
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::persist::io::{read_json, write_json_atomic};
use crate::persist::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipKind {
    S2m,
    T2m,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: usize,
    pub motion: MotionClip,
    pub audio: Option<AudioTrack>,
    pub prompt: Option<PromptTokens>,
    pub labels: PartLabels,
    /// Primary template for text clips.
    pub template: Option<Template>,
}

impl Clip {
    pub fn kind(&self) -> ClipKind {
        if self.audio.is_some() {
            ClipKind::S2m
        } else {
            ClipKind::T2m
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub s2m: usize,
    pub t2m: usize,
    pub test_fraction: f64,
    pub speech: SpeechConfig,
    pub text: TextConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            s2m: 200,
            t2m: 300,
            test_fraction: 0.1,
            speech: SpeechConfig::default(),
            text: TextConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub config: CorpusConfig,
    pub clips: Vec<Clip>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    pub fn clip(&self, id: usize) -> &Clip {
        &self.clips[id]
    }

    pub fn train_clips(&self) -> impl Iterator<Item = &Clip> {
        self.train.iter().map(|&i| &self.clips[i])
    }

    pub fn test_clips(&self) -> impl Iterator<Item = &Clip> {
        self.test.iter().map(|&i| &self.clips[i])
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.clips {
            c.motion.validate()?;
            match (c.kind(), &c.prompt) {
                (ClipKind::S2m, Some(_)) => {
                    return Err(Error::Structure(format!("speech clip {} carries a prompt", c.id)))
                }
                (ClipKind::T2m, None) => return Err(Error::Structure(format!("text clip {} has no prompt", c.id))),
                _ => {}
            }
            if let Some(a) = &c.audio {
                a.validate()?;
                if a.len() != c.motion.len() {
                    return Err(Error::Length(format!("clip {} audio/motion length", c.id)));
                }
            }
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return Err(Error::Structure("train/test splits overlap".into()));
        }
        Ok(())
    }
}

/// Stratified primary template for text clip `j`: each block of seven clips
/// uses every template exactly once in a seeded order.
fn primary_template(seed: u64, j: usize) -> Template {
    let mut order = Template::ALL;
    let block = (j / order.len()) as u64;
    order.shuffle(&mut seed::stream_indexed(seed, "template-block", &[block]));
    order[j % order.len()]
}

fn make_clip(cfg: &CorpusConfig, seed: u64, id: usize) -> Result<Clip> {
    let mut rng = seed::stream_indexed(seed, "clip", &[id as u64]);
    if id < cfg.s2m {
        let (motion, audio) = gen_speech_clip(&cfg.speech, &mut rng)?;
        Ok(Clip {
            id,
            motion,
            audio: Some(audio),
            prompt: None,
            labels: PartLabels {
                upper: "gesture".into(),
                hands: "gesture".into(),
                lower: "stand".into(),
            },
            template: None,
        })
    } else {
        let primary = primary_template(seed, id - cfg.s2m);
        let mut templates = vec![primary];
        templates.extend(pick_companion(primary, &cfg.text, &mut rng));
        let (motion, prompt, labels) = gen_text_clip(&cfg.text, &templates, &mut rng)?;
        Ok(Clip {
            id,
            motion,
            audio: None,
            prompt: Some(prompt),
            labels,
            template: Some(primary),
        })
    }
}

fn split(ids: Vec<usize>, fraction: f64, seed: u64, name: &str) -> (Vec<usize>, Vec<usize>) {
    let mut ids = ids;
    ids.shuffle(&mut seed::stream(seed, name));
    let n_test = ((ids.len() as f64) * fraction).round() as usize;
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Deterministic corpus: clips `0..s2m` are speech clips, the rest text clips.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    if cfg.s2m == 0 || cfg.t2m == 0 {
        return Err(Error::Config("corpus needs at least one clip of each kind".into()));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::Config("test fraction must lie in [0, 1)".into()));
    }
    cfg.speech.validate()?;
    let total = cfg.s2m + cfg.t2m;
    let clips = (0..total)
        .into_par_iter()
        .map(|id| make_clip(cfg, seed, id))
        .collect::<Result<Vec<_>>>()?;
    let (mut train, mut test) = split((0..cfg.s2m).collect(), cfg.test_fraction, seed, "split-s2m");
    let (t_train, t_test) = split((cfg.s2m..total).collect(), cfg.test_fraction, seed, "split-t2m");
    train.extend(t_train);
    test.extend(t_test);
    let corpus = Corpus {
        seed,
        config: cfg.clone(),
        clips,
        train,
        test,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// On-disk clip record, shared by corpora and generated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFile {
    pub id: usize,
    pub fps: f64,
    pub layout: PartLayout,
    pub frames: Vec<Vec<f64>>,
    pub audio: Option<AudioTrack>,
    pub prompt: Option<Vec<String>>,
    pub labels: Option<PartLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Template>,
}

impl ClipFile {
    pub fn from_motion(id: usize, motion: &MotionClip) -> Self {
        Self {
            id,
            fps: motion.fps,
            layout: PartLayout::default(),
            frames: (0..motion.len()).map(|t| motion.frames.row(t).to_vec()).collect(),
            audio: None,
            prompt: None,
            labels: None,
            template: None,
        }
    }

    pub fn from_clip(clip: &Clip) -> Self {
        Self {
            audio: clip.audio.clone(),
            prompt: clip.prompt.as_ref().map(|p| p.words().iter().map(|w| w.to_string()).collect()),
            labels: Some(clip.labels.clone()),
            template: clip.template,
            ..Self::from_motion(clip.id, &clip.motion)
        }
    }

    pub fn motion(&self) -> Result<MotionClip> {
        if self.layout != PartLayout::default() {
            return Err(Error::Structure(format!("unsupported layout {:?}", self.layout)));
        }
        let mut m = MotionClip::new(Tensor::from_rows(&self.frames)?)?;
        m.fps = self.fps;
        Ok(m)
    }

    pub fn into_clip(self) -> Result<Clip> {
        let motion = self.motion()?;
        let prompt = self.prompt.as_ref().map(|w| PromptTokens::from_words(w)).transpose()?;
        Ok(Clip {
            id: self.id,
            motion,
            audio: self.audio,
            prompt,
            labels: self.labels.unwrap_or(PartLabels {
                upper: "unknown".into(),
                hands: "unknown".into(),
                lower: "unknown".into(),
            }),
            template: self.template,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub fps: f64,
    pub config: CorpusConfig,
    pub clips: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn clip_file_name(id: usize) -> String {
    format!("clip_{id}.json")
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for clip in &corpus.clips {
        write_json_atomic(&dir.join(clip_file_name(clip.id)), &ClipFile::from_clip(clip))?;
    }
    let manifest = CorpusManifest {
        seed: corpus.seed,
        fps: FPS,
        config: corpus.config.clone(),
        clips: corpus.clips.len(),
        train: corpus.train.clone(),
        test: corpus.test.clone(),
    };
    write_json_atomic(&dir.join("manifest.json"), &manifest)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let clips = (0..manifest.clips)
        .map(|id| ClipFile::load(&dir.join(clip_file_name(id)))?.into_clip())
        .collect::<Result<Vec<_>>>()?;
    let corpus = Corpus {
        seed: manifest.seed,
        config: manifest.config,
        clips,
        train: manifest.train,
        test: manifest.test,
    };
    corpus.validate()?;
    Ok(corpus)
}
