use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use cospeech_core::align::{train_align, AlignConfig, AlignSpace};
use cospeech_core::compose::{generate, Branch, DenoiseCall, Generation, GenerationRequest, GuidanceSpec, Models};
use cospeech_core::data::{build_corpus, gen_speech_clip, AudioTrack, BodyPart, Clip, Corpus, CorpusConfig, PromptTokens, SpeechConfig, Template};
use cospeech_core::persist::seed;
use cospeech_core::diffusion::{train_diffusion, DenoiserModel, DiffusionConfig, DiffusionTrainConfig};
use cospeech_core::rvq::{train_rvq, RvqConfig, RvqStack, RvqTrainConfig};

struct Tiny {
    corpus: Corpus,
    /// Speech long enough for three windows.
    long_audio: AudioTrack,
    stacks: [RvqStack; 3],
    space: AlignSpace,
    model: DenoiserModel,
}

impl Tiny {
    fn models(&self) -> Models<'_> {
        Models {
            denoiser: &self.model,
            stacks: &self.stacks,
            space: &self.space,
        }
    }

    fn speech(&self) -> &AudioTrack {
        self.corpus.clips.iter().find_map(|c| c.audio.as_ref()).expect("speech clip")
    }
}

fn tiny() -> &'static Tiny {
    static TINY: OnceLock<Tiny> = OnceLock::new();
    TINY.get_or_init(train_tiny)
}

fn train_tiny() -> Tiny {
    let corpus = build_corpus(&CorpusConfig { s2m: 16, t2m: 32, ..Default::default() }, 3).unwrap();
    let motions: Vec<_> = corpus.train_clips().map(|c| c.motion.frames.clone()).collect();
    let rvq = RvqConfig { code_dim: 8, codebook_size: 16, width: 16, ..RvqConfig::desk() };
    let (stacks, _) = train_rvq(&motions, &rvq, &RvqTrainConfig { epochs: 2, ..Default::default() }, 3).unwrap();
    let pairs: Vec<_> = corpus.train_clips().filter_map(|c| c.prompt.clone().map(|p| (p, c.motion.frames.clone()))).collect();
    let align = AlignConfig { dim: 8, text_hidden: 16, motion_hidden: 16, decoder_hidden: 16, epochs: 4, ..AlignConfig::desk() };
    let (space, _) = train_align(&pairs, &align, 3).unwrap();
    let diffusion = DiffusionConfig {
        code_dim: 8,
        prompt_dim: 8,
        audio_dim: 4,
        audio_width: 8,
        step_embed: 8,
        width: 32,
        steps: 12,
        ..DiffusionConfig::desk()
    };
    let train = DiffusionTrainConfig { epochs: 4, batch: 8, ..DiffusionTrainConfig::desk() };
    let clips: Vec<&Clip> = corpus.train_clips().collect();
    let (model, _) = train_diffusion(&clips, &stacks, &space, &diffusion, &train, 3, None).unwrap();
    let speech = SpeechConfig { frames: 352, ..Default::default() };
    let (_, long_audio) = gen_speech_clip(&speech, &mut seed::stream(3, "long-speech")).unwrap();
    Tiny { corpus, long_audio, stacks, space, model }
}

fn request<'a>(audio: Option<&'a AudioTrack>, prompt: Option<&'a PromptTokens>, overrides: BTreeMap<BodyPart, PromptTokens>, frames: usize) -> GenerationRequest<'a> {
    GenerationRequest {
        audio,
        prompt,
        overrides,
        total_frames: frames,
    }
}

fn counted(t: &Tiny, req: &GenerationRequest<'_>, spec: &GuidanceSpec) -> (Generation, Vec<DenoiseCall>) {
    let calls = Mutex::new(Vec::new());
    let hook = |c: DenoiseCall| calls.lock().unwrap().push(c);
    let g = generate(&t.models(), req, spec, Some(&hook)).unwrap();
    (g, calls.into_inner().unwrap())
}

#[test]
fn condition_count_contract() {
    let t = tiny();
    let steps = t.model.config.steps as u64;
    let prompt = PromptTokens::from_templates(&[Template::Wave, Template::Walk]);
    let hands = BTreeMap::from([(BodyPart::Hands, PromptTokens::from_templates(&[Template::Wave]))]);

    // Every part has a sub-prompt and audio is present: three calls per part per step.
    let req = request(Some(&t.long_audio), Some(&prompt), hands.clone(), 240);
    let (g, calls) = counted(t, &req, &GuidanceSpec::new(1.0, 2.0, 5));
    assert_eq!(g.manifest.windows, 2);
    assert_eq!(calls.len() as u64, 2 * steps * 3 * 3);
    assert_eq!(g.manifest.denoiser_calls, calls.len() as u64);
    for branch in [Branch::Unconditional, Branch::Audio, Branch::Prompt] {
        assert_eq!(calls.iter().filter(|c| c.branch == branch).count() as u64, 2 * steps * 3);
    }
    assert!(calls.iter().all(|c| match c.branch {
        Branch::Unconditional => c.audio_zero && c.prompt_zero,
        Branch::Audio => !c.audio_zero && c.prompt_zero,
        Branch::Prompt => c.audio_zero && !c.prompt_zero,
    }));

    // Hands has no sub-prompt under plain routing, so its prompt branch is skipped.
    let req = request(Some(t.speech()), Some(&prompt), BTreeMap::new(), 128);
    let (_, calls) = counted(t, &req, &GuidanceSpec::new(1.0, 2.0, 5));
    assert_eq!(calls.len() as u64, steps * (3 + 3 + 2));
    assert!(!calls.iter().any(|c| c.part == BodyPart::Hands && c.branch == Branch::Prompt));
}

#[test]
fn skipped_branches_match_their_unskipped_value() {
    let t = tiny();
    let prompt = PromptTokens::from_templates(&[Template::Walk]);
    let spec = GuidanceSpec::new(0.0, 1.5, 9);
    let with_audio = request(Some(t.speech()), Some(&prompt), BTreeMap::new(), 128);
    let without = request(None, Some(&prompt), BTreeMap::new(), 128);
    let (a, calls) = counted(t, &with_audio, &spec);
    assert!(!calls.iter().any(|c| c.branch == Branch::Audio));
    let (b, _) = counted(t, &without, &spec);
    assert_eq!(a.latent, b.latent);

    // A zero weight on the prompt is the same chain as having no prompt.
    let spec = GuidanceSpec::new(1.0, 0.0, 9);
    let (c, calls) = counted(t, &request(Some(t.speech()), Some(&prompt), BTreeMap::new(), 128), &spec);
    assert!(!calls.iter().any(|c| c.branch == Branch::Prompt));
    let (d, _) = counted(t, &request(Some(t.speech()), None, BTreeMap::new(), 128), &spec);
    assert_eq!(c.latent, d.latent);
}

#[test]
fn generation_independent_of_pool_size() {
    let t = tiny();
    let prompt = PromptTokens::from_templates(&[Template::Sit]);
    let req = request(Some(&t.long_audio), Some(&prompt), BTreeMap::new(), 240);
    let spec = GuidanceSpec::new(1.0, 1.0, 4);
    let runs: Vec<Generation> = [1, 3]
        .iter()
        .map(|&n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| generate(&t.models(), &req, &spec, None).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn window_seams_are_no_rougher_than_window_interiors() {
    let t = tiny();
    let prompt = PromptTokens::from_templates(&[Template::Walk]);
    let req = request(Some(&t.long_audio), Some(&prompt), BTreeMap::new(), 352);
    let spec = GuidanceSpec::new(1.0, 1.5, 2);
    let g = generate(&t.models(), &req, &spec, None).unwrap();
    let frames = &g.clip.frames;
    let seams: Vec<usize> = (1..g.manifest.windows).map(|w| spec.window + (w - 1) * spec.stride()).collect();
    let mut interior = Vec::new();
    let mut seam_max = 0.0f64;
    for t in 1..frames.rows() {
        for c in 0..frames.cols() {
            let jump = (frames.at(t, c) - frames.at(t - 1, c)).abs();
            if seams.contains(&t) {
                seam_max = seam_max.max(jump);
            } else {
                interior.push(jump);
            }
        }
    }
    interior.sort_by(f64::total_cmp);
    let p99 = interior[(0.99 * (interior.len() - 1) as f64).round() as usize];
    assert!(seam_max <= p99, "seam jump {seam_max} above interior 99th percentile {p99}");
}

#[test]
fn call_counter_is_shared_safely() {
    // The hook runs from rayon workers; counting through an atomic must agree with the manifest.
    let t = tiny();
    let count = AtomicU64::new(0);
    let hook = |_: DenoiseCall| {
        count.fetch_add(1, Ordering::Relaxed);
    };
    let req = request(None, None, BTreeMap::new(), 128);
    let g = generate(&t.models(), &req, &GuidanceSpec::new(1.0, 1.0, 1), Some(&hook)).unwrap();
    assert_eq!(count.load(Ordering::Relaxed), g.manifest.denoiser_calls);
    assert_eq!(g.manifest.denoiser_calls, t.model.config.steps as u64 * 3);
}
