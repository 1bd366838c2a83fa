use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_manifest, DataError, Gender, Manifest, Utterance};
use crate::features::{write_wav_pcm16, Waveform};

/// Parameters of the synthetic corpus. Every character becomes a tone
/// burst whose carrier encodes the character and whose amplitude
/// modulation rate encodes the speaker's gender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusSpec {
    pub speakers_per_gender: usize,
    pub utterances_per_speaker: usize,
    pub alphabet: String,
    pub min_len: usize,
    pub max_len: usize,
    pub sample_rate: u32,
    pub seed: u64,
    pub male_f0: f64,
    pub female_f0: f64,
    pub burst_ms: f64,
    pub fade_ms: f64,
    pub modulation_depth: f64,
    /// Half-width of the uniform per-speaker carrier offset.
    pub speaker_offset_hz: f64,
    pub noise_level: f64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            speakers_per_gender: 2,
            utterances_per_speaker: 25,
            alphabet: "abcde ".into(),
            min_len: 4,
            max_len: 10,
            sample_rate: 16000,
            seed: 0,
            male_f0: 120.0,
            female_f0: 220.0,
            burst_ms: 80.0,
            fade_ms: 15.0,
            modulation_depth: 0.8,
            speaker_offset_hz: 30.0,
            noise_level: 0.005,
        }
    }
}

impl ToyCorpusSpec {
    fn sorted_alphabet(&self) -> Result<Vec<char>, DataError> {
        let mut chars: Vec<char> = self.alphabet.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        if chars.len() != self.alphabet.chars().count() {
            return Err(DataError::ToySpec("alphabet has repeated characters".into()));
        }
        if let Some(c) = chars.iter().find(|c| !(c.is_ascii_lowercase() || **c == ' ')) {
            return Err(DataError::ToySpec(format!("alphabet character {c:?} is not a lowercase letter or space")));
        }
        if !chars.iter().any(char::is_ascii_lowercase) {
            return Err(DataError::ToySpec("alphabet needs at least one letter".into()));
        }
        Ok(chars)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.sorted_alphabet()?;
        let bad = |m: &str| Err(DataError::ToySpec(m.into()));
        if self.speakers_per_gender == 0 || self.utterances_per_speaker == 0 {
            return bad("need at least one speaker per gender and one utterance per speaker");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 1 <= min_len <= max_len");
        }
        if self.sample_rate == 0 || self.burst_ms <= 2.0 * self.fade_ms || self.fade_ms < 0.0 {
            return bad("burst must be longer than its two fades");
        }
        if !(0.0..=1.0).contains(&self.modulation_depth) || self.noise_level < 0.0 {
            return bad("modulation depth must lie in [0, 1] and noise level be non-negative");
        }
        Ok(())
    }

    pub fn carrier_hz(&self, rank: usize) -> f64 {
        500.0 + 150.0 * rank as f64
    }

    fn f0(&self, g: Gender) -> f64 {
        match g {
            Gender::M => self.male_f0,
            Gender::F => self.female_f0,
        }
    }
}

/// Random transcript with no leading, trailing or repeated spaces.
fn transcript(rng: &mut ChaCha8Rng, alphabet: &[char], min_len: usize, max_len: usize) -> String {
    let letters: Vec<char> = alphabet.iter().copied().filter(|c| *c != ' ').collect();
    let len = rng.gen_range(min_len..=max_len);
    let mut out = String::with_capacity(len);
    let mut prev_space = true;
    for i in 0..len {
        let c = alphabet[rng.gen_range(0..alphabet.len())];
        let c = if c == ' ' && (prev_space || i + 1 == len) { letters[rng.gen_range(0..letters.len())] } else { c };
        prev_space = c == ' ';
        out.push(c);
    }
    out
}

struct Voice {
    f0: f64,
    offset_hz: f64,
}

fn render(spec: &ToyCorpusSpec, alphabet: &[char], text: &str, voice: &Voice, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let burst = (spec.burst_ms * sr / 1000.0).round() as usize;
    let fade = (spec.fade_ms * sr / 1000.0).round() as usize;
    let m = spec.modulation_depth;
    let mut out = Vec::with_capacity(burst * text.chars().count());
    for (k, c) in text.chars().enumerate() {
        let rank = alphabet.iter().position(|a| *a == c).expect("transcript drawn from alphabet");
        let fc = spec.carrier_hz(rank) + voice.offset_hz;
        let phase = rng.gen_range(0.0..2.0 * PI);
        for n in 0..burst {
            // Continuous time keeps the modulator phase-locked across bursts.
            let t = (k * burst + n) as f64 / sr;
            let edge = n.min(burst - 1 - n);
            let env = if edge < fade { 0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos() } else { 1.0 };
            let am = (1.0 + m * (2.0 * PI * voice.f0 * t).cos()) / (1.0 + m);
            let noise = spec.noise_level * rng.gen_range(-1.0..1.0);
            out.push(0.5 * env * am * (2.0 * PI * fc * (n as f64 / sr) + phase).sin() + noise);
        }
    }
    out
}

/// Writes `wav/<id>.wav` files and `manifest.jsonl` into `out_dir`.
pub fn synth_toy_corpus(spec: &ToyCorpusSpec, out_dir: impl AsRef<Path>) -> Result<Manifest, DataError> {
    spec.validate()?;
    let alphabet = spec.sorted_alphabet()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("wav"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut utterances = Vec::new();
    for g in [Gender::M, Gender::F] {
        for s in 0..spec.speakers_per_gender {
            let speaker = format!("{}{:02}", g.to_string().to_lowercase(), s + 1);
            let voice = Voice {
                f0: spec.f0(g),
                offset_hz: rng.gen_range(-spec.speaker_offset_hz..=spec.speaker_offset_hz),
            };
            for k in 0..spec.utterances_per_speaker {
                let id = format!("{speaker}-{:03}", k + 1);
                let text = transcript(&mut rng, &alphabet, spec.min_len, spec.max_len);
                let samples = render(spec, &alphabet, &text, &voice, &mut rng);
                let audio = format!("wav/{id}.wav");
                write_wav_pcm16(out_dir.join(&audio), &Waveform::new(samples, spec.sample_rate).expect("non-empty"))
                    .map_err(|e| DataError::Features { id: id.clone(), source: e })?;
                utterances.push(Utterance { id, audio, text, speaker: speaker.clone(), gender: g, accent: None });
            }
        }
    }
    let m = Manifest::new("toy", out_dir, utterances)?;
    write_manifest(out_dir.join("manifest.jsonl"), &m)?;
    Ok(m)
}

/// Dominant amplitude-modulation rate in 80–400 Hz: the squared signal is
/// smoothed over 2.5 ms to strip the carrier, then the lag with the largest
/// biased autocorrelation wins.
pub fn modulation_rate_hz(w: &Waveform) -> f64 {
    let sr = w.sample_rate as f64;
    let win = ((0.0025 * sr).round() as usize).max(1);
    let sq: Vec<f64> = w.samples.iter().map(|x| x * x).collect();
    let mut env = Vec::with_capacity(sq.len().saturating_sub(win) + 1);
    let mut acc: f64 = sq.iter().take(win).sum();
    env.push(acc / win as f64);
    for i in win..sq.len() {
        acc += sq[i] - sq[i - win];
        env.push(acc / win as f64);
    }
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let env: Vec<f64> = env.iter().map(|e| e - mean).collect();
    let (lo, hi) = ((sr / 400.0).floor() as usize, (sr / 80.0).ceil() as usize);
    let n = env.len();
    let best = (lo.max(1)..=hi.min(n.saturating_sub(1)))
        .map(|lag| (lag, env[..n - lag].iter().zip(&env[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64))
        .fold(None, |best: Option<(usize, f64)>, (lag, r)| match best {
            Some((_, br)) if br >= r => best,
            _ => Some((lag, r)),
        });
    best.map_or(0.0, |(lag, _)| sr / lag as f64)
}

/// Male below 170 Hz modulation, female above.
pub fn classify_gender(w: &Waveform) -> Gender {
    if modulation_rate_hz(w) < 170.0 {
        Gender::M
    } else {
        Gender::F
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::read_wav;

    fn small_spec(seed: u64) -> ToyCorpusSpec {
        ToyCorpusSpec { utterances_per_speaker: 10, seed, ..Default::default() }
    }

    #[test]
    fn counts_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_toy_corpus(&small_spec(1), dir.path()).unwrap();
        assert_eq!(m.len(), 40);
        let wavs = std::fs::read_dir(dir.path().join("wav")).unwrap().count();
        assert_eq!(wavs, 40);
        let lines = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 40);
        for u in m.utterances() {
            let n = u.text.chars().count();
            assert!((4..=10).contains(&n));
            assert!(!u.text.starts_with(' ') && !u.text.ends_with(' ') && !u.text.contains("  "));
            let w = read_wav(m.audio_path(u)).unwrap();
            assert_eq!(w.sample_rate, 16000);
            assert_eq!(w.samples.len(), n * 1280);
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = ToyCorpusSpec { speakers_per_gender: 1, utterances_per_speaker: 3, ..small_spec(5) };
        let ma = synth_toy_corpus(&spec, a.path()).unwrap();
        synth_toy_corpus(&spec, b.path()).unwrap();
        synth_toy_corpus(&ToyCorpusSpec { seed: 6, ..spec.clone() }, c.path()).unwrap();
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), "manifest.jsonl"), read(b.path(), "manifest.jsonl"));
        assert_ne!(read(a.path(), "manifest.jsonl"), read(c.path(), "manifest.jsonl"));
        for u in ma.utterances() {
            assert_eq!(read(a.path(), &u.audio), read(b.path(), &u.audio));
        }
    }

    #[test]
    fn same_text_differs_across_gender() {
        let spec = ToyCorpusSpec { noise_level: 0.0, ..Default::default() };
        let alphabet = spec.sorted_alphabet().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let male = render(&spec, &alphabet, "abc de", &Voice { f0: 120.0, offset_hz: 0.0 }, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let female = render(&spec, &alphabet, "abc de", &Voice { f0: 220.0, offset_hz: 0.0 }, &mut rng);
        assert_eq!(male.len(), female.len());
        assert_ne!(male, female);
        let rate = |s: Vec<f64>| modulation_rate_hz(&Waveform::new(s, 16000).unwrap());
        assert!((rate(male) - 120.0).abs() < 5.0);
        assert!((rate(female) - 220.0).abs() < 8.0);
    }

    #[test]
    fn gender_is_recoverable_from_audio() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_toy_corpus(&small_spec(2), dir.path()).unwrap();
        for u in m.utterances() {
            let w = read_wav(m.audio_path(u)).unwrap();
            assert_eq!(classify_gender(&w), u.gender, "{} at {:.1} Hz", u.id, modulation_rate_hz(&w));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            ToyCorpusSpec { alphabet: "aA".into(), ..Default::default() },
            ToyCorpusSpec { alphabet: "  ".into(), ..Default::default() },
            ToyCorpusSpec { alphabet: " ".into(), ..Default::default() },
            ToyCorpusSpec { min_len: 5, max_len: 4, ..Default::default() },
            ToyCorpusSpec { speakers_per_gender: 0, ..Default::default() },
        ] {
            assert!(matches!(spec.validate(), Err(DataError::ToySpec(_))), "{spec:?}");
        }
    }
}
