//! Corpus manifests with gender metadata, splits, the character vocabulary,
//! x-vector lookup and the synthetic gendered toy corpus.

mod prepare;
mod toy;
mod xvector;

pub use prepare::{prepare_examples, FeatureSpec, PrepareOptions};
pub use toy::{classify_gender, modulation_rate_hz, synth_toy_corpus, ToyCorpusSpec};
pub use xvector::XVectorStore;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ctc::{CtcError, LabelSequence};
use crate::features::FeatureError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("x-vector lookup failed for speaker {speaker}: {detail}")]
    XVectorLookup { speaker: String, detail: String },
    #[error("x-vector format error in {path}: {detail}")]
    XVectorFormat { path: String, detail: String },
    #[error("invalid toy corpus spec: {0}")]
    ToySpec(String),
    #[error("utterance {id}: {source}")]
    Features { id: String, source: FeatureError },
    #[error(transparent)]
    Label(#[from] CtcError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

impl std::str::FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" | "m" => Ok(Gender::M),
            "F" | "f" => Ok(Gender::F),
            other => Err(format!("unknown gender {other:?} (M|F)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub audio: String,
    pub text: String,
    pub speaker: String,
    pub gender: Gender,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accent: Option<String>,
}

/// Ordered, id-unique list of utterances. Relative audio paths resolve
/// against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub source: String,
    pub root: PathBuf,
    utterances: Vec<Utterance>,
}

impl Manifest {
    pub fn new(source: impl Into<String>, root: impl Into<PathBuf>, utterances: Vec<Utterance>) -> Result<Self, DataError> {
        let source = source.into();
        let mut seen = HashSet::new();
        for (i, u) in utterances.iter().enumerate() {
            validate_utterance(u).map_err(|message| DataError::Manifest {
                path: source.clone(),
                line: i + 1,
                message,
            })?;
            if !seen.insert(u.id.as_str()) {
                return Err(DataError::Manifest {
                    path: source.clone(),
                    line: i + 1,
                    message: format!("duplicate id {:?}", u.id),
                });
            }
        }
        Ok(Self { source, root: root.into(), utterances })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn audio_path(&self, u: &Utterance) -> PathBuf {
        let p = Path::new(&u.audio);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn derived(&self, utterances: Vec<Utterance>) -> Self {
        Self { source: self.source.clone(), root: self.root.clone(), utterances }
    }

    /// SHA-256 over the canonical JSON lines, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.utterances {
            h.update(serde_json::to_vec(u).expect("utterance serialises"));
            h.update(b"\n");
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn validate_utterance(u: &Utterance) -> Result<(), String> {
    if u.id.is_empty() {
        return Err("empty id".into());
    }
    if u.text.trim().is_empty() {
        return Err(format!("utterance {:?} has an empty transcript", u.id));
    }
    if u.speaker.is_empty() {
        return Err(format!("utterance {:?} has an empty speaker", u.id));
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut utterances = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Manifest { path: shown.clone(), line: line_no, message };
        let u: Utterance = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        validate_utterance(&u).map_err(err)?;
        if let Some(first) = seen.insert(u.id.clone(), line_no) {
            return Err(err(format!("duplicate id {:?} (first on line {first})", u.id)));
        }
        utterances.push(u);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Manifest { source, root, utterances })
}

pub fn write_manifest(path: impl AsRef<Path>, m: &Manifest) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for u in m.utterances() {
        serde_json::to_writer(&mut w, u).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn filter_gender(m: &Manifest, g: Gender) -> Manifest {
    m.derived(m.utterances.iter().filter(|u| u.gender == g).cloned().collect())
}

/// Per-speaker stratified split: each speaker contributes
/// `floor(ratio · n)` utterances (a seeded shuffle picks which) to train and
/// the rest to dev. A speaker with a single utterance goes to train.
/// Both halves keep manifest order.
pub fn split_train_dev(m: &Manifest, ratio: f64, seed: u64) -> Result<(Manifest, Manifest), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    let mut by_speaker: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, u) in m.utterances.iter().enumerate() {
        match by_speaker.iter_mut().find(|(s, _)| *s == u.speaker) {
            Some((_, idx)) => idx.push(i),
            None => by_speaker.push((&u.speaker, vec![i])),
        }
    }
    let mut in_train = vec![false; m.len()];
    for (speaker, mut idx) in by_speaker {
        if idx.len() == 1 {
            log::warn!("speaker {speaker} has a single utterance; assigning it to train");
            in_train[idx[0]] = true;
            continue;
        }
        let n_train = (ratio * idx.len() as f64 + 1e-9).floor() as usize;
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(speaker.as_bytes());
        idx.shuffle(&mut ChaCha8Rng::from_seed(h.finalize().into()));
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, dev): (Vec<_>, Vec<_>) = m.utterances.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        m.derived(train.into_iter().map(|(u, _)| u).collect()),
        m.derived(dev.into_iter().map(|(u, _)| u).collect()),
    ))
}

pub const BLANK_SYMBOL: &str = "<blank>";
pub const SOS_EOS_SYMBOL: &str = "<sos/eos>";

/// Symbol table: 0 = blank, 1 = sos/eos, then characters in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self, DataError> {
        let set: BTreeSet<char> = chars.into_iter().collect();
        if set.is_empty() {
            return Err(DataError::Vocab("no characters".into()));
        }
        Ok(Self { chars: set.into_iter().collect() })
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> Vec<String> {
        let mut out = vec![BLANK_SYMBOL.to_string(), SOS_EOS_SYMBOL.to_string()];
        out.extend(self.chars.iter().map(|c| c.to_string()));
        out
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.chars.binary_search(&c).ok().map(|i| i + 2)
    }

    pub fn symbol(&self, id: usize) -> Option<String> {
        match id {
            0 => Some(BLANK_SYMBOL.into()),
            1 => Some(SOS_EOS_SYMBOL.into()),
            i => self.chars.get(i - 2).map(|c| c.to_string()),
        }
    }

    /// Lowercases `text` and maps each character to its id.
    pub fn encode(&self, text: &str) -> Result<LabelSequence, DataError> {
        let ids = text
            .to_lowercase()
            .chars()
            .map(|c| self.id(c).ok_or_else(|| DataError::Vocab(format!("character {c:?} not in vocabulary"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabelSequence::new(ids, self.len())?)
    }

    /// Inverse of `encode`; blank and sos/eos ids are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter(|&&i| i >= 2).filter_map(|&i| self.chars.get(i - 2)).collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(symbols: Vec<String>) -> Result<Self, Self::Error> {
        if symbols.len() < 3 || symbols[0] != BLANK_SYMBOL || symbols[1] != SOS_EOS_SYMBOL {
            return Err(format!("vocabulary must start with {BLANK_SYMBOL}, {SOS_EOS_SYMBOL}"));
        }
        let mut chars = Vec::with_capacity(symbols.len() - 2);
        for s in &symbols[2..] {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(format!("vocabulary symbol {s:?} is not a single character")),
            }
        }
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err("vocabulary characters must be strictly sorted".into());
        }
        Ok(Self { chars })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.symbols()
    }
}

pub fn build_vocab(m: &Manifest) -> Result<Vocab, DataError> {
    if m.is_empty() {
        return Err(DataError::Vocab("cannot build a vocabulary from an empty manifest".into()));
    }
    Vocab::from_chars(m.utterances.iter().flat_map(|u| u.text.to_lowercase().chars().collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn utt(id: &str, speaker: &str, gender: Gender, text: &str) -> Utterance {
        Utterance {
            id: id.into(),
            audio: format!("{id}.wav"),
            text: text.into(),
            speaker: speaker.into(),
            gender,
            accent: None,
        }
    }

    fn manifest(us: Vec<Utterance>) -> Manifest {
        Manifest::new("test", "", us).unwrap()
    }

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        (dir, p)
    }

    fn line(id: &str, g: &str) -> String {
        format!(r#"{{"id":"{id}","audio":"a.wav","text":"ab","speaker":"s","gender":"{g}"}}"#)
    }

    #[test]
    fn load_manifest_cases() {
        let (_d, p) = write_lines(&[]);
        assert!(load_manifest(&p).unwrap().is_empty());

        let lines: Vec<String> = ["u1", "u2", "u3"].iter().map(|i| line(i, "M")).collect();
        let (_d, p) = write_lines(&lines.iter().map(String::as_str).collect::<Vec<_>>());
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.utterances().iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), ["u1", "u2", "u3"]);

        let mut lines: Vec<String> = (1..=6).map(|i| line(&format!("u{i}"), "F")).collect();
        lines.push(line("u3", "F"));
        let (_d, p) = write_lines(&lines.iter().map(String::as_str).collect::<Vec<_>>());
        match load_manifest(&p) {
            Err(DataError::Manifest { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_manifest_rejects_bad_fields() {
        let (_d, p) = write_lines(&[&line("u1", "M"), &line("u2", "X")]);
        assert!(matches!(load_manifest(&p), Err(DataError::Manifest { line: 2, .. })));
        let (_d, p) = write_lines(&[r#"{"id":"u1","audio":"a.wav","speaker":"s","gender":"M"}"#]);
        match load_manifest(&p) {
            Err(DataError::Manifest { line: 1, message, .. }) => assert!(message.contains("text"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_roundtrip_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut u = utt("a", "s", Gender::F, "hi");
        u.accent = Some("zh".into());
        let m = Manifest::new("x", dir.path(), vec![u, utt("b", "s", Gender::M, "yo")]).unwrap();
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &m).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.utterances(), m.utterances());
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(back.audio_path(&back.utterances()[0]), dir.path().join("a.wav"));
    }

    #[test]
    fn filter_gender_partitions() {
        let m = manifest(vec![
            utt("1", "a", Gender::M, "x"),
            utt("2", "b", Gender::F, "x"),
            utt("3", "c", Gender::M, "x"),
            utt("4", "d", Gender::F, "x"),
        ]);
        let male = filter_gender(&m, Gender::M);
        assert_eq!(male.utterances().iter().map(|u| u.id.as_str()).collect::<Vec<_>>(), ["1", "3"]);
        assert_eq!(male.len() + filter_gender(&m, Gender::F).len(), m.len());
        assert!(filter_gender(&male, Gender::F).is_empty());
    }

    #[test]
    fn split_ninety_ten() {
        let m = manifest((0..10).map(|i| utt(&i.to_string(), "s", Gender::M, "x")).collect());
        let (train, dev) = split_train_dev(&m, 0.9, 3).unwrap();
        assert_eq!((train.len(), dev.len()), (9, 1));
        assert_eq!(split_train_dev(&m, 0.9, 3).unwrap(), (train, dev));
        assert!(split_train_dev(&m, 1.0, 3).is_err());
    }

    #[test]
    fn single_utterance_speaker_goes_to_train() {
        let m = manifest(vec![utt("1", "lonely", Gender::F, "x")]);
        let (train, dev) = split_train_dev(&m, 0.9, 0).unwrap();
        assert_eq!((train.len(), dev.len()), (1, 0));
    }

    #[test]
    fn vocab_cases() {
        let m = manifest(vec![utt("1", "s", Gender::M, "ab"), utt("2", "s", Gender::M, "BA")]);
        let v = build_vocab(&m).unwrap();
        assert_eq!(v.symbols(), ["<blank>", "<sos/eos>", "a", "b"]);
        assert_eq!(v.len(), 4);
        let rev = manifest(m.utterances().iter().rev().cloned().collect());
        assert_eq!(build_vocab(&rev).unwrap(), v);
        assert_eq!(v.encode("Ab").unwrap().ids(), &[2, 3]);
        assert_eq!(v.decode(&[0, 2, 1, 3]), "ab");
        assert!(v.encode("c").is_err());
        assert!(build_vocab(&manifest(vec![])).is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["<blank>","<sos/eos>","b","a"]"#).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            sizes in proptest::collection::vec(1usize..12, 1..6),
            seed in any::<u64>(),
        ) {
            let mut us = Vec::new();
            for (s, n) in sizes.iter().enumerate() {
                for k in 0..*n {
                    us.push(utt(&format!("{s}-{k}"), &format!("spk{s}"), Gender::M, "x"));
                }
            }
            let m = manifest(us);
            let (train, dev) = split_train_dev(&m, 0.9, seed).unwrap();
            prop_assert_eq!(train.len() + dev.len(), m.len());
            let t: HashSet<_> = train.utterances().iter().map(|u| u.id.clone()).collect();
            prop_assert!(dev.utterances().iter().all(|u| !t.contains(&u.id)));
            for (s, n) in sizes.iter().enumerate() {
                let spk = format!("spk{s}");
                let got = train.utterances().iter().filter(|u| u.speaker == spk).count();
                let want = if *n == 1 { 1 } else { (0.9 * *n as f64 + 1e-9).floor() as usize };
                prop_assert_eq!(got, want);
            }
        }
    }
}
