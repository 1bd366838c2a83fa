//! Edit distance, corpus-pooled WER/CER and reports grouped by gender,
//! speaker or accent.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Manifest;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("error rate undefined: references contain no tokens")]
    EmptyReference,
    #[error("no pairs to score")]
    NoPairs,
    #[error("utterance id {0:?} not found in manifest")]
    UnknownId(String),
    #[error("report contract violation: {0}")]
    Contract(String),
    #[error("report JSON: {0}")]
    Json(String),
}

/// Substitution, deletion and insertion counts over `ref_len` reference
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "N")]
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn rate(&self) -> Result<f64, EvalError> {
        if self.ref_len == 0 {
            return Err(EvalError::EmptyReference);
        }
        Ok(self.errors() as f64 / self.ref_len as f64)
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.ref_len += o.ref_len;
    }
}

/// Unit-cost Levenshtein alignment. When several alignments are optimal the
/// backtrace prefers substitution (or match), then insertion, then
/// deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> ErrorCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = sub.min(d[i * w + j - 1] + 1).min(d[(i - 1) * w + j] + 1);
        }
    }
    let mut c = ErrorCounts { ref_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(reference[i - 1] != hyp[j - 1]);
            if d[(i - 1) * w + j - 1] + mismatch == here {
                c.substitutions += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            c.insertions += 1;
            j -= 1;
        } else {
            c.deletions += 1;
            i -= 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    #[default]
    Word,
    Char,
}

impl std::str::FromStr for Tokenization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Self::Word),
            "char" => Ok(Self::Char),
            other => Err(format!("unknown tokenization {other:?} (word|char)")),
        }
    }
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokenize(text: &str, tok: Tokenization) -> Vec<String> {
    let norm = normalize(text);
    match tok {
        Tokenization::Word => norm.split(' ').filter(|s| !s.is_empty()).map(String::from).collect(),
        Tokenization::Char => norm.chars().map(String::from).collect(),
    }
}

/// Corpus-pooled error rate: total edits over total reference tokens.
pub fn error_rate<R: AsRef<str>, H: AsRef<str>>(
    pairs: &[(R, H)],
    tok: Tokenization,
) -> Result<(f64, ErrorCounts), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let mut total = ErrorCounts::default();
    for (r, h) in pairs {
        total += edit_distance(&tokenize(r.as_ref(), tok), &tokenize(h.as_ref(), tok));
    }
    Ok((total.rate()?, total))
}

pub fn wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<(f64, ErrorCounts), EvalError> {
    error_rate(pairs, Tokenization::Word)
}

/// Character error rate; spaces count as tokens.
pub fn cer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<(f64, ErrorCounts), EvalError> {
    error_rate(pairs, Tokenization::Char)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupDimension {
    Gender,
    Speaker,
    Accent,
}

impl std::str::FromStr for GroupDimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gender" => Ok(Self::Gender),
            "speaker" => Ok(Self::Speaker),
            "accent" => Ok(Self::Accent),
            other => Err(format!("unknown group dimension {other:?} (gender|speaker|accent)")),
        }
    }
}

/// Group key for utterances without an accent tag.
pub const NO_ACCENT: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    #[serde(flatten)]
    pub counts: ErrorCounts,
    pub rate: f64,
}

impl GroupScore {
    fn from_counts(counts: ErrorCounts) -> Result<Self, EvalError> {
        Ok(Self { counts, rate: counts.rate()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub model: String,
    pub dimension: GroupDimension,
    pub tokenization: Tokenization,
    pub overall: GroupScore,
    pub groups: BTreeMap<String, GroupScore>,
}

/// Scores `(utterance id, hypothesis)` pairs against manifest transcripts,
/// pooled overall and per group.
pub fn grouped_report(
    model: &str,
    hyps: &[(String, String)],
    manifest: &Manifest,
    dimension: GroupDimension,
    tok: Tokenization,
) -> Result<WerReport, EvalError> {
    if hyps.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let mut overall = ErrorCounts::default();
    let mut groups: BTreeMap<String, ErrorCounts> = BTreeMap::new();
    for (id, hyp) in hyps {
        let u = manifest.get(id).ok_or_else(|| EvalError::UnknownId(id.clone()))?;
        let c = edit_distance(&tokenize(&u.text, tok), &tokenize(hyp, tok));
        overall += c;
        let key = match dimension {
            GroupDimension::Gender => u.gender.to_string(),
            GroupDimension::Speaker => u.speaker.clone(),
            GroupDimension::Accent => u.accent.clone().unwrap_or_else(|| NO_ACCENT.into()),
        };
        *groups.entry(key).or_default() += c;
    }
    Ok(WerReport {
        model: model.into(),
        dimension,
        tokenization: tok,
        overall: GroupScore::from_counts(overall)?,
        groups: groups
            .into_iter()
            .map(|(k, c)| Ok((k, GroupScore::from_counts(c)?)))
            .collect::<Result<_, EvalError>>()?,
    })
}

fn column_order(dimension: GroupDimension, keys: impl Iterator<Item = String>) -> Vec<String> {
    let mut keys: Vec<String> = keys.collect();
    keys.sort();
    keys.dedup();
    if dimension == GroupDimension::Gender {
        // M before F, as in the usual M / F / Full layout.
        keys.sort_by_key(|k| (k != "M", k.clone()));
    }
    keys
}

/// Plain-text table: one row per model, one column per group plus `Full`,
/// rates in percent with one decimal. Groups a model lacks show `-`.
pub fn render_table(reports: &[WerReport]) -> Result<String, EvalError> {
    let Some(first) = reports.first() else {
        return Err(EvalError::Contract("no reports to render".into()));
    };
    if reports.iter().any(|r| r.dimension != first.dimension || r.tokenization != first.tokenization) {
        return Err(EvalError::Contract("reports mix group dimensions or tokenizations".into()));
    }
    let mut cols = column_order(first.dimension, reports.iter().flat_map(|r| r.groups.keys().cloned()));
    cols.push("Full".into());
    let pct = |s: Option<&GroupScore>| s.map_or_else(|| "-".to_string(), |s| format!("{:.1}", 100.0 * s.rate));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.model.clone()];
            row.extend(cols[..cols.len() - 1].iter().map(|c| pct(r.groups.get(c))));
            row.push(pct(Some(&r.overall)));
            row
        })
        .collect();
    let header: Vec<String> = std::iter::once("model".to_string()).chain(cols).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (cell, w) in row[1..].iter().zip(&widths[1..]) {
            write!(line, "  {cell:>w$}").expect("writing to a String");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out)
}

pub fn reports_to_json(reports: &[WerReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialise")
}

pub fn reports_from_json(s: &str) -> Result<Vec<WerReport>, EvalError> {
    serde_json::from_str(s).map_err(|e| EvalError::Json(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Gender, Utterance};
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    /// Minimum edit cost by exhaustive recursion over all alignments.
    fn exhaustive(r: &[u8], h: &[u8]) -> usize {
        match (r.split_first(), h.split_first()) {
            (None, _) => h.len(),
            (_, None) => r.len(),
            (Some((a, rr)), Some((b, hh))) => {
                let sub = exhaustive(rr, hh) + usize::from(a != b);
                sub.min(exhaustive(r, hh) + 1).min(exhaustive(rr, h) + 1)
            }
        }
    }

    fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            frontier = frontier
                .iter()
                .flat_map(|s: &Vec<u8>| (0..3u8).map(move |c| [s.as_slice(), &[c]].concat()))
                .collect();
            out.extend(frontier.iter().cloned());
        }
        out
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let all = all_strings(4);
        assert_eq!(all.len(), 121);
        for r in &all {
            for h in &all {
                let c = edit_distance(r, h);
                assert_eq!(c.errors(), exhaustive(r, h), "{r:?} {h:?}");
                assert_eq!(c.ref_len, r.len());
                assert!(c.substitutions + c.deletions <= c.ref_len);
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&chars("abc"), &chars("abc")), ErrorCounts { ref_len: 3, ..Default::default() });
        assert_eq!(edit_distance(&chars("kitten"), &chars("sitting")).errors(), 3);
        let c = edit_distance(&chars(""), &chars("xyz"));
        assert_eq!((c.insertions, c.ref_len), (3, 0));
        // "ab" vs "ba": S,S preferred over I+D.
        let c = edit_distance(&chars("ab"), &chars("ba"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (2, 0, 0));
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&[("a b", "a b")]).unwrap().0, 0.0);
        assert!((wer(&[("a b c", "a x c")]).unwrap().0 - 1.0 / 3.0).abs() < 1e-15);
        let pooled = wer(&[("a", "b"), ("a b c d e f g h i", "a b c d e f g h i")]).unwrap();
        assert_eq!(pooled.0, 0.1);
        assert_eq!(wer(&[("A  B", "a b")]).unwrap().0, 0.0);
        assert_eq!(wer(&[("", "x")]), Err(EvalError::EmptyReference));
        assert_eq!(wer::<&str, &str>(&[]), Err(EvalError::NoPairs));
        let (rate, c) = cer(&[("ab c", "ab")]).unwrap();
        assert_eq!((c.deletions, c.ref_len), (2, 4));
        assert_eq!(rate, 0.5);
    }

    fn fixture() -> Manifest {
        let u = |id: &str, spk: &str, g, text: &str, accent: Option<&str>| Utterance {
            id: id.into(),
            audio: String::new(),
            text: text.into(),
            speaker: spk.into(),
            gender: g,
            accent: accent.map(String::from),
        };
        Manifest::new(
            "fixture",
            "",
            vec![
                u("m1", "a", Gender::M, "the cat sat", Some("zh")),
                u("m2", "b", Gender::M, "on the mat", None),
                u("f1", "c", Gender::F, "a dog ran far away", Some("zh")),
                u("f2", "d", Gender::F, "hello", None),
            ],
        )
        .unwrap()
    }

    fn hyps() -> Vec<(String, String)> {
        [("m1", "the bat sat"), ("m2", "on the mat"), ("f1", "a dog ran away"), ("f2", "hello there")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn grouped_fixture_by_hand() {
        let r = grouped_report("base", &hyps(), &fixture(), GroupDimension::Gender, Tokenization::Word).unwrap();
        // M: 1 sub over 6 words. F: 1 del + 1 ins over 6 words.
        assert_eq!(r.groups["M"].counts, ErrorCounts { substitutions: 1, deletions: 0, insertions: 0, ref_len: 6 });
        assert_eq!(r.groups["F"].counts, ErrorCounts { substitutions: 0, deletions: 1, insertions: 1, ref_len: 6 });
        assert!((r.groups["M"].rate - 1.0 / 6.0).abs() < 1e-15);
        assert!((r.groups["F"].rate - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.overall.rate, 0.25);
        let mut sum = ErrorCounts::default();
        for g in r.groups.values() {
            sum += g.counts;
        }
        assert_eq!(sum, r.overall.counts);

        let male: Vec<_> = hyps().into_iter().filter(|(id, _)| id.starts_with('m')).collect();
        let r = grouped_report("base", &male, &fixture(), GroupDimension::Gender, Tokenization::Word).unwrap();
        assert_eq!(r.overall.rate, r.groups["M"].rate);
        assert!(!r.groups.contains_key("F"));

        let acc = grouped_report("base", &hyps(), &fixture(), GroupDimension::Accent, Tokenization::Word).unwrap();
        assert_eq!(acc.groups.keys().collect::<Vec<_>>(), ["none", "zh"]);

        let bad = vec![("zz".to_string(), "x".to_string())];
        assert_eq!(
            grouped_report("base", &bad, &fixture(), GroupDimension::Gender, Tokenization::Word),
            Err(EvalError::UnknownId("zz".into()))
        );
    }

    #[test]
    fn table_rendering() {
        let r = grouped_report("base", &hyps(), &fixture(), GroupDimension::Gender, Tokenization::Word).unwrap();
        let mut tuned = r.clone();
        tuned.model = "finetuned-male".into();
        tuned.groups.get_mut("M").unwrap().rate = 0.191;
        let table = render_table(&[r.clone(), tuned]).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["model", "M", "F", "Full"]);
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["base", "16.7", "33.3", "25.0"]);
        assert!(lines[2].contains("19.1"));

        let reports = vec![r.clone()];
        let back = reports_from_json(&reports_to_json(&reports)).unwrap();
        assert_eq!(render_table(&back).unwrap(), render_table(&reports).unwrap());

        let mut one = r.clone();
        one.groups.remove("F");
        let t = render_table(&[one]).unwrap();
        assert_eq!(t.lines().count(), 2);
        assert_eq!(t.lines().next().unwrap().split_whitespace().count(), 3);

        let mut other = r;
        other.dimension = GroupDimension::Speaker;
        assert!(matches!(render_table(&[reports[0].clone(), other]), Err(EvalError::Contract(_))));
    }

    #[test]
    fn report_json_shape() {
        let r = grouped_report("base", &hyps(), &fixture(), GroupDimension::Gender, Tokenization::Word).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["model"], "base");
        assert_eq!(v["dimension"], "gender");
        assert_eq!(v["overall"]["N"], 12);
        assert_eq!(v["groups"]["M"]["S"], 1);
        assert_eq!(v["overall"]["rate"], 0.25);
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_counts_balance_lengths(
            a in proptest::collection::vec(0u8..3, 0..7),
            b in proptest::collection::vec(0u8..3, 0..7),
        ) {
            let ab = edit_distance(&a, &b);
            let ba = edit_distance(&b, &a);
            prop_assert_eq!(ab.errors(), ba.errors());
            // tied alignments may split the total differently per direction
            for (c, r, h) in [(ab, &a, &b), (ba, &b, &a)] {
                prop_assert_eq!(c.insertions as i64 - c.deletions as i64, h.len() as i64 - r.len() as i64);
            }
        }

        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
            c in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let d = |x: &[u8], y: &[u8]| edit_distance(x, y).errors();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }
    }
}
