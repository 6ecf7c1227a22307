//! Forced-choice survey bundles ("which one is genuine / fake?") and their
//! scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::binomial::binomial_p_value;
use crate::error::{Error, Result};
use crate::image::GlyphImage;
use crate::rng::SeedStream;

/// Question type 1: one genuine image among generated ones.
pub const FIND_GENUINE: u8 = 1;
/// Question type 2: one generated image among genuine ones.
pub const FIND_FAKE: u8 = 2;

/// Published accuracies per question type, shown for context only.
pub const REFERENCE_TYPE_ACCURACY: [(u8, f64); 2] = [(FIND_GENUINE, 0.24), (FIND_FAKE, 0.06)];

#[derive(Debug, Clone, PartialEq)]
pub struct PoolImage {
    pub id: String,
    pub image: GlyphImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    pub question_type: u8,
    pub prompt: String,
    /// Option image paths relative to the bundle directory, in display order.
    pub options: Vec<String>,
}

/// What respondents see. Holds the option images until written out.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyBundle {
    pub k: usize,
    pub questions: Vec<SurveyQuestion>,
    pub images: Vec<(String, GlyphImage)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSource {
    /// `"real"` or `"generated"`.
    pub kind: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub id: String,
    pub question_type: u8,
    pub correct: usize,
    pub provenance: Vec<OptionSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub k: usize,
    pub seed: u64,
    pub entries: Vec<KeyEntry>,
}

pub fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

fn check_pool(pool: &[PoolImage], name: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for p in pool {
        if !seen.insert(&p.id) {
            return Err(Error::Survey(format!("duplicate id {:?} in the {name} pool", p.id)));
        }
    }
    Ok(())
}

/// Builds `n_per_type` questions of each type with `k` options, drawing
/// without repetition inside a question.
pub fn make_survey(
    real: &[PoolImage],
    generated: &[PoolImage],
    n_per_type: usize,
    k: usize,
    seed: u64,
) -> Result<(SurveyBundle, AnswerKey)> {
    if !(2..=26).contains(&k) {
        return Err(Error::Survey(format!("option count {k} outside 2..=26")));
    }
    check_pool(real, "real")?;
    check_pool(generated, "generated")?;
    if n_per_type > 0 && (real.len() < k - 1 || generated.len() < k - 1 || real.is_empty() || generated.is_empty()) {
        return Err(Error::Survey(format!(
            "pools of {} real and {} generated images are too small for {k} options",
            real.len(),
            generated.len()
        )));
    }
    let stream = SeedStream::new(seed);
    let mut bundle = SurveyBundle {
        k,
        questions: Vec::new(),
        images: Vec::new(),
    };
    let mut key = AnswerKey {
        k,
        seed,
        entries: Vec::new(),
    };
    for (question_type, odd, rest) in [(FIND_GENUINE, real, generated), (FIND_FAKE, generated, real)] {
        for _ in 0..n_per_type {
            let id = format!("q{:03}", bundle.questions.len() + 1);
            let mut rng = stream.rng("question", bundle.questions.len() as u64);
            let odd_one = odd.choose(&mut rng).expect("non-empty pool");
            let mut options: Vec<(bool, &PoolImage)> = rest
                .iter()
                .choose_multiple(&mut rng, k - 1)
                .into_iter()
                .map(|p| (false, p))
                .collect();
            options.push((true, odd_one));
            options.shuffle(&mut rng);
            let correct = options.iter().position(|(odd, _)| *odd).expect("inserted");
            let real_kind = |is_odd: bool| (question_type == FIND_GENUINE) == is_odd;
            let mut paths = Vec::with_capacity(k);
            for (i, (_, img)) in options.iter().enumerate() {
                let path = format!("{id}/{}.png", option_letter(i));
                bundle.images.push((path.clone(), img.image.clone()));
                paths.push(path);
            }
            bundle.questions.push(SurveyQuestion {
                id: id.clone(),
                question_type,
                prompt: if question_type == FIND_GENUINE {
                    "Which one is the genuine calligraphy?".into()
                } else {
                    "Which one is the fake calligraphy?".into()
                },
                options: paths,
            });
            key.entries.push(KeyEntry {
                id,
                question_type,
                correct,
                provenance: options
                    .iter()
                    .map(|(is_odd, img)| OptionSource {
                        kind: if real_kind(*is_odd) { "real" } else { "generated" }.into(),
                        source: img.id.clone(),
                    })
                    .collect(),
            });
        }
    }
    Ok((bundle, key))
}

/// Writes option PNGs and `questions.json` (no answers) under `dir`.
pub fn write_bundle(bundle: &SurveyBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (rel, image) in &bundle.images {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        image.save_png(&path)?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = serde_json::json!({ "k": bundle.k, "questions": bundle.questions });
    let path = dir.join("questions.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?).map_err(|e| Error::io(path, e))
}

pub fn save_key(key: &AnswerKey, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec_pretty(key)?).map_err(|e| Error::io(path, e))
}

pub fn load_key(path: impl AsRef<Path>) -> Result<AnswerKey> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub question_id: String,
    /// Zero-based option index.
    pub choice: usize,
    pub respondent: Option<String>,
    pub group: Option<String>,
}

fn parse_choice(s: &str) -> Option<usize> {
    let s = s.trim();
    if let Ok(i) = s.parse::<usize>() {
        return Some(i);
    }
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some((c.to_ascii_uppercase() as u8 - b'A') as usize),
        _ => None,
    }
}

/// Parses `question_id,choice[,respondent[,group]]` lines. `choice` is an
/// option letter or a zero-based index. A header line starting with
/// `question_id` and blank lines are skipped.
pub fn parse_responses(csv: &str) -> Result<Vec<Response>> {
    let mut out = Vec::new();
    for (n, line) in csv.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("question_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(Error::Survey(format!("line {}: expected 2 to 4 fields", n + 1)));
        }
        let choice =
            parse_choice(fields[1]).ok_or_else(|| Error::Survey(format!("line {}: bad choice {:?}", n + 1, fields[1])))?;
        let opt = |i: usize| fields.get(i).filter(|s| !s.is_empty()).map(|s| s.to_string());
        out.push(Response {
            question_id: fields[0].to_string(),
            choice,
            respondent: opt(2),
            group: opt(3),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub label: String,
    pub answered: usize,
    pub correct: usize,
    /// `None` when nothing was answered.
    pub accuracy: Option<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub answered: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyScore {
    pub k: usize,
    pub per_type: Vec<TypeScore>,
    pub total: TypeScore,
    pub groups: Vec<GroupScore>,
}

fn type_score(label: String, answered: usize, correct: usize, k: usize) -> TypeScore {
    TypeScore {
        label,
        answered,
        correct,
        accuracy: (answered > 0).then(|| correct as f64 / answered as f64),
        p_value: binomial_p_value(answered as u64, correct as u64, k as u64),
    }
}

/// Accuracy and exact two-sided binomial p-values against chance `1/k`.
pub fn score_survey(key: &AnswerKey, responses: &[Response]) -> Result<SurveyScore> {
    let entries: BTreeMap<&str, &KeyEntry> = key.entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut seen = HashSet::new();
    let mut tallies: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in responses {
        let entry = entries
            .get(r.question_id.as_str())
            .ok_or_else(|| Error::Survey(format!("unknown question id {:?}", r.question_id)))?;
        if !seen.insert((r.respondent.clone(), r.question_id.clone())) {
            return Err(Error::Survey(format!(
                "duplicate response to {:?}{}",
                r.question_id,
                r.respondent.as_ref().map(|p| format!(" from {p}")).unwrap_or_default()
            )));
        }
        if r.choice >= key.k {
            return Err(Error::Survey(format!(
                "choice {} out of range for {:?}",
                r.choice, r.question_id
            )));
        }
        let hit = usize::from(r.choice == entry.correct);
        let t = tallies.entry(entry.question_type).or_default();
        t.0 += 1;
        t.1 += hit;
        if let Some(g) = &r.group {
            let t = groups.entry(g.clone()).or_default();
            t.0 += 1;
            t.1 += hit;
        }
    }
    let mut types: Vec<u8> = key.entries.iter().map(|e| e.question_type).collect();
    types.sort_unstable();
    types.dedup();
    let per_type = types
        .iter()
        .map(|t| {
            let (a, c) = tallies.get(t).copied().unwrap_or_default();
            type_score(format!("Type {t}"), a, c, key.k)
        })
        .collect();
    let (answered, correct) = tallies.values().fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(SurveyScore {
        k: key.k,
        per_type,
        total: type_score("Total".into(), answered, correct, key.k),
        groups: groups
            .into_iter()
            .map(|(group, (answered, correct))| GroupScore {
                group,
                answered,
                correct,
                accuracy: (answered > 0).then(|| correct as f64 / answered as f64),
            })
            .collect(),
    })
}

impl SurveyScore {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10}{:>10}{:>10}{:>10}{:>14}",
            "", "answered", "correct", "accuracy", "p-value"
        );
        for s in self.per_type.iter().chain([&self.total]) {
            let acc = s.accuracy.map_or("-".to_string(), |a| format!("{a:.3}"));
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>10}{:>10}{:>14.4e}",
                s.label, s.answered, s.correct, acc, s.p_value
            );
        }
        for g in &self.groups {
            let acc = g.accuracy.map_or("-".to_string(), |a| format!("{a:.3}"));
            let _ = writeln!(out, "group {:<20}{:>10}{:>10}{:>10}", g.group, g.answered, g.correct, acc);
        }
        let _ = writeln!(
            out,
            "\nChance level 1/{} = {:.3}; two-sided exact binomial test.",
            self.k,
            1.0 / self.k as f64
        );
        let refs: Vec<String> = REFERENCE_TYPE_ACCURACY
            .iter()
            .map(|(t, a)| format!("type {t} {a:.2}"))
            .collect();
        let _ = writeln!(out, "Reference (published panel, not comparable): {}.", refs.join(", "));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PixelRange;
    use proptest::prelude::*;

    fn pool(prefix: &str, n: usize) -> Vec<PoolImage> {
        (0..n)
            .map(|i| PoolImage {
                id: format!("{prefix}{i}"),
                image: GlyphImage::filled(4, 4, PixelRange::Model, i as f32 / n as f32).unwrap(),
            })
            .collect()
    }

    #[test]
    fn empty_survey_is_valid() {
        let (bundle, key) = make_survey(&[], &[], 0, 4, 1).unwrap();
        assert!(bundle.questions.is_empty() && key.entries.is_empty());
    }

    #[test]
    fn small_pools_are_rejected() {
        assert!(make_survey(&pool("r", 5), &pool("g", 2), 1, 4, 0).is_err());
        assert!(make_survey(&pool("r", 5), &pool("g", 5), 1, 1, 0).is_err());
    }

    #[test]
    fn bundle_and_key_are_written_separately() {
        let (bundle, key) = make_survey(&pool("r", 6), &pool("g", 6), 2, 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&bundle, dir.path().join("bundle")).unwrap();
        save_key(&key, dir.path().join("key.json")).unwrap();
        let questions = std::fs::read_to_string(dir.path().join("bundle/questions.json")).unwrap();
        assert!(!questions.contains("correct") && !questions.contains("provenance"));
        assert!(dir.path().join("bundle/q004/D.png").exists());
        assert_eq!(load_key(dir.path().join("key.json")).unwrap(), key);
    }

    #[test]
    fn scoring_counts_and_p_values() {
        let (_, key) = make_survey(&pool("r", 12), &pool("g", 12), 5, 4, 9).unwrap();
        let responses: Vec<Response> = key
            .entries
            .iter()
            .map(|e| Response {
                question_id: e.id.clone(),
                choice: e.correct,
                respondent: None,
                group: Some("expert".into()),
            })
            .collect();
        let score = score_survey(&key, &responses).unwrap();
        assert_eq!(score.total.accuracy, Some(1.0));
        assert_eq!(score.total.p_value, 9.536_743_164_062_5e-7);
        assert_eq!(score.per_type.len(), 2);
        assert_eq!(score.groups[0].answered, 10);
        let mut dup = responses.clone();
        dup.push(responses[0].clone());
        assert!(score_survey(&key, &dup).is_err());
        let unknown = vec![Response {
            question_id: "q999".into(),
            choice: 0,
            respondent: None,
            group: None,
        }];
        assert!(score_survey(&key, &unknown).is_err());
    }

    #[test]
    fn csv_parsing() {
        let r = parse_responses("question_id,choice,respondent,group\nq001,B\nq002,3,alice,novice\n\n").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].choice, 1);
        assert_eq!(r[1].choice, 3);
        assert_eq!(r[1].group.as_deref(), Some("novice"));
        assert!(parse_responses("q001").is_err());
        assert!(parse_responses("q001,??").is_err());
    }

    proptest! {
        #[test]
        fn questions_have_one_odd_option(seed in any::<u64>(), n in 0usize..5, k in 2usize..6) {
            let real = pool("r", 8);
            let generated = pool("g", 8);
            let (bundle, key) = make_survey(&real, &generated, n, k, seed).unwrap();
            prop_assert_eq!(&make_survey(&real, &generated, n, k, seed).unwrap().1, &key);
            prop_assert_eq!(bundle.questions.len(), 2 * n);
            for (q, e) in bundle.questions.iter().zip(&key.entries) {
                prop_assert_eq!(q.options.len(), k);
                let reals = e.provenance.iter().filter(|p| p.kind == "real").count();
                let want = if e.question_type == FIND_GENUINE { 1 } else { k - 1 };
                prop_assert_eq!(reals, want);
                let odd_kind = if e.question_type == FIND_GENUINE { "real" } else { "generated" };
                prop_assert_eq!(&e.provenance[e.correct].kind, odd_kind);
                let ids: HashSet<_> = e.provenance.iter().map(|p| &p.source).collect();
                prop_assert_eq!(ids.len(), k);
            }
        }
    }
}
