//! Builds a two-type survey from real and "generated" glyphs, simulates a
//! respondent who always picks option A, and scores the answers.

use callipaint::corpus::{load_font, render_glyph, BUILTIN_CHARACTERS};
use callipaint::eval::{make_survey, option_letter, parse_responses, score_survey, write_bundle, PoolImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pool = |font: &str| -> Result<Vec<PoolImage>, Box<dyn std::error::Error>> {
        let font = load_font(&format!("builtin:{font}"))?;
        BUILTIN_CHARACTERS
            .chars()
            .take(8)
            .map(|c| {
                Ok(PoolImage {
                    id: format!("{}-{c}", font.name()),
                    image: render_glyph(c, &font, (32, 32))?,
                })
            })
            .collect()
    };
    // Stand-ins: one font plays "real", another plays "generated".
    let real = pool("liu-jian-mao-cao")?;
    let generated = pool("zhi-mang-xing")?;
    let (bundle, key) = make_survey(&real, &generated, 10, 4, 0)?;

    let dir = std::env::temp_dir().join("callipaint-survey");
    write_bundle(&bundle, &dir)?;
    println!("{} questions written to {}", bundle.questions.len(), dir.display());

    let csv: String = key
        .entries
        .iter()
        .map(|e| format!("{},{}\n", e.id, option_letter(0)))
        .collect();
    let score = score_survey(&key, &parse_responses(&csv)?)?;
    print!("{}", score.to_table());
    Ok(())
}
