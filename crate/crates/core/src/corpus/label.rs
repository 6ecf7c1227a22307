use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `(character, script, style)` condition, as ids into [`Vocabularies`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionLabel {
    pub character: usize,
    pub script: usize,
    pub style: usize,
}

impl ConditionLabel {
    pub fn new(character: usize, script: usize, style: usize) -> Self {
        Self {
            character,
            script,
            style,
        }
    }
}

/// Ordered, duplicate-free name lists for the three condition fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub character: Vec<String>,
    pub script: Vec<String>,
    pub style: Vec<String>,
}

impl Vocabularies {
    pub fn new(character: Vec<String>, script: Vec<String>, style: Vec<String>) -> Result<Self> {
        let v = Self {
            character,
            script,
            style,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, names) in self.fields() {
            if names.is_empty() {
                return Err(Error::InvalidConfig(format!("{field} vocabulary is empty")));
            }
            let mut sorted: Vec<&String> = names.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::InvalidConfig(format!("duplicate {field} name {:?}", w[0])));
            }
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, &Vec<String>); 3] {
        [
            ("character", &self.character),
            ("script", &self.script),
            ("style", &self.style),
        ]
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.character.len(), self.script.len(), self.style.len())
    }

    pub fn check(&self, label: &ConditionLabel) -> Result<()> {
        let ids = [label.character, label.script, label.style];
        for ((field, names), id) in self.fields().into_iter().zip(ids) {
            if id >= names.len() {
                return Err(Error::IdOutOfBounds {
                    field,
                    id,
                    size: names.len(),
                });
            }
        }
        Ok(())
    }

    /// Resolves vocabulary names to a label. The error names the first
    /// field that failed to resolve.
    pub fn resolve(&self, character: &str, script: &str, style: &str) -> Result<ConditionLabel> {
        let find = |field: &'static str, names: &[String], name: &str| {
            names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownName {
                field,
                name: name.to_string(),
            })
        };
        Ok(ConditionLabel {
            character: find("character", &self.character, character)?,
            script: find("script", &self.script, script)?,
            style: find("style", &self.style, style)?,
        })
    }

    pub fn names(&self, label: &ConditionLabel) -> Result<(&str, &str, &str)> {
        self.check(label)?;
        Ok((
            &self.character[label.character],
            &self.script[label.script],
            &self.style[label.style],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabularies {
        Vocabularies::new(
            vec!["山".into(), "水".into()],
            vec!["cursive".into(), "regular".into()],
            vec!["a".into()],
        )
        .unwrap()
    }

    #[test]
    fn resolve_names_offending_field() {
        let v = vocab();
        assert_eq!(v.resolve("水", "regular", "a").unwrap(), ConditionLabel::new(1, 1, 0));
        match v.resolve("水", "kaishu-typo", "a") {
            Err(Error::UnknownName { field, .. }) => assert_eq!(field, "script"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_out_of_bounds() {
        assert!(Vocabularies::new(vec!["a".into(), "a".into()], vec!["s".into()], vec!["t".into()]).is_err());
        assert!(vocab().check(&ConditionLabel::new(2, 0, 0)).is_err());
        assert!(vocab().check(&ConditionLabel::new(1, 1, 0)).is_ok());
    }
}
