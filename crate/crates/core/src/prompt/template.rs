use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const SECTIONS: [&str; 7] = [
    "patient",
    "conditions",
    "procedures",
    "medications",
    "cohort_preamble",
    "cohort",
    "trigger",
];

const BUNDLED: &str = include_str!("../../assets/prompt_template.txt");

/// Named sections with `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    sections: BTreeMap<String, String>,
}

impl Default for Template {
    fn default() -> Self {
        Self::parse(BUNDLED).expect("bundled template is valid")
    }
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if line.starts_with('#') {
                continue;
            }
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
                let name = trimmed[1..trimmed.len() - 1].to_string();
                if sections.contains_key(&name) {
                    return Err(Error::config(format!("template section [{name}] appears twice")));
                }
                sections.insert(name.clone(), String::new());
                current = Some(name);
                continue;
            }
            match &current {
                Some(name) => {
                    let body = sections.get_mut(name).expect("section exists");
                    if !body.is_empty() {
                        body.push('\n');
                    }
                    body.push_str(line);
                }
                None if trimmed.is_empty() => {}
                None => return Err(Error::config("template text before the first section")),
            }
        }
        for s in SECTIONS {
            if !sections.contains_key(s) {
                return Err(Error::config(format!("template is missing section [{s}]")));
            }
        }
        for body in sections.values_mut() {
            *body = body.trim_end().to_string();
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn section(&self, name: &str) -> &str {
        self.sections.get(name).map(String::as_str).unwrap_or("")
    }

    /// Substitutes `{key}` slots in one section. Unknown slots are left as-is.
    pub fn fill(&self, name: &str, values: &[(&str, &str)]) -> String {
        let body = self.section(name);
        let mut out = String::with_capacity(body.len() + 64);
        let mut rest = body;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            match after.find('}') {
                Some(end) => {
                    let key = &after[..end];
                    match values.iter().find(|(k, _)| *k == key) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push('{');
                            out.push_str(key);
                            out.push('}');
                        }
                    }
                    rest = &after[end + 1..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_has_all_sections() {
        let t = Template::default();
        for s in SECTIONS {
            assert!(!t.section(s).is_empty(), "{s}");
        }
        assert_eq!(t.fill("patient", &[("age", "5"), ("subject", "male patient")]),
            "There is a 5-year-old male patient who is admitted to the ICU.");
    }

    #[test]
    fn missing_section_rejected() {
        assert!(Template::parse("[patient]\nx\n").is_err());
    }
}
