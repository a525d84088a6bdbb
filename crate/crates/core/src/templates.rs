//! Instruction template banks and placeholder substitution.
//!
//! The bundled banks live in `resources/templates.txt`. The file format is one
//! template per line under `[bank]` headers; `#` starts a comment line and a
//! literal `\n` inside a template is a line break. A user-supplied file in the
//! same format can replace the bundled one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::model::Task;

const BUILTIN: &str = include_str!("../resources/templates.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("missing binding for {0}")]
    MissingBinding(String),
    #[error("substituted text still contains placeholder {0}")]
    Residual(String),
    #[error("line {line}: unknown bank `{name}`")]
    UnknownBank { line: usize, name: String },
    #[error("line {line}: template outside of any bank")]
    NoBank { line: usize },
    #[error("line {line}: placeholder {placeholder} not allowed in bank `{bank}`")]
    ForeignPlaceholder {
        line: usize,
        bank: String,
        placeholder: String,
    },
    #[error("bank `{0}` is missing or empty")]
    EmptyBank(String),
    #[error("cannot read template file: {0}")]
    Io(String),
}

/// Placeholder tokens that may appear in templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Placeholder {
    Object,
    Subject,
    Relation,
    Loc,
    Number,
    Category,
    Question,
    Options,
    /// A referring expression (grounding prompts).
    Expr,
}

impl Placeholder {
    pub const ALL: [Placeholder; 9] = [
        Placeholder::Object,
        Placeholder::Subject,
        Placeholder::Relation,
        Placeholder::Loc,
        Placeholder::Number,
        Placeholder::Category,
        Placeholder::Question,
        Placeholder::Options,
        Placeholder::Expr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Placeholder::Object => "object",
            Placeholder::Subject => "subject",
            Placeholder::Relation => "relation",
            Placeholder::Loc => "loc",
            Placeholder::Number => "number",
            Placeholder::Category => "category",
            Placeholder::Question => "question",
            Placeholder::Options => "options",
            Placeholder::Expr => "expr",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.name())
    }
}

/// A (task, variant) pair naming one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankKey {
    pub task: Task,
    pub variant: u8,
}

impl BankKey {
    pub const fn new(task: Task, variant: u8) -> Self {
        Self { task, variant }
    }

    /// Every bank the generators need, in file order.
    pub fn all() -> Vec<BankKey> {
        Task::ALL
            .into_iter()
            .flat_map(|t| t.variants().map(move |v| BankKey::new(t, v)))
            .collect()
    }

    pub fn name(&self) -> String {
        let base = match self.task {
            Task::MultichoiceVqa => "multichoice",
            t => t.as_str(),
        };
        if self.task.variants().count() > 1 {
            format!("{base}#{}", self.variant)
        } else {
            base.to_string()
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|k| k.name() == name)
    }

    /// Placeholders templates of this bank may use.
    pub fn allowed(&self) -> &'static [Placeholder] {
        use Placeholder::*;
        match (self.task, self.variant) {
            (Task::RelationQa, _) => &[Subject, Object],
            (Task::RelationDetect, _) => &[Relation, Subject],
            (Task::Spatial, _) => &[Loc, Object],
            (Task::Counting, 1) | (Task::Detection, 1) => &[Category],
            (Task::Counting, _) | (Task::Detection, _) => &[Object],
            (Task::Grounding, _) => &[Expr],
            (Task::GroundCaption, _) => &[Object],
            (Task::MultichoiceVqa, _) => &[Question, Options],
        }
    }
}

impl fmt::Display for BankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([A-Za-z_]+)>").expect("static regex"))
}

/// Placeholder names (without brackets) occurring in `template`, in order.
pub fn placeholders_in(template: &str) -> Vec<&str> {
    token_re()
        .captures_iter(template)
        .map(|c| c.get(1).map_or("", |m| m.as_str()))
        .collect()
}

/// Replace every `<name>` in `template` with `bindings[name]`.
///
/// Substitution is a single pass: bound values are inserted verbatim and are
/// not themselves scanned for placeholders.
pub fn instantiate_template(
    template: &str,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, TemplateError> {
    if let Some(missing) = placeholders_in(template)
        .into_iter()
        .find(|name| !bindings.contains_key(name))
    {
        return Err(TemplateError::MissingBinding(format!("<{missing}>")));
    }
    let out = token_re()
        .replace_all(template, |c: &regex::Captures| bindings[&c[1]].clone())
        .into_owned();
    if let Some(m) = token_re().find(&out) {
        return Err(TemplateError::Residual(m.as_str().to_string()));
    }
    Ok(out)
}

/// All instruction templates, grouped by bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    banks: BTreeMap<BankKey, Vec<String>>,
}

impl TemplateBank {
    /// The bank shipped with the crate.
    pub fn builtin() -> &'static TemplateBank {
        static BANK: OnceLock<TemplateBank> = OnceLock::new();
        BANK.get_or_init(|| TemplateBank::parse(BUILTIN).expect("bundled templates are valid"))
    }

    pub fn from_path(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut banks: BTreeMap<BankKey, Vec<String>> = BTreeMap::new();
        let mut current = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let key = BankKey::parse(name).ok_or_else(|| TemplateError::UnknownBank {
                    line: line_no,
                    name: name.to_string(),
                })?;
                banks.entry(key).or_default();
                current = Some(key);
                continue;
            }
            let key = current.ok_or(TemplateError::NoBank { line: line_no })?;
            let template = line.replace("\\n", "\n");
            for name in placeholders_in(&template) {
                let ok = Placeholder::from_name(name).is_some_and(|p| key.allowed().contains(&p));
                if !ok {
                    return Err(TemplateError::ForeignPlaceholder {
                        line: line_no,
                        bank: key.name(),
                        placeholder: format!("<{name}>"),
                    });
                }
            }
            banks.entry(key).or_default().push(template);
        }
        for key in BankKey::all() {
            if banks.get(&key).is_none_or(Vec::is_empty) {
                return Err(TemplateError::EmptyBank(key.name()));
            }
        }
        Ok(Self { banks })
    }

    pub fn templates(&self, key: BankKey) -> &[String] {
        self.banks.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn banks(&self) -> impl Iterator<Item = (BankKey, &[String])> {
        self.banks.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn instantiate_examples() {
        assert_eq!(
            instantiate_template("Count <category>.", &b(&[("category", "dogs")])).unwrap(),
            "Count dogs."
        );
        assert_eq!(
            instantiate_template("No placeholders here.", &b(&[])).unwrap(),
            "No placeholders here."
        );
        assert_eq!(
            instantiate_template("Objects at <loc> of <object>.", &b(&[("object", "[0.1]")])),
            Err(TemplateError::MissingBinding("<loc>".into()))
        );
    }

    #[test]
    fn residual_value_is_an_error() {
        let err = instantiate_template("Q: <question>", &b(&[("question", "what is <x>?")]));
        assert_eq!(err, Err(TemplateError::Residual("<x>".into())));
    }

    #[test]
    fn builtin_bank_sizes() {
        let bank = TemplateBank::builtin();
        let sizes: Vec<(String, usize)> = bank.banks().map(|(k, v)| (k.name(), v.len())).collect();
        let expect = [
            ("relation_qa", 13),
            ("relation_detect#1", 18),
            ("relation_detect#2", 17),
            ("relation_detect#3", 22),
            ("spatial#1", 12),
            ("spatial#2", 11),
            ("spatial#3", 12),
            ("counting#1", 17),
            ("counting#2", 9),
            ("detection#1", 17),
            ("detection#2", 18),
        ];
        for (name, n) in expect {
            assert!(sizes.contains(&(name.to_string(), n)), "{name}: {sizes:?}");
        }
        assert_eq!(bank.templates(BankKey::new(Task::MultichoiceVqa, 1)).len(), 12);
        assert!(bank.templates(BankKey::new(Task::MultichoiceVqa, 1))[0].contains("\n<options>"));
    }

    #[test]
    fn parse_rejects_foreign_placeholders() {
        let mut text = BUILTIN.to_string();
        text.push_str("\n[counting#1]\nHow many <object>?\n");
        assert!(matches!(
            TemplateBank::parse(&text),
            Err(TemplateError::ForeignPlaceholder { .. })
        ));
        assert!(matches!(
            TemplateBank::parse("orphan line"),
            Err(TemplateError::NoBank { line: 1 })
        ));
        assert!(matches!(
            TemplateBank::parse("[relation_qa]\nWhat?"),
            Err(TemplateError::EmptyBank(_))
        ));
    }

    #[test]
    fn bank_names_round_trip() {
        for key in BankKey::all() {
            assert_eq!(BankKey::parse(&key.name()), Some(key));
        }
        assert_eq!(BankKey::all().len(), 14);
    }
}
