use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use super::{Corpus, Utterance};
use crate::error::{Error, Result};

/// Loads a line-delimited record file. Blank lines and lines starting with
/// `#` are skipped; every other
/// line must be an object with string `text` and `domain` keys and, for
/// labeled corpora, a string `label`.
pub fn load_corpus(path: impl AsRef<Path>, labeled: bool) -> Result<Corpus> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&raw, &name, labeled, path)
}

/// Parses records from a string; `origin` is used in error messages only.
pub fn parse_corpus(raw: &str, name: &str, labeled: bool, origin: &Path) -> Result<Corpus> {
    let mut utterances = Vec::new();
    let mut warned_keys = false;
    for (n, line) in raw.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Record {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| bad(format!("malformed record: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| bad("record is not an object".into()))?;

        let text = match obj.get("text") {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(_) => return Err(bad("`text` is not a string".into())),
            None => return Err(bad("missing `text`".into())),
        };
        if text.is_empty() {
            return Err(bad("`text` is empty".into()));
        }
        let domain = match obj.get("domain") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(bad("`domain` is not a string".into())),
            None => return Err(bad("missing `domain`".into())),
        };
        let label = match obj.get("label") {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Null) | None => None,
            Some(_) => return Err(bad("`label` is not a string".into())),
        };
        if labeled && label.is_none() {
            return Err(bad("labeled corpus record lacks `label`".into()));
        }
        if !warned_keys {
            if let Some(k) = obj
                .keys()
                .find(|k| !matches!(k.as_str(), "text" | "label" | "domain"))
            {
                log::warn!("{}:{line_no}: ignoring unknown key {k:?}", origin.display());
                warned_keys = true;
            }
        }
        utterances.push(Utterance {
            text,
            label,
            domain,
        });
    }
    Corpus::new(name, utterances, labeled)
}

/// Writes the corpus in the canonical record format.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for u in corpus.utterances() {
        serde_json::to_writer(&mut out, u)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(raw: &str, labeled: bool) -> Result<Corpus> {
        parse_corpus(raw, "t", labeled, &PathBuf::from("t.jsonl"))
    }

    #[test]
    fn empty_unlabeled() {
        let c = parse("", false).unwrap();
        assert_eq!(c.len(), 0);
        assert!(c.label_vocab().is_empty());
        assert!(c.domain_vocab().is_empty());
    }

    #[test]
    fn three_lines() {
        let raw = r#"{"text":"a one","label":"a","domain":"d"}
{"text":" a two ","label":"a","domain":"d"}
{"text":"b","label":"b","domain":"e","extra":1}"#;
        let c = parse(raw, true).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.n_labels(), 2);
        assert_eq!(c.utterances()[1].text, "a two");
        assert_eq!(c.domain_vocab().len(), 2);
    }

    #[test]
    fn reports_line_numbers() {
        let mut raw = String::new();
        for i in 0..6 {
            raw.push_str(&format!(
                "{{\"text\":\"t{i}\",\"label\":\"x\",\"domain\":\"d\"}}\n"
            ));
        }
        raw.push_str("{not json\n");
        match parse(&raw, true) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn missing_label_in_labeled_mode() {
        let raw = r#"{"text":"a","domain":"d"}"#;
        assert!(matches!(
            parse(raw, true),
            Err(Error::Record { line: 1, .. })
        ));
        assert_eq!(parse(raw, false).unwrap().len(), 1);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_corpus("/nonexistent/file.jsonl", true),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = r#"{"text":"hello","label":"g","domain":"d"}
{"text":"bye","label":"f","domain":"d"}"#;
        let c = parse(raw, true).unwrap();
        let p = dir.path().join("t.jsonl");
        save_corpus(&c, &p).unwrap();
        assert_eq!(load_corpus(&p, true).unwrap(), c);
    }
}
