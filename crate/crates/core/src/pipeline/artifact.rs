use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const ARTIFACT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub kind: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub records: usize,
}

impl ArtifactHeader {
    fn new(kind: &str, config_hash: &str, records: usize) -> Self {
        Self {
            kind: kind.into(),
            schema_version: ARTIFACT_SCHEMA,
            config_hash: config_hash.into(),
            records,
        }
    }

    /// Kind and schema must match; the hash must too when `expected` is set.
    pub fn check(&self, kind: &str, expected: Option<&str>) -> Result<(), PipelineError> {
        let bad = |message: String| PipelineError::Artifact {
            kind: kind.into(),
            message,
        };
        if self.kind != kind {
            return Err(bad(format!("expected a {kind} artifact, found {}", self.kind)));
        }
        if self.schema_version != ARTIFACT_SCHEMA {
            return Err(bad(format!(
                "schema version {} is not {ARTIFACT_SCHEMA}",
                self.schema_version
            )));
        }
        match expected {
            Some(h) if h != self.config_hash => Err(PipelineError::HashMismatch {
                kind: kind.into(),
                expected: h.into(),
                found: self.config_hash.clone(),
            }),
            _ => Ok(()),
        }
    }
}

/// Header line, then one record per line.
pub fn write_jsonl<T: Serialize>(kind: &str, config_hash: &str, items: &[T]) -> String {
    let mut out =
        serde_json::to_string(&ArtifactHeader::new(kind, config_hash, items.len())).expect("header serializes");
    out.push('\n');
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(
    text: &str,
    kind: &str,
    expected: Option<&str>,
) -> Result<(ArtifactHeader, Vec<T>), PipelineError> {
    let bad = |line: usize, message: String| PipelineError::Artifact {
        kind: kind.into(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, head) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let header: ArtifactHeader = serde_json::from_str(head).map_err(|e| bad(n + 1, e.to_string()))?;
    header.check(kind, expected)?;
    let items: Vec<T> = lines
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| bad(n + 1, e.to_string())))
        .collect::<Result<_, _>>()?;
    if items.len() != header.records {
        return Err(bad(
            n + 1,
            format!("header promises {} records, found {}", header.records, items.len()),
        ));
    }
    Ok((header, items))
}

#[derive(Serialize)]
struct Wrapped<'a, T> {
    header: ArtifactHeader,
    body: &'a T,
}

#[derive(Deserialize)]
struct Unwrapped<T> {
    header: ArtifactHeader,
    body: T,
}

/// A single JSON document with the header beside the body.
pub fn write_json<T: Serialize>(kind: &str, config_hash: &str, body: &T) -> String {
    let w = Wrapped {
        header: ArtifactHeader::new(kind, config_hash, 1),
        body,
    };
    let mut s = serde_json::to_string_pretty(&w).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(
    text: &str,
    kind: &str,
    expected: Option<&str>,
) -> Result<(ArtifactHeader, T), PipelineError> {
    let u: Unwrapped<T> = serde_json::from_str(text).map_err(|e| PipelineError::Artifact {
        kind: kind.into(),
        message: e.to_string(),
    })?;
    u.header.check(kind, expected)?;
    Ok((u.header, u.body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_refusals() {
        let text = write_jsonl("numbers", "abc", &[1u32, 2, 3]);
        let (h, v): (_, Vec<u32>) = read_jsonl(&text, "numbers", Some("abc")).unwrap();
        assert_eq!((h.records, v), (3, vec![1, 2, 3]));
        assert!(matches!(
            read_jsonl::<u32>(&text, "numbers", Some("xyz")),
            Err(PipelineError::HashMismatch { .. })
        ));
        assert!(read_jsonl::<u32>(&text, "numbers", None).is_ok());
        assert!(matches!(
            read_jsonl::<u32>(&text, "words", None),
            Err(PipelineError::Artifact { .. })
        ));
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_jsonl::<u32>(&truncated, "numbers", None).is_err());
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert!(read_jsonl::<u32>(&bumped, "numbers", None).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = write_json("pair", "h", &(1.5f64, "x".to_string()));
        let (_, body): (_, (f64, String)) = read_json(&text, "pair", Some("h")).unwrap();
        assert_eq!(body, (1.5, "x".into()));
        assert!(read_json::<(f64, String)>(&text, "pair", Some("g")).is_err());
    }
}
