//! Corpus records and the JSON Lines endpoints that read and write them.
//!
//! Records are one JSON object per line with at least `id`, `source` and
//! `text`. An optional numeric `score` carries an externally computed quality
//! score. Every other field is kept verbatim (raw JSON) in [`Document::meta`]
//! and written back unchanged.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{CurateError, Result};

/// Key of the annotation object added to every written record.
pub const CURATION_KEY: &str = "curation";

#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
    pub score: Option<f64>,
    /// Unknown fields in input order, as raw JSON.
    pub meta: IndexMap<String, Box<RawValue>>,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.source == other.source
            && self.text == other.text
            && self.score == other.score
            && self.meta.len() == other.meta.len()
            && self
                .meta
                .iter()
                .zip(&other.meta)
                .all(|((ka, va), (kb, vb))| ka == kb && va.get() == vb.get())
    }
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            text: text.into(),
            score: None,
            meta: IndexMap::new(),
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    /// UTF-8 byte length of `text`.
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }

    /// Parses one JSON object into a document.
    pub fn from_json(line: &str) -> std::result::Result<Self, String> {
        let mut fields: IndexMap<String, Box<RawValue>> = serde_json::from_str(line).map_err(|e| e.to_string())?;

        let id = take_string(&mut fields, "id")?;
        let source = take_string(&mut fields, "source")?;
        let text = take_string(&mut fields, "text")?;
        let score = match fields.shift_remove("score") {
            None => None,
            Some(raw) => serde_json::from_str::<Option<f64>>(raw.get())
                .map_err(|_| format!("field \"score\" must be a number or null, got {}", raw.get()))?,
        };
        // Our own annotation from an earlier run is regenerated on output.
        fields.shift_remove(CURATION_KEY);

        Ok(Self {
            id,
            source,
            text,
            score,
            meta: fields,
        })
    }
}

fn take_string(fields: &mut IndexMap<String, Box<RawValue>>, key: &str) -> std::result::Result<String, String> {
    let raw = fields
        .shift_remove(key)
        .ok_or_else(|| format!("missing required field \"{key}\""))?;
    serde_json::from_str::<String>(raw.get()).map_err(|_| format!("field \"{key}\" must be a string"))
}

/// What to do with a line that does not parse as a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedPolicy {
    #[default]
    Abort,
    Skip,
}

/// Streaming reader over a JSON Lines source.
///
/// Yields `(line_number, Document)` in input order. Blank lines are ignored.
/// Duplicate ids are not detected here; see [`ingest`].
pub struct JsonlReader<R> {
    reader: R,
    line_no: usize,
    buf: Vec<u8>,
    policy: MalformedPolicy,
    skipped: usize,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R, policy: MalformedPolicy) -> Self {
        Self {
            reader,
            line_no: 0,
            buf: Vec::new(),
            policy,
            skipped: 0,
        }
    }

    /// Number of malformed lines dropped under [`MalformedPolicy::Skip`].
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn parse_current(&self) -> std::result::Result<Option<Document>, String> {
        let line = std::str::from_utf8(&self.buf).map_err(|e| format!("invalid UTF-8: {e}"))?;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            return Ok(None);
        }
        Document::from_json(line).map(Some)
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<(usize, Document)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(CurateError::io("<input>", e))),
            }
            self.line_no += 1;
            match self.parse_current() {
                Ok(Some(doc)) => return Some(Ok((self.line_no, doc))),
                Ok(None) => continue,
                Err(message) => match self.policy {
                    MalformedPolicy::Skip => {
                        self.skipped += 1;
                        continue;
                    }
                    MalformedPolicy::Abort => {
                        return Some(Err(CurateError::Malformed {
                            line: self.line_no,
                            message,
                        }))
                    }
                },
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub docs: Vec<Document>,
    pub skipped: usize,
}

/// Reads a whole JSON Lines stream, rejecting duplicate ids.
pub fn ingest<R: BufRead>(reader: R, policy: MalformedPolicy) -> Result<Ingested> {
    let mut rows = JsonlReader::new(reader, policy);
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut docs = Vec::new();
    for row in rows.by_ref() {
        let (line, doc) = row?;
        if seen.insert(doc.id.clone(), line).is_some() {
            return Err(CurateError::DuplicateId { id: doc.id, line });
        }
        docs.push(doc);
    }
    Ok(Ingested {
        docs,
        skipped: rows.skipped(),
    })
}

/// Serializable view of a document plus its curation annotation.
pub struct AnnotatedRecord<'a, A: Serialize> {
    pub doc: &'a Document,
    pub curation: A,
}

impl<A: Serialize> Serialize for AnnotatedRecord<'_, A> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let doc = self.doc;
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("id", &doc.id)?;
        map.serialize_entry("source", &doc.source)?;
        map.serialize_entry("text", &doc.text)?;
        if let Some(score) = doc.score {
            map.serialize_entry("score", &score)?;
        }
        for (k, v) in &doc.meta {
            map.serialize_entry(k, v)?;
        }
        map.serialize_entry(CURATION_KEY, &self.curation)?;
        map.end()
    }
}

/// Writes one record as a single JSON line.
pub fn write_record<W: Write, A: Serialize>(out: &mut W, doc: &Document, curation: A) -> io::Result<()> {
    serde_json::to_writer(&mut *out, &AnnotatedRecord { doc, curation })?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_record() {
        let doc = Document::from_json(r#"{"id":"a","source":"s1","text":"hello"}"#).unwrap();
        assert_eq!(doc.id, "a");
        assert_eq!(doc.source, "s1");
        assert_eq!(doc.byte_len(), 5);
        assert!(doc.score.is_none());
        assert!(doc.meta.is_empty());
    }

    #[test]
    fn byte_len_counts_utf8_bytes() {
        let doc = Document::new("x", "s", "héllo");
        assert_eq!(doc.byte_len(), 6);
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let got = ingest(&b""[..], MalformedPolicy::Abort).unwrap();
        assert!(got.docs.is_empty());
        assert_eq!(got.skipped, 0);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let input = b"{\"id\":\"a\",\"source\":\"s\",\"text\":\"x\"}\n{\"id\":\"a\",\"source\":\"s\",\"text\":\"y\"}\n";
        let err = ingest(&input[..], MalformedPolicy::Abort).unwrap_err();
        match err {
            CurateError::DuplicateId { id, line } => {
                assert_eq!(id, "a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = b"{\"id\":\"a\",\"source\":\"s\",\"text\":\"x\"}\n{\"id\":\"b\"}\n";
        match ingest(&input[..], MalformedPolicy::Abort).unwrap_err() {
            CurateError::Malformed { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("source"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let got = ingest(&input[..], MalformedPolicy::Skip).unwrap();
        assert_eq!(got.docs.len(), 1);
        assert_eq!(got.skipped, 1);
    }

    #[test]
    fn invalid_utf8_is_an_input_error() {
        let mut input = b"{\"id\":\"a\",\"source\":\"s\",\"text\":\"".to_vec();
        input.extend_from_slice(&[0xff, 0xfe]);
        input.extend_from_slice(b"\"}\n");
        let err = ingest(&input[..], MalformedPolicy::Abort).unwrap_err();
        assert!(matches!(err, CurateError::Malformed { line: 1, .. }));
    }

    #[test]
    fn blank_lines_are_ignored() {
        let input = b"\n{\"id\":\"a\",\"source\":\"s\",\"text\":\"x\"}\n\n";
        assert_eq!(ingest(&input[..], MalformedPolicy::Abort).unwrap().docs.len(), 1);
    }

    #[test]
    fn meta_round_trips_verbatim() {
        let line = r#"{"id":"a","url":"http://x/y","nested":{"b":[1, 2.50,"z"]},"source":"s","text":"t","score":0.25,"curation":{"kept":true}}"#;
        let doc = Document::from_json(line).unwrap();
        assert_eq!(doc.meta.len(), 2);
        assert_eq!(doc.score, Some(0.25));
        let mut out = Vec::new();
        write_record(&mut out, &doc, serde_json::json!({"kept": true})).unwrap();
        let out = String::from_utf8(out).unwrap();
        assert_eq!(
            out,
            "{\"id\":\"a\",\"source\":\"s\",\"text\":\"t\",\"score\":0.25,\"url\":\"http://x/y\",\"nested\":{\"b\":[1, 2.50,\"z\"]},\"curation\":{\"kept\":true}}\n"
        );
        let again = Document::from_json(out.trim_end()).unwrap();
        assert_eq!(again, doc);
    }
}
