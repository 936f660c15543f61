use std::io::{self, BufRead};

use super::TripleRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestReport {
    pub records: Vec<TripleRecord>,
    pub skipped: Vec<SkippedLine>,
    pub total_lines: usize,
}

/// Parses line-delimited JSON triple records. Invalid or blank lines are
/// skipped and reported; only an unreadable stream is an error.
pub fn ingest_triples<R: BufRead>(input: R) -> io::Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        report.total_lines += 1;
        let lineno = i + 1;
        if line.trim().is_empty() {
            report.skipped.push(SkippedLine {
                line: lineno,
                reason: "blank line".into(),
            });
            continue;
        }
        match serde_json::from_str::<TripleRecord>(&line) {
            Ok(rec) => match rec.missing_field() {
                None => report.records.push(rec),
                Some(field) => report.skipped.push(SkippedLine {
                    line: lineno,
                    reason: format!("empty {field}"),
                }),
            },
            Err(e) => report.skipped.push(SkippedLine {
                line: lineno,
                reason: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn well_formed_lines_parse_in_order() {
        let text = r#"{"subject":"pump-7","relation":"belongs-to","object":"line-2","source_doc":"wo-1","context":"pump on line 2"}
{"subject":"bearing","relation":"causes","object":"overheating","source_doc":"r-3","context":""}
{"subject":"s1","relation":"supplies","object":"bearing"}
"#;
        let r = ingest_triples(text.as_bytes()).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.skipped.is_empty());
        assert_eq!(r.records[1].subject, "bearing");
    }

    #[test]
    fn empty_relation_is_skipped_with_line_number() {
        let text = "{\"subject\":\"a\",\"relation\":\"r\",\"object\":\"b\"}\n{\"subject\":\"a\",\"relation\":\"\",\"object\":\"b\"}\n";
        let r = ingest_triples(text.as_bytes()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(
            r.skipped,
            vec![SkippedLine {
                line: 2,
                reason: "empty relation".into()
            }]
        );
    }

    proptest! {
        #[test]
        fn parsed_plus_skipped_equals_total(lines in proptest::collection::vec(
            prop_oneof![
                Just(r#"{"subject":"a","relation":"r","object":"b"}"#.to_owned()),
                Just(r#"{"subject":"","relation":"r","object":"b"}"#.to_owned()),
                Just(String::new()),
                "[ -~]{0,30}",
            ],
            0..200,
        )) {
            let text = lines.join("\n");
            let r = ingest_triples(text.as_bytes()).unwrap();
            prop_assert_eq!(r.records.len() + r.skipped.len(), r.total_lines);
        }
    }
}
