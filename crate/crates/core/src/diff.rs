//! Line-based structural diff (`compare_change`).

use serde::{Deserialize, Serialize};
use similar::{DiffOp, TextDiff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Added,
    Removed,
    Changed,
}

/// One contiguous differing region. Line numbers are 1-based; for an added
/// span `old_start` is the line before which the text is inserted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffSpan {
    pub kind: SpanKind,
    pub old_start: usize,
    pub old_lines: usize,
    pub new_start: usize,
    pub new_lines: usize,
    pub old_text: String,
    pub new_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diff {
    pub spans: Vec<DiffSpan>,
}

impl Diff {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Rebuild the new text from the old one. Returns `None` when `old` is not
    /// the text this diff was computed from.
    pub fn apply(&self, old: &str) -> Option<String> {
        let lines: Vec<&str> = old.split_inclusive('\n').collect();
        let mut out = String::with_capacity(old.len());
        let mut cursor = 0usize;
        for span in &self.spans {
            let start = span.old_start - 1;
            if start < cursor || start + span.old_lines > lines.len() {
                return None;
            }
            out.extend(lines[cursor..start].iter().copied());
            let removed: String = lines[start..start + span.old_lines].concat();
            if removed != span.old_text {
                return None;
            }
            out.push_str(&span.new_text);
            cursor = start + span.old_lines;
        }
        out.extend(lines[cursor..].iter().copied());
        Some(out)
    }

    /// Plain-text rendering, one hunk per span.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.spans {
            let label = match s.kind {
                SpanKind::Added => "added",
                SpanKind::Removed => "removed",
                SpanKind::Changed => "changed",
            };
            out.push_str(&format!("@@ {label} old line {} (+{}) new line {} (+{})\n", s.old_start, s.old_lines, s.new_start, s.new_lines));
            for l in s.old_text.split_inclusive('\n') {
                out.push_str("- ");
                out.push_str(l.trim_end_matches('\n'));
                out.push('\n');
            }
            for l in s.new_text.split_inclusive('\n') {
                out.push_str("+ ");
                out.push_str(l.trim_end_matches('\n'));
                out.push('\n');
            }
        }
        out
    }
}

/// Deterministic line diff between two texts (Myers, via `similar`).
pub fn compare_change(old: &str, new: &str) -> Diff {
    let diff = TextDiff::from_lines(old, new);
    let old_lines: Vec<&str> = old.split_inclusive('\n').collect();
    let new_lines: Vec<&str> = new.split_inclusive('\n').collect();
    let mut spans: Vec<DiffSpan> = Vec::new();
    // positions come from our own cursors: the indices similar reports on
    // insert/delete ops are not always the true splice points
    let (mut oc, mut nc) = (0usize, 0usize);
    for op in diff.ops() {
        let (kind, ol, nl) = match *op {
            DiffOp::Equal { len, .. } => {
                oc += len;
                nc += len;
                continue;
            }
            DiffOp::Delete { old_len, .. } => (SpanKind::Removed, old_len, 0),
            DiffOp::Insert { new_len, .. } => (SpanKind::Added, 0, new_len),
            DiffOp::Replace { old_len, new_len, .. } => (SpanKind::Changed, old_len, new_len),
        };
        let (oi, ni) = (oc, nc);
        oc += ol;
        nc += nl;
        let old_text = old_lines[oi..oi + ol].concat();
        let new_text = new_lines[ni..ni + nl].concat();
        // similar may emit a delete immediately followed by an insert; fold
        // adjacent edits into one changed span
        if let Some(last) = spans.last_mut() {
            if last.old_start - 1 + last.old_lines == oi && last.new_start - 1 + last.new_lines == ni {
                last.old_lines += ol;
                last.new_lines += nl;
                last.old_text.push_str(&old_text);
                last.new_text.push_str(&new_text);
                last.kind = match (last.old_lines, last.new_lines) {
                    (0, _) => SpanKind::Added,
                    (_, 0) => SpanKind::Removed,
                    _ => SpanKind::Changed,
                };
                continue;
            }
        }
        spans.push(DiffSpan { kind, old_start: oi + 1, old_lines: ol, new_start: ni + 1, new_lines: nl, old_text, new_text });
    }
    Diff { spans }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn changed_line_two() {
        let d = compare_change("a\nb", "a\nc");
        assert_eq!(d.spans.len(), 1);
        assert_eq!(d.spans[0].kind, SpanKind::Changed);
        assert_eq!(d.spans[0].old_start, 2);
        assert_eq!(d.spans[0].old_text, "b");
        assert_eq!(d.spans[0].new_text, "c");
    }

    #[test]
    fn identical_is_empty() {
        assert!(compare_change("same\ntext\n", "same\ntext\n").is_empty());
        assert!(compare_change("", "").is_empty());
    }

    #[test]
    fn from_empty_is_one_added_span() {
        let d = compare_change("", "x");
        assert_eq!(d.spans.len(), 1);
        assert_eq!(d.spans[0].kind, SpanKind::Added);
        assert_eq!(d.apply("").unwrap(), "x");
    }

    #[test]
    fn apply_rejects_foreign_base() {
        let d = compare_change("a\nb\n", "a\nc\n");
        assert!(d.apply("z\nq\n").is_none());
    }

    #[test]
    fn render_mentions_both_sides() {
        let r = compare_change("keep\nold line\n", "keep\nnew line\n").render();
        assert!(r.contains("- old line"));
        assert!(r.contains("+ new line"));
    }

    fn text() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "dd", ""]), 0..12)
            .prop_flat_map(|lines| (Just(lines), any::<bool>()))
            .prop_map(|(lines, trailing)| {
                let mut s = lines.join("\n");
                if trailing {
                    s.push('\n');
                }
                s
            })
    }

    proptest! {
        #[test]
        fn apply_reproduces_new(old in text(), new in text()) {
            let d = compare_change(&old, &new);
            prop_assert_eq!(d.apply(&old), Some(new.clone()));
            prop_assert_eq!(d.is_empty(), old == new);
        }
    }
}
