//! Line-oriented approver: asks on a reader/writer pair (normally the
//! terminal) before dangerous calls and lets the user prune retrieval
//! candidates.

use std::io::{BufRead, Write};
use std::sync::Mutex;

use lsfs_core::gate::{Approver, PendingAction};
use lsfs_core::store::RetrievalResult;

pub struct LineApprover<R, W> {
    io: Mutex<(R, W)>,
    name: String,
}

impl<R: BufRead + Send, W: Write + Send> LineApprover<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { io: Mutex::new((input, output)), name: "cli".to_string() }
    }

    pub fn into_inner(self) -> (R, W) {
        self.io.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    fn ask(&self, question: &str) -> Option<String> {
        let mut io = self.io.lock().unwrap_or_else(|e| e.into_inner());
        let (input, output) = &mut *io;
        let _ = write!(output, "{question}");
        let _ = output.flush();
        let mut line = String::new();
        match input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim().to_string()),
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> Approver for LineApprover<R, W> {
    /// End of input counts as "no answer", which the gate treats as a refusal.
    fn approve(&self, action: &PendingAction) -> Option<bool> {
        let answer = self.ask(&format!("{}\nProceed? [y/N] ", action.preview))?;
        Some(matches!(answer.to_ascii_lowercase().as_str(), "y" | "yes"))
    }

    fn select(&self, candidates: &RetrievalResult) -> Vec<bool> {
        if candidates.len() < 2 {
            return vec![true; candidates.len()];
        }
        let mut question = String::from("Candidates:\n");
        for i in 0..candidates.len() {
            question.push_str(&format!("  [{}] {}/{}\n", i + 1, candidates.directories[i], candidates.names[i]));
        }
        question.push_str("Keep which? (numbers separated by spaces, empty keeps all) ");
        let answer = self.ask(&question).unwrap_or_default();
        parse_selection(&answer, candidates.len())
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// "1 3" keeps the first and third of `n`; blank or unparseable input keeps
/// everything.
pub fn parse_selection(answer: &str, n: usize) -> Vec<bool> {
    let picked: Option<Vec<usize>> = answer
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok().filter(|i| (1..=n).contains(i)))
        .collect();
    match picked {
        Some(p) if !p.is_empty() => (1..=n).map(|i| p.contains(&i)).collect(),
        _ => vec![true; n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_parsing() {
        assert_eq!(parse_selection("", 3), vec![true, true, true]);
        assert_eq!(parse_selection("1 3", 3), vec![true, false, true]);
        assert_eq!(parse_selection("2,", 3), vec![false, true, false]);
        assert_eq!(parse_selection("9", 3), vec![true, true, true]);
    }
}
