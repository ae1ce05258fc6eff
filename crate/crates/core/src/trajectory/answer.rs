use super::{ActionKind, Trajectory};

/// Content of the last `\boxed{...}` in `text`, brace-balanced. `None` when
/// there is no complete boxed expression.
pub fn extract_boxed(text: &str) -> Option<String> {
    const MARK: &str = "\\boxed{";
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find(MARK) {
        let open = search + rel + MARK.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in text[open..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            found = Some(text[open..end].trim().to_owned());
        }
        search = open;
    }
    found
}

/// Extracts the answer from the body of an answer block: the boxed content
/// if any, otherwise the whole trimmed text.
pub fn extract_answer_text(block: &str) -> String {
    extract_boxed(block).unwrap_or_else(|| block.trim().to_owned())
}

/// The final answer of a trajectory: taken from its last answer action.
pub fn extract_answer(t: &Trajectory) -> Option<String> {
    t.steps
        .iter()
        .rev()
        .filter_map(|s| s.action.as_ref())
        .find(|a| a.kind == ActionKind::Answer)
        .map(|a| extract_answer_text(&a.raw_text))
}
