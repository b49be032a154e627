/// Pulls code out of a model completion.
///
/// Fenced blocks win and are joined in order; an unterminated fence runs to
/// the end of the text. Without any fence the whole completion is returned.
pub fn extract_code(completion: &str) -> String {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in completion.lines() {
        let is_fence = line.trim_start().starts_with("```");
        match (&mut current, is_fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(_), true) => blocks.push(current.take().unwrap_or_default()),
            (Some(block), false) => block.push(line),
            (None, false) => {}
        }
    }
    if let Some(open) = current {
        blocks.push(open);
    }
    if blocks.is_empty() {
        return completion.to_string();
    }
    blocks
        .iter()
        .map(|b| b.join("\n"))
        .collect::<Vec<_>>()
        .join("\n")
}
