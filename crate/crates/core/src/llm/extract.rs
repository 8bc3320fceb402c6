//! Fenced code block extraction from LLM replies.

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    /// Lower-cased first word of the fence info string, empty if unlabeled.
    pub lang: String,
    pub body: String,
    /// False when the reply ended before the closing fence.
    pub terminated: bool,
}

fn fence_info(line: &str) -> Option<&str> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    line.trim_start_matches(' ').strip_prefix("```").map(str::trim)
}

/// All fenced blocks in order of appearance.
pub fn code_blocks(text: &str) -> Vec<CodeBlock> {
    let mut blocks = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        match (&mut current, fence_info(line)) {
            (None, Some(info)) => {
                let lang = info.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
                current = Some((lang, Vec::new()));
            }
            (Some(_), Some("")) => {
                let (lang, lines) = current.take().expect("open block");
                blocks.push(CodeBlock { lang, body: lines.join("\n"), terminated: true });
            }
            (Some((_, lines)), _) => lines.push(line),
            (None, None) => {}
        }
    }
    if let Some((lang, lines)) = current {
        blocks.push(CodeBlock { lang, body: lines.join("\n"), terminated: false });
    }
    blocks
}

fn aliases(hint: &str) -> &'static [&'static str] {
    match hint.to_ascii_lowercase().as_str() {
        "verilog" | "systemverilog" | "v" | "sv" => &["verilog", "systemverilog", "v", "sv"],
        "python" | "py" | "python3" => &["python", "py", "python3"],
        "text" | "txt" => &["text", "txt"],
        _ => &[],
    }
}

fn matches_hint(block: &CodeBlock, hint: &str) -> bool {
    block.lang.eq_ignore_ascii_case(hint) || aliases(hint).contains(&block.lang.as_str())
}

/// First block whose label matches `lang` (with common aliases), if any.
pub fn find_code_block(text: &str, lang: &str) -> Option<CodeBlock> {
    code_blocks(text).into_iter().find(|b| matches_hint(b, lang))
}

/// Contents of the first block matching `language_hint`, else of the first
/// block of any kind.
pub fn extract_code_block(response_text: &str, language_hint: &str) -> Result<String, LlmError> {
    extract_block(response_text, language_hint).map(|b| b.body)
}

/// Like [`extract_code_block`] but keeps the block metadata.
pub fn extract_block(response_text: &str, language_hint: &str) -> Result<CodeBlock, LlmError> {
    let blocks = code_blocks(response_text);
    if let Some(b) = blocks.iter().find(|b| matches_hint(b, language_hint)) {
        return Ok(b.clone());
    }
    blocks.into_iter().next().ok_or(LlmError::NoCodeBlock)
}
