use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no parseable JSON object or array in model output")]
pub struct NoJsonFound;

/// Pulls the first top-level JSON object or array out of model output.
///
/// Markdown code fences are stripped first; nothing else is repaired.
pub fn extract_json(content: &str) -> Result<Value, NoJsonFound> {
    for block in fenced_blocks(content) {
        if let Some(v) = first_value(block) {
            return Ok(v);
        }
    }
    first_value(content).ok_or(NoJsonFound)
}

fn fenced_blocks(content: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = content;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (`json`, `JSON`, ...) up to the end of line
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

fn first_value(text: &str) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if v.is_object() || v.is_array() {
                return Some(v);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strips_fences() {
        assert_eq!(
            extract_json("```json\n{\"a\":1}\n```").unwrap(),
            json!({"a": 1})
        );
    }

    #[test]
    fn finds_object_inside_prose() {
        assert_eq!(
            extract_json("here: {\"a\": [1,2]} done").unwrap(),
            json!({"a": [1, 2]})
        );
    }

    #[test]
    fn no_braces_is_error() {
        assert_eq!(extract_json("no braces at all"), Err(NoJsonFound));
    }

    #[test]
    fn skips_unparseable_brace_runs() {
        assert_eq!(extract_json("set {x} then [1, 2]").unwrap(), json!([1, 2]));
        assert_eq!(extract_json("{broken"), Err(NoJsonFound));
    }

    #[test]
    fn fence_without_language_tag() {
        assert_eq!(
            extract_json("Result:\n```\n[\"a\", \"b\"]\n```\n").unwrap(),
            json!(["a", "b"])
        );
    }
}
