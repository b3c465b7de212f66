//! Single-pass `{placeholder}` substitution for prompt templates.

use std::collections::HashMap;

/// Replaces each `{name}` that has a value. Substituted text is never
/// re-scanned, so user input containing braces is inserted as-is. Unknown
/// placeholders and stray braces are copied through.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let values: HashMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_end = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        if after[name_end..].starts_with('}') {
            if let Some(value) = values.get(&after[..name_end]) {
                out.push_str(value);
                rest = &after[name_end + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::render;

    #[test]
    fn substitutes_once() {
        let out = render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "2")]);
        assert_eq!(out, "a {y} b 2 {z}");
    }

    #[test]
    fn json_braces_survive() {
        let out = render("{\"artifacts\": []} {q}", &[("q", "ok")]);
        assert_eq!(out, "{\"artifacts\": []} ok");
    }
}
