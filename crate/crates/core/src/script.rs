//! Generated analysis scripts and the framing conventions around them.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Line opening the section of a script that writes `manifest.json`.
pub const MANIFEST_BEGIN: &str = "# MANIFEST";
/// Line closing that section.
pub const MANIFEST_END: &str = "# END MANIFEST";

static MANIFEST_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"["']name["']\s*:\s*["']([^"']+)["']"#).unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAuthor {
    Actor,
    Critic,
}

/// Hex SHA-256 of a script's source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptDigest(pub String);

impl ScriptDigest {
    pub fn of(source: &str) -> Self {
        Self(hex::encode(Sha256::digest(source.as_bytes())))
    }

    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }
}

impl fmt::Display for ScriptDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedScript {
    pub source: String,
    pub revision: u32,
    pub produced_by: ScriptAuthor,
    pub declared_outputs: Vec<String>,
}

impl GeneratedScript {
    /// Revision-0 script as produced by the actor.
    pub fn from_actor(source: impl Into<String>) -> Self {
        let source = source.into();
        let declared_outputs = declared_outputs(&source);
        Self {
            source,
            revision: 0,
            produced_by: ScriptAuthor::Actor,
            declared_outputs,
        }
    }

    /// Whole-script rewrite of `self` by a critic.
    pub fn rewrite(&self, source: impl Into<String>) -> Self {
        let source = source.into();
        let declared_outputs = declared_outputs(&source);
        Self {
            source,
            revision: self.revision + 1,
            produced_by: ScriptAuthor::Critic,
            declared_outputs,
        }
    }

    pub fn digest(&self) -> ScriptDigest {
        ScriptDigest::of(&self.source)
    }

    pub fn has_manifest_section(&self) -> bool {
        manifest_section(&self.source).is_some()
    }
}

/// Contents of the first fenced code block, without the fences and info string.
pub fn first_code_block(text: &str) -> Option<String> {
    let open = text.find("```")?;
    let after_open = &text[open + 3..];
    let body_start = after_open.find('\n')? + 1;
    let body = &after_open[body_start..];
    // the closing fence has to start a line
    let mut offset = 0;
    loop {
        let idx = body[offset..].find("```")? + offset;
        if idx == 0 || body.as_bytes()[idx - 1] == b'\n' {
            return Some(body[..idx].to_string());
        }
        offset = idx + 3;
    }
}

pub fn manifest_section(source: &str) -> Option<&str> {
    let mut start = None;
    let mut pos = 0;
    for line in source.split_inclusive('\n') {
        let trimmed = line.trim();
        if start.is_none() && trimmed == MANIFEST_BEGIN {
            start = Some(pos + line.len());
        } else if let Some(s) = start {
            if trimmed == MANIFEST_END {
                return Some(&source[s..pos]);
            }
        }
        pos += line.len();
    }
    None
}

/// Artifact names listed in the script's manifest-emit section.
pub fn declared_outputs(source: &str) -> Vec<String> {
    let Some(section) = manifest_section(source) else {
        return Vec::new();
    };
    let mut names: Vec<String> = Vec::new();
    for caps in MANIFEST_NAME.captures_iter(section) {
        let name = caps[1].to_string();
        if !names.contains(&name) {
            names.push(name);
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_block_wins() {
        let text = "intro\n```python\nprint(1)\n```\nmore\n```python\nprint(2)\n```\n";
        assert_eq!(first_code_block(text).as_deref(), Some("print(1)\n"));
    }

    #[test]
    fn prose_has_no_block() {
        assert_eq!(first_code_block("just words"), None);
        assert_eq!(first_code_block("```python\nunterminated"), None);
    }

    #[test]
    fn inline_backticks_do_not_close_block() {
        let text = "```\nx = '```'\ny = 1\n```";
        assert_eq!(first_code_block(text).as_deref(), Some("x = '```'\ny = 1\n"));
    }

    #[test]
    fn declared_outputs_come_from_manifest_section() {
        let src = "print('x')\n# MANIFEST\nm = {\"artifacts\": [{\"name\": \"chart\", \"kind\": \"image\", \"file\": \"c.svg\"},\n {'name': 'table', 'kind': 'table', 'file': 't.csv'}]}\n# END MANIFEST\n";
        assert_eq!(declared_outputs(src), vec!["chart", "table"]);
        assert!(declared_outputs("{\"name\": \"x\"}").is_empty());
    }

    #[test]
    fn rewrite_bumps_revision() {
        let s = GeneratedScript::from_actor("a = 1\n");
        let r = s.rewrite("a = 2\n");
        assert_eq!((s.revision, r.revision), (0, 1));
        assert_eq!(r.produced_by, ScriptAuthor::Critic);
        assert_ne!(s.digest(), r.digest());
        assert_eq!(s.digest(), ScriptDigest::of("a = 1\n"));
    }
}
