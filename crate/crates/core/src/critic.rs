//! Critic stage: static checks on a script and backend-driven review producing
//! a [`Verdict`].

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::actor::schema_block;
use crate::backends::{default_params, Backend, BackendError, BackendRequest, SamplingParams, Stage};
use crate::dataset::DatasetRef;
use crate::query::UserQuery;
use crate::script::{first_code_block, manifest_section, GeneratedScript, ScriptDigest};
use crate::template::render;

pub const CRITIC_TEMPLATE: &str = include_str!("../assets/critic_prompt.txt");

static SUBSCRIPT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(\w*)\[\s*["']([^"'\n\]]+)["']\s*\]"#).unwrap());
/// Subscripted names that are never data frames.
const NON_FRAME_RECEIVERS: &[&str] = &["environ"];
static SUBSCRIPT_ASSIGN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\[\s*["']([^"'\n\]]+)["']\s*\]\s*=[^=]"#).unwrap());
static SUBSCRIPT_LIST: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"\[\s*\[([^\[\]\n]+)\]\s*\]"#).unwrap());
static COLUMN_KEYWORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\b(?:x|y|hue|by|column|values|on|subset)\s*=\s*["']([^"'\n]+)["']"#).unwrap());
static GROUPBY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"\.groupby\(\s*["']([^"'\n]+)["']"#).unwrap());
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"["']([^"'\n]+)["']"#).unwrap());
static VERDICT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*VERDICT\s*:\s*(APPROVE|REJECT)\s*$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    UnknownColumn { column: String },
    MissingManifest,
    NoDeclaredOutputs,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownColumn { column } => {
                write!(f, "the script references column {column:?}, which is not in the schema")
            }
            Finding::MissingManifest => f.write_str("the script has no manifest-emit section"),
            Finding::NoDeclaredOutputs => f.write_str("the manifest-emit section declares no outputs"),
        }
    }
}

fn strip_comments(source: &str) -> String {
    source
        .lines()
        .map(|l| match l.trim_start().starts_with('#') {
            true => "",
            false => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Column names the script reads, in first-seen order. Names the script
/// assigns itself (`df["new"] = ...`) are excluded.
pub fn referenced_columns(source: &str) -> Vec<String> {
    let body = match manifest_section(source) {
        Some(section) => source.replacen(section, "", 1),
        None => source.to_string(),
    };
    let body = strip_comments(&body);
    let created: HashSet<String> = SUBSCRIPT_ASSIGN
        .captures_iter(&body)
        .map(|c| c[1].to_string())
        .collect();
    let mut out: Vec<String> = Vec::new();
    let mut push = |name: &str| {
        let name = name.trim();
        // `{...}` is a format placeholder, e.g. SVG attributes built in f-strings.
        let placeholder = name.contains('{') || name.contains('}');
        if !name.is_empty() && !placeholder && !created.contains(name) && !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    };
    for caps in SUBSCRIPT.captures_iter(&body) {
        if !NON_FRAME_RECEIVERS.contains(&&caps[1]) {
            push(&caps[2]);
        }
    }
    for caps in SUBSCRIPT_LIST.captures_iter(&body) {
        for inner in QUOTED.captures_iter(&caps[1]) {
            push(&inner[1]);
        }
    }
    for caps in COLUMN_KEYWORD.captures_iter(&body) {
        push(&caps[1]);
    }
    for caps in GROUPBY.captures_iter(&body) {
        push(&caps[1]);
    }
    out
}

/// Checks that need no execution. An empty list means statically clean.
pub fn static_validate(script: &GeneratedScript, dataset: &DatasetRef) -> Vec<Finding> {
    let mut findings: Vec<Finding> = referenced_columns(&script.source)
        .into_iter()
        .filter(|c| !dataset.has_column(c))
        .map(|column| Finding::UnknownColumn { column })
        .collect();
    if !script.has_manifest_section() {
        findings.push(Finding::MissingManifest);
    } else if script.declared_outputs.is_empty() {
        findings.push(Finding::NoDeclaredOutputs);
    }
    findings
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite: Option<GeneratedScript>,
    /// Digest of the script that was judged.
    pub script_digest: ScriptDigest,
}

impl Verdict {
    pub fn is_approve(&self) -> bool {
        self.decision == Decision::Approve
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error("critic response has no VERDICT line")]
    UnparseableVerdict,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Parses the verdict wire format: a `VERDICT: APPROVE|REJECT` first line,
/// an optional `RATIONALE:` and, for rejections, an optional fenced rewrite.
pub fn parse_verdict(response: &str, judged: &GeneratedScript) -> Result<Verdict, CriticError> {
    let first = response
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or(CriticError::UnparseableVerdict)?;
    let caps = VERDICT_LINE.captures(first).ok_or(CriticError::UnparseableVerdict)?;
    let decision = if caps[1].eq_ignore_ascii_case("approve") {
        Decision::Approve
    } else {
        Decision::Reject
    };
    let prose = response.split("```").next().unwrap_or_default();
    let rationale = prose
        .lines()
        .skip_while(|l| !l.trim_start().to_ascii_uppercase().starts_with("RATIONALE:"))
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.trim_start()[10..].trim().to_string()
            } else {
                l.trim().to_string()
            }
        })
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let rewrite = match decision {
        Decision::Approve => None,
        Decision::Reject => first_code_block(response)
            .filter(|s| !s.trim().is_empty())
            .map(|s| judged.rewrite(s)),
    };
    Ok(Verdict {
        decision,
        rationale,
        rewrite,
        script_digest: judged.digest(),
    })
}

pub fn assemble_critic_prompt(
    script: &GeneratedScript,
    query: &UserQuery,
    dataset: &DatasetRef,
    error_context: Option<&str>,
) -> String {
    let mut source = script.source.clone();
    if !source.ends_with('\n') {
        source.push('\n');
    }
    let context = match error_context {
        Some(ctx) => format!("\nThe previous attempt failed:\n{ctx}\n"),
        None => String::new(),
    };
    render(
        CRITIC_TEMPLATE,
        &[
            ("query_id", &query.id),
            ("query", &query.text),
            ("dataset_ref", &dataset.url_or_path),
            ("schema_block", &schema_block(dataset)),
            ("script", &source),
            ("error_context", &context),
        ],
    )
}

/// One critic review. `round` is the debate round (from 1).
pub async fn critic_review(
    script: &GeneratedScript,
    query: &UserQuery,
    dataset: &DatasetRef,
    error_context: Option<&str>,
    backend: &dyn Backend,
    round: u32,
    params: Option<SamplingParams>,
) -> Result<Verdict, CriticError> {
    let prompt = assemble_critic_prompt(script, query, dataset, error_context);
    let request = BackendRequest::new(Stage::Critic, prompt)
        .with_params(params.unwrap_or_else(|| default_params(Stage::Critic)))
        .with_round(round);
    let response = backend.complete(&request).await?;
    parse_verdict(&response, script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_lookups_are_not_columns() {
        let cols = referenced_columns("p = os.environ[\"MASQRAD_DATASET\"]\nx = row[\"genre\"]\n");
        assert_eq!(cols, vec!["genre"]);
        let svg = "f.write(f'<rect x=\"{40 + 60 * i}\" y=\"{h:.1f}\"/>')\n";
        assert!(referenced_columns(svg).is_empty());
    }
    use crate::dataset::{ColumnKind, ColumnSpec, TableSchema};

    fn dataset() -> DatasetRef {
        DatasetRef::new(
            "movies.csv",
            vec![TableSchema {
                table: "movies".into(),
                columns: vec![
                    ColumnSpec {
                        name: "genre".into(),
                        kind: ColumnKind::Categorical,
                    },
                    ColumnSpec {
                        name: "budget".into(),
                        kind: ColumnKind::Numeric,
                    },
                ],
                row_count: 3,
            }],
        )
        .unwrap()
    }

    const MANIFEST: &str = "# MANIFEST\nwrite({\"artifacts\": [{\"name\": \"chart\", \"kind\": \"image\", \"file\": \"c.svg\"}]})\n# END MANIFEST\n";

    #[test]
    fn clean_script_has_no_findings() {
        let src = format!("m = df.groupby('genre')['budget'].mean()\n{MANIFEST}");
        assert!(static_validate(&GeneratedScript::from_actor(src), &dataset()).is_empty());
    }

    #[test]
    fn unknown_column_found() {
        let src = format!("v = df['bogus']\n{MANIFEST}");
        assert_eq!(
            static_validate(&GeneratedScript::from_actor(src), &dataset()),
            vec![Finding::UnknownColumn { column: "bogus".into() }]
        );
    }

    #[test]
    fn missing_manifest_found() {
        let src = "v = df['budget']\n";
        assert_eq!(
            static_validate(&GeneratedScript::from_actor(src), &dataset()),
            vec![Finding::MissingManifest]
        );
    }

    #[test]
    fn empty_manifest_section() {
        let src = "# MANIFEST\nopen('manifest.json','w').write('{\"artifacts\": []}')\n# END MANIFEST\n";
        assert_eq!(
            static_validate(&GeneratedScript::from_actor(src), &dataset()),
            vec![Finding::NoDeclaredOutputs]
        );
    }

    #[test]
    fn created_columns_and_lists() {
        let src = "df['ratio'] = df['budget'] / 2\nsub = df[['genre', 'ratio']]\ndf.plot(x='genre', y='gross')\n";
        assert_eq!(referenced_columns(src), vec!["budget", "genre", "gross"]);
    }

    #[test]
    fn verdict_wire_format() {
        let s = GeneratedScript::from_actor("print(1)\n");
        let v = parse_verdict("VERDICT: APPROVE", &s).unwrap();
        assert!(v.is_approve() && v.rewrite.is_none());
        assert_eq!(v.script_digest, s.digest());

        let v = parse_verdict(
            "VERDICT: REJECT\nRATIONALE: wrong column\nuse budget\n```python\nprint(2)\n```\n",
            &s,
        )
        .unwrap();
        assert_eq!(v.decision, Decision::Reject);
        assert_eq!(v.rationale, "wrong column use budget");
        let rw = v.rewrite.unwrap();
        assert_eq!((rw.revision, rw.source.as_str()), (1, "print(2)\n"));

        assert!(matches!(
            parse_verdict("looks fine to me", &s),
            Err(CriticError::UnparseableVerdict)
        ));
        assert!(matches!(parse_verdict("", &s), Err(CriticError::UnparseableVerdict)));
    }

    #[test]
    fn approve_ignores_code() {
        let s = GeneratedScript::from_actor("print(1)\n");
        let v = parse_verdict("VERDICT: APPROVE\n```python\nprint(9)\n```", &s).unwrap();
        assert!(v.rewrite.is_none());
    }

    #[test]
    fn prompt_includes_error_context_only_when_given() {
        let s = GeneratedScript::from_actor("print(1)");
        let q = UserQuery::new("q1", "budget");
        let without = assemble_critic_prompt(&s, &q, &dataset(), None);
        assert!(!without.contains("previous attempt failed"));
        assert!(without.contains("```python\nprint(1)\n```"));
        let with = assemble_critic_prompt(&s, &q, &dataset(), Some("boom"));
        assert!(with.contains("The previous attempt failed:\nboom\n"));
        assert!(with.contains(crate::actor::CONTAINMENT_CLAUSE));
    }
}
