use std::sync::LazyLock;

use regex::Regex;

use crate::dataset::DatasetRef;

static CLUE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*[-*]?\s*clue\s*:\s*([A-Za-z0-9_ ]+)\s*$").unwrap());

/// Labels captured from `clue: <label>` lines, in order of first appearance.
///
/// Labels are trimmed, lowercased and have spaces replaced by underscores.
pub fn extract_creative_clues(generated_text: &str) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for line in generated_text.lines() {
        let Some(caps) = CLUE_LINE.captures(line) else {
            continue;
        };
        let label = caps[1].trim().to_lowercase().replace(' ', "_");
        if !label.is_empty() && !labels.contains(&label) {
            labels.push(label);
        }
    }
    labels
}

pub fn creative_prompt(query_id: &str, query: &str, dataset: &DatasetRef) -> String {
    let columns = dataset
        .qualified_columns()
        .into_iter()
        .map(|(name, kind)| format!("{name} ({kind})"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Query ID: {query_id}\n\
         A user asked: \"{query}\"\n\
         Available columns: {columns}\n\
         Drawing on your broader knowledge, suggest aspects of the data that could help answer \
         the question, including unconventional angles the user may not have considered.\n\
         Answer with one line per suggestion in the form:\n\
         - clue: <short_label>\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_in_order() {
        assert_eq!(
            extract_creative_clues("- clue: budget\n- clue: release_year"),
            vec!["budget", "release_year"]
        );
    }

    #[test]
    fn no_clue_lines() {
        assert!(extract_creative_clues("nothing to see\nclue budget").is_empty());
        assert!(extract_creative_clues("").is_empty());
    }

    #[test]
    fn deduplicates() {
        assert_eq!(
            extract_creative_clues("- clue: budget\nnoise\n- clue: budget"),
            vec!["budget"]
        );
    }

    #[test]
    fn normalizes_case_spacing_and_bullets() {
        let text = "  * CLUE :  Box Office Gross  \r\nClue: genre\n- clue: box office gross\n- clue: bad-label\n";
        assert_eq!(extract_creative_clues(text), vec!["box_office_gross", "genre"]);
    }
}
