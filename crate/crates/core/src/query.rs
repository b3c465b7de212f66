use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A user query and the identifier prompts carry for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub id: String,
    pub text: String,
}

impl UserQuery {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }

    /// Identifier derived from the text, `q-` plus 12 hex digits of its SHA-256.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let digest = hex::encode(Sha256::digest(text.trim().as_bytes()));
        Self {
            id: format!("q-{}", &digest[..12]),
            text,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_id_is_stable() {
        let a = UserQuery::from_text("average budget by genre");
        let b = UserQuery::from_text("  average budget by genre ");
        assert_eq!(a.id, b.id);
        assert!(a.id.starts_with("q-") && a.id.len() == 14);
    }
}
