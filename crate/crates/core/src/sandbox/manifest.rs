use std::collections::HashSet;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Artifact, ArtifactKind};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Image,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ManifestKind,
    pub file: String,
}

/// `{"artifacts":[{"name":..,"kind":"image"|"table","file":..}]}`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_confined(rel: &str) -> bool {
    let path = Path::new(rel);
    !rel.is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn looks_like_image(file: &str, bytes: &[u8]) -> bool {
    let lower = file.to_ascii_lowercase();
    if lower.ends_with(".png") {
        return bytes.starts_with(b"\x89PNG\r\n\x1a\n");
    }
    if lower.ends_with(".svg") {
        let head = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
        return head.contains("<svg");
    }
    false
}

/// Reads and checks `manifest.json` in `workdir`, returning one artifact per
/// entry followed by the manifest itself.
pub fn collect_artifacts(workdir: &Path) -> Result<Vec<Artifact>, String> {
    let manifest_path = workdir.join(MANIFEST_FILE);
    let manifest_bytes = std::fs::read(&manifest_path).map_err(|_| format!("{MANIFEST_FILE} was not written"))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| format!("{MANIFEST_FILE} does not match the schema: {e}"))?;
    let root = workdir
        .canonicalize()
        .map_err(|e| format!("workdir unavailable: {e}"))?;

    let mut names = HashSet::new();
    let mut artifacts = Vec::with_capacity(manifest.artifacts.len() + 1);
    for entry in &manifest.artifacts {
        if entry.name.trim().is_empty() {
            return Err("artifact with empty name".into());
        }
        if !names.insert(entry.name.as_str()) {
            return Err(format!("duplicate artifact name {:?}", entry.name));
        }
        if !is_confined(&entry.file) {
            return Err(format!(
                "artifact {:?} points outside the working directory: {}",
                entry.name, entry.file
            ));
        }
        let path = root.join(&entry.file);
        let resolved = path
            .canonicalize()
            .map_err(|_| format!("artifact {:?} file {} is missing", entry.name, entry.file))?;
        if !resolved.starts_with(&root) || !resolved.is_file() {
            return Err(format!(
                "artifact {:?} does not resolve to a file inside the working directory",
                entry.name
            ));
        }
        let bytes = std::fs::read(&resolved).map_err(|e| e.to_string())?;
        let kind = match entry.kind {
            ManifestKind::Image => {
                if !looks_like_image(&entry.file, &bytes) {
                    return Err(format!("image artifact {:?} is not a PNG or SVG file", entry.name));
                }
                ArtifactKind::Image
            }
            ManifestKind::Table => ArtifactKind::Table,
        };
        artifacts.push(Artifact {
            name: entry.name.clone(),
            kind,
            file: entry.file.clone(),
            byte_size: bytes.len() as u64,
            digest: digest_bytes(&bytes),
        });
    }
    artifacts.push(Artifact {
        name: MANIFEST_FILE.to_string(),
        kind: ArtifactKind::Manifest,
        file: MANIFEST_FILE.to_string(),
        byte_size: manifest_bytes.len() as u64,
        digest: digest_bytes(&manifest_bytes),
    });
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confinement() {
        assert!(is_confined("a/b.csv"));
        assert!(is_confined("./a.csv"));
        assert!(!is_confined("../a.csv"));
        assert!(!is_confined("/etc/passwd"));
        assert!(!is_confined(""));
    }

    #[test]
    fn schema_is_strict() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.csv"), "a\n1\n").unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"artifacts":[{"name":"t","kind":"table","file":"t.csv","extra":1}]}"#,
        )
        .unwrap();
        assert!(collect_artifacts(dir.path()).is_err());
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"artifacts":[{"name":"t","kind":"chart","file":"t.csv"}]}"#,
        )
        .unwrap();
        assert!(collect_artifacts(dir.path()).is_err());
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"artifacts":[{"name":"t","kind":"table","file":"t.csv"}]}"#,
        )
        .unwrap();
        let arts = collect_artifacts(dir.path()).unwrap();
        assert_eq!(arts.len(), 2);
        assert_eq!(arts[0].digest, digest_bytes(b"a\n1\n"));
        assert_eq!(arts[1].kind, ArtifactKind::Manifest);
    }

    #[test]
    fn image_must_be_png_or_svg() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.png"), "not a png").unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"{"artifacts":[{"name":"c","kind":"image","file":"c.png"}]}"#,
        )
        .unwrap();
        assert!(collect_artifacts(dir.path()).unwrap_err().contains("PNG or SVG"));
    }
}
