//! Static collection of the system's source into a bounded prompt payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub const ALLOWED_EXTENSIONS: [&str; 6] = ["py", "yaml", "yml", "json", "toml", "md"];
pub const DEFAULT_BUDGET_BYTES: usize = 200 * 1024;

/// Bytes reserved at the end of a truncated file for the marker.
const MARKER_RESERVE: usize = 96;

const SKIPPED_DIRS: [&str; 6] = [
    "__pycache__",
    "node_modules",
    "venv",
    "target",
    "dist",
    "build",
];

pub const FRAMEWORKS: [(&str, &str); 1] = [(
    "autogen",
    include_str!("../../assets/frameworks/autogen.md"),
)];

pub fn framework_knowledge(name: &str) -> Option<&'static str> {
    FRAMEWORKS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, text)| *text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBundle {
    pub files: Vec<SourceFile>,
    pub framework: String,
    pub framework_knowledge: String,
    pub input_spec: String,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("no source files with an allowed extension ({exts}) under {0}", exts = ALLOWED_EXTENSIONS.join(", "))]
    NoFiles(String),
    #[error("no knowledge asset for framework `{0}` (available: {names})", names = FRAMEWORKS.map(|f| f.0).join(", "))]
    UnknownFramework(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("byte budget {0} is too small")]
    Budget(usize),
}

fn floor_char_boundary(s: &str, mut i: usize) -> usize {
    if i >= s.len() {
        return s.len();
    }
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// The largest per-file cap `c` with `sum(min(size, c)) <= budget`.
fn water_level(sizes: &[usize], budget: usize) -> usize {
    let (mut lo, mut hi) = (0usize, sizes.iter().copied().max().unwrap_or(0));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if sizes.iter().map(|s| (*s).min(mid)).sum::<usize>() <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Cuts the largest files first, down to a common level, so that the total
/// (markers included) fits in `budget`.
pub fn fit_to_budget(files: &mut [SourceFile], budget: usize) -> Result<(), BundleError> {
    let sizes: Vec<usize> = files.iter().map(|f| f.content.len()).collect();
    if sizes.iter().sum::<usize>() <= budget {
        return Ok(());
    }
    let level = water_level(&sizes, budget);
    if level <= MARKER_RESERVE {
        return Err(BundleError::Budget(budget));
    }
    for f in files.iter_mut().filter(|f| f.content.len() > level) {
        let total = f.content.len();
        let keep = floor_char_boundary(&f.content, level - MARKER_RESERVE);
        f.content.truncate(keep);
        f.content.push_str(&format!(
            "\n[... truncated: kept {keep} of {total} bytes ...]\n"
        ));
        f.truncated = true;
    }
    Ok(())
}

impl SourceBundle {
    pub fn total_bytes(&self) -> usize {
        self.files.iter().map(|f| f.content.len()).sum()
    }

    /// Walks `dir` for allow-listed files, sorted by relative path.
    pub fn collect(dir: &Path, framework: &str, budget: usize) -> Result<Self, BundleError> {
        let knowledge = framework_knowledge(framework)
            .ok_or_else(|| BundleError::UnknownFramework(framework.into()))?;
        let mut files = Vec::new();
        let walker = WalkDir::new(dir)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| {
                let name = e.file_name().to_string_lossy();
                e.depth() == 0 || !(name.starts_with('.') || SKIPPED_DIRS.contains(&name.as_ref()))
            });
        for entry in walker {
            let entry = entry.map_err(|e| BundleError::Io {
                path: dir.display().to_string(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let allowed = entry
                .path()
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ALLOWED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if !allowed {
                continue;
            }
            let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
            let bytes = std::fs::read(entry.path()).map_err(|source| BundleError::Io {
                path: entry.path().display().to_string(),
                source,
            })?;
            // Binary files masquerading under an allowed extension are skipped.
            let Ok(content) = String::from_utf8(bytes) else {
                log::warn!("skipping non-UTF-8 file {}", rel.display());
                continue;
            };
            files.push(SourceFile {
                path: rel.to_string_lossy().replace('\\', "/"),
                content,
                truncated: false,
            });
        }
        if files.is_empty() {
            return Err(BundleError::NoFiles(dir.display().to_string()));
        }
        let input_spec = files
            .iter()
            .find(|f| f.path.eq_ignore_ascii_case("readme.md"))
            .map(|f| f.content.chars().take(4000).collect())
            .unwrap_or_default();
        Self::from_files(files, framework, knowledge, input_spec, budget)
    }

    pub fn from_files(
        mut files: Vec<SourceFile>,
        framework: &str,
        knowledge: &str,
        input_spec: String,
        budget: usize,
    ) -> Result<Self, BundleError> {
        if files.is_empty() {
            return Err(BundleError::NoFiles("(in-memory bundle)".into()));
        }
        fit_to_budget(&mut files, budget)?;
        Ok(Self {
            files,
            framework: framework.to_string(),
            framework_knowledge: knowledge.to_string(),
            input_spec,
        })
    }

    pub fn render_files(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&format!(
                "### File: {}\n```\n{}\n```\n\n",
                f.path,
                f.content.trim_end()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(path: &str, n: usize) -> SourceFile {
        SourceFile {
            path: path.into(),
            content: "a".repeat(n),
            truncated: false,
        }
    }

    #[test]
    fn water_fill_cuts_largest_first() {
        let mut files = vec![file("small", 100), file("mid", 2_000), file("big", 10_000)];
        fit_to_budget(&mut files, 4_000).unwrap();
        assert!(!files[0].truncated);
        assert!(files[1].truncated && files[2].truncated);
        let kept = |f: &SourceFile| f.content.find('\n').unwrap();
        assert_eq!(kept(&files[1]), kept(&files[2]));
        assert!(files.iter().map(|f| f.content.len()).sum::<usize>() <= 4_000);
        assert!(files[2].content.contains("truncated: kept"));
    }

    #[test]
    fn under_budget_untouched() {
        let mut files = vec![file("a", 10), file("b", 20)];
        fit_to_budget(&mut files, 30).unwrap();
        assert!(files.iter().all(|f| !f.truncated));
    }

    #[test]
    fn collects_allow_listed_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("app.py"), "print('hi')").unwrap();
        std::fs::write(dir.path().join("README.md"), "Make short videos.").unwrap();
        std::fs::write(dir.path().join("logo.png"), [0u8, 1, 2]).unwrap();
        std::fs::create_dir(dir.path().join(".git")).unwrap();
        std::fs::write(dir.path().join(".git/config.toml"), "x").unwrap();
        let b = SourceBundle::collect(dir.path(), "autogen", DEFAULT_BUDGET_BYTES).unwrap();
        let paths: Vec<&str> = b.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["README.md", "app.py"]);
        assert_eq!(b.input_spec, "Make short videos.");
        assert!(SourceBundle::collect(dir.path(), "crewai", DEFAULT_BUDGET_BYTES).is_err());
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            SourceBundle::collect(empty.path(), "autogen", DEFAULT_BUDGET_BYTES),
            Err(BundleError::NoFiles(_))
        ));
    }
}
