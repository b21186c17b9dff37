//! Named fixture documents for the fake cluster.

use std::path::Path;

use super::{ClusterModel, KubeError};

pub const DEMO: &str = include_str!("../../fixtures/demo.toml");
pub const EMPTY: &str = include_str!("../../fixtures/empty.toml");

/// Source text of a built-in fixture.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "demo" => Some(DEMO),
        "empty" => Some(EMPTY),
        _ => None,
    }
}

/// Loads `name` from `dir/<name>.toml` when a directory is given and the file
/// exists, otherwise from the built-in set.
pub fn seed(name: &str, dir: Option<&Path>) -> Result<ClusterModel, KubeError> {
    if name.is_empty() || name.contains(['/', '\\']) || name.contains("..") {
        return Err(KubeError::FixtureNotFound(name.to_string()));
    }
    if let Some(dir) = dir {
        let path = dir.join(format!("{name}.toml"));
        if path.is_file() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| KubeError::Backend(format!("{}: {e}", path.display())))?;
            return ClusterModel::from_toml(&text);
        }
    }
    let text = builtin(name).ok_or_else(|| KubeError::FixtureNotFound(name.to_string()))?;
    ClusterModel::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let demo = seed("demo", None).unwrap();
        assert_eq!(demo.namespaces.len(), 3);
        assert!(seed("empty", None).unwrap().is_empty());
        assert_eq!(seed("missing", None), Err(KubeError::FixtureNotFound("missing".into())));
        assert!(matches!(seed("../etc", None), Err(KubeError::FixtureNotFound(_))));
    }
}
