//! Atomic file output, content hashes and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    // Temp files are created owner-only.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Parses a JSON file, reporting the path of the offending field on error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_json(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            anyhow::anyhow!("schema error: {inner}")
        } else {
            anyhow::anyhow!("schema error at `{path}`: {inner}")
        }
    })
}

/// What a command read and wrote, with enough configuration to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to the manifest's directory, to content hash.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<()> {
        self.outputs.insert(rel.into(), sha256_file(&dir.join(rel))?);
        Ok(())
    }

    /// True when the manifest at `path` describes the same run and every
    /// output it lists is still present with the recorded hash.
    pub fn is_fresh(path: &Path, expected: &Manifest) -> bool {
        let Ok(found) = read_json::<Manifest>(path) else {
            return false;
        };
        if found.command != expected.command
            || found.version != expected.version
            || found.seed != expected.seed
            || found.config != expected.config
            || found.inputs != expected.inputs
        {
            return false;
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        found
            .outputs
            .iter()
            .all(|(rel, hash)| sha256_file(&dir.join(rel)).is_ok_and(|h| &h == hash))
    }
}

/// Resolves a command's output path against the output root.
pub fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_text(&p, "first version").unwrap();
        write_text(&p, "x").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "x");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_old_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_text(&p, "old").unwrap();
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            anyhow::bail!("interrupted")
        });
        assert!(r.is_err());
        assert_eq!(fs::read_to_string(&p).unwrap(), "old");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn schema_errors_name_the_field() {
        #[derive(Debug, Deserialize)]
        #[serde(deny_unknown_fields)]
        #[allow(dead_code)]
        struct Inner {
            need: u32,
        }
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Outer {
            inner: Inner,
        }
        let e = parse_json::<Outer>(r#"{"inner": {}}"#).unwrap_err().to_string();
        assert!(e.contains("missing field `need`"), "{e}");
        let e = parse_json::<Outer>(r#"{"inner": {"need": 1, "extra": 2}}"#).unwrap_err().to_string();
        assert!(e.contains("inner") && e.contains("extra"), "{e}");
    }

    #[test]
    fn manifest_freshness_tracks_outputs() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("out.txt"), "data").unwrap();
        let mut m = Manifest::new("test", Some(1), &serde_json::json!({"a": 1})).unwrap();
        m.add_output(dir.path(), "out.txt").unwrap();
        let mp = dir.path().join("manifest.json");
        write_json(&mp, &m).unwrap();
        let expected = Manifest::new("test", Some(1), &serde_json::json!({"a": 1})).unwrap();
        assert!(Manifest::is_fresh(&mp, &expected));
        let other = Manifest::new("test", Some(2), &serde_json::json!({"a": 1})).unwrap();
        assert!(!Manifest::is_fresh(&mp, &other));
        write_text(&dir.path().join("out.txt"), "changed").unwrap();
        assert!(!Manifest::is_fresh(&mp, &expected));
    }
}
