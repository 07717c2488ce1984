//! Small filesystem helpers shared by the registry, workspaces and exporter.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no parent"))?;
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Files under `root` in sorted relative-path order.
pub fn walk_files(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let ty = entry.file_type()?;
            if ty.is_dir() {
                stack.push(entry.path());
            } else if ty.is_file() {
                out.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Content hash of a directory tree: relative paths and file bytes, in
/// sorted order. Lock files are ignored since their presence is not content.
pub fn tree_hash(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    if !root.exists() {
        return Ok(hex::encode(hasher.finalize()));
    }
    for rel in walk_files(root)? {
        if rel.file_name().is_some_and(|n| n == ".lock") {
            continue;
        }
        let bytes = fs::read(root.join(&rel))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn copy_dir(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for rel in walk_files(src)? {
        let target = dst.join(&rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(src.join(&rel), &target)?;
    }
    Ok(())
}

pub fn is_empty_dir(path: &Path) -> io::Result<bool> {
    Ok(fs::read_dir(path)?.next().is_none())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_hash_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let empty = tree_hash(dir.path()).unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        assert_eq!(
            tree_hash(dir.path()).unwrap(),
            empty,
            "empty dirs carry no content"
        );
        fs::write(dir.path().join("a/x"), b"1").unwrap();
        let one = tree_hash(dir.path()).unwrap();
        assert_ne!(one, empty);
        fs::write(dir.path().join("a/x"), b"2").unwrap();
        assert_ne!(tree_hash(dir.path()).unwrap(), one);
        fs::write(dir.path().join("a/x"), b"1").unwrap();
        assert_eq!(tree_hash(dir.path()).unwrap(), one);
        fs::write(dir.path().join(".lock"), b"").unwrap();
        assert_eq!(tree_hash(dir.path()).unwrap(), one);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        atomic_write(&p, b"old").unwrap();
        atomic_write(&p, b"new").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"new");
        assert_eq!(walk_files(dir.path()).unwrap(), vec![PathBuf::from("f")]);
    }
}
