//! Persistent embedding cache.
//!
//! On-disk layout inside the cache directory:
//!
//! * `embeddings.bin`: back-to-back records, each
//!   `b"EMB1" | dim: u32 LE | dim x f64 LE | fnv1a64(values bytes): u64 LE`.
//! * `manifest.tsv`: one line per record,
//!   `offset \t dim \t provider_id \t model_id \t text`.
//!
//! The text column is whitespace-collapsed, so it never contains tabs or
//! newlines. A record is written before its manifest line; a record or line
//! that fails validation on load is skipped with a warning. Later lines for
//! the same key win.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::text::{collapse_whitespace, fnv1a64};

const MAGIC: &[u8; 4] = b"EMB1";
const RECORDS: &str = "embeddings.bin";
const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    provider: String,
    model: String,
    text: String,
}

struct Files {
    records: File,
    manifest: File,
    end: u64,
}

/// In-memory map backed (optionally) by the files described above.
pub struct EmbeddingCache {
    entries: Mutex<HashMap<CacheKey, EmbeddingVector>>,
    files: Mutex<Option<Files>>,
    dir: Option<PathBuf>,
    dropped: usize,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            files: Mutex::new(None),
            dir: None,
            dropped: 0,
        }
    }

    /// Open (or create) a cache directory and load every valid record.
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let rec_path = dir.join(RECORDS);
        let man_path = dir.join(MANIFEST);
        let mut records = OpenOptions::new().create(true).read(true).append(true).open(&rec_path)?;
        let manifest = OpenOptions::new().create(true).append(true).open(&man_path)?;

        let mut entries = HashMap::new();
        let mut dropped = 0;
        let reader = BufReader::new(File::open(&man_path)?);
        for (n, line) in reader.lines().enumerate() {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    log::warn!("embedding cache manifest line {}: {e}; skipping", n + 1);
                    dropped += 1;
                    continue;
                }
            };
            if line.is_empty() {
                continue;
            }
            match parse_line(&line).and_then(|(offset, dim, key)| {
                read_record(&mut records, offset, dim).map(|v| (key, v))
            }) {
                Ok((key, v)) => {
                    entries.insert(key, v);
                }
                Err(why) => {
                    log::warn!("embedding cache manifest line {}: {why}; dropping entry", n + 1);
                    dropped += 1;
                }
            }
        }
        let end = records.seek(SeekFrom::End(0))?;
        Ok(Self {
            entries: Mutex::new(entries),
            files: Mutex::new(Some(Files { records, manifest, end })),
            dir: Some(dir.to_path_buf()),
            dropped,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries skipped as corrupt when the cache was opened.
    pub fn dropped_on_load(&self) -> usize {
        self.dropped
    }

    pub fn get(&self, provider: &str, model: &str, text: &str) -> Option<EmbeddingVector> {
        let key = make_key(provider, model, text);
        self.entries.lock().unwrap().get(&key).cloned()
    }

    /// Insert and, for a file-backed cache, append to disk. Writes are
    /// serialized through one lock.
    pub fn insert(
        &self,
        provider: &str,
        model: &str,
        text: &str,
        vector: EmbeddingVector,
    ) -> io::Result<()> {
        let key = make_key(provider, model, text);
        {
            let mut files = self.files.lock().unwrap();
            if let Some(f) = files.as_mut() {
                let offset = f.end;
                let bytes = encode_record(&vector);
                f.records.write_all(&bytes)?;
                f.records.flush()?;
                f.end += bytes.len() as u64;
                writeln!(
                    f.manifest,
                    "{offset}\t{}\t{}\t{}\t{}",
                    vector.dim(),
                    key.provider,
                    key.model,
                    key.text
                )?;
                f.manifest.flush()?;
            }
        }
        self.entries.lock().unwrap().insert(key, vector);
        Ok(())
    }
}

fn sanitize(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

fn make_key(provider: &str, model: &str, text: &str) -> CacheKey {
    CacheKey {
        provider: sanitize(provider),
        model: sanitize(model),
        text: collapse_whitespace(text),
    }
}

fn parse_line(line: &str) -> Result<(u64, usize, CacheKey), String> {
    let mut parts = line.splitn(5, '\t');
    let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
    let offset = next("offset")?.parse::<u64>().map_err(|e| format!("offset: {e}"))?;
    let dim = next("dim")?.parse::<usize>().map_err(|e| format!("dim: {e}"))?;
    let provider = next("provider")?.to_owned();
    let model = next("model")?.to_owned();
    let text = next("text")?.to_owned();
    Ok((offset, dim, CacheKey { provider, model, text }))
}

fn encode_record(v: &EmbeddingVector) -> Vec<u8> {
    let mut payload = Vec::with_capacity(v.dim() * 8);
    for x in v.values() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out
}

fn read_record(file: &mut File, offset: u64, dim: usize) -> Result<EmbeddingVector, String> {
    let io = |e: io::Error| e.to_string();
    file.seek(SeekFrom::Start(offset)).map_err(io)?;
    let mut head = [0u8; 8];
    file.read_exact(&mut head).map_err(io)?;
    if &head[..4] != MAGIC {
        return Err("bad record magic".into());
    }
    let stored_dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    if stored_dim != dim {
        return Err(format!("record dim {stored_dim} does not match manifest dim {dim}"));
    }
    let mut payload = vec![0u8; dim * 8];
    file.read_exact(&mut payload).map_err(io)?;
    let mut sum = [0u8; 8];
    file.read_exact(&mut sum).map_err(io)?;
    if u64::from_le_bytes(sum) != fnv1a64(&payload) {
        return Err("record checksum mismatch".into());
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingVector::new(values).map_err(|e| e.to_string())
}

/// Read-through cache in front of another provider. Misses are embedded in
/// batches; every stored vector is written to the cache as soon as its batch
/// returns, so an interrupted build resumes where it stopped.
pub struct CachedEmbedder<'a> {
    inner: &'a dyn EmbeddingProvider,
    cache: &'a EmbeddingCache,
    batch_size: usize,
    provider_calls: AtomicUsize,
    texts_embedded: AtomicUsize,
}

impl<'a> CachedEmbedder<'a> {
    pub fn new(inner: &'a dyn EmbeddingProvider, cache: &'a EmbeddingCache) -> Self {
        Self {
            inner,
            cache,
            batch_size: 64,
            provider_calls: AtomicUsize::new(0),
            texts_embedded: AtomicUsize::new(0),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Calls made to the wrapped provider so far.
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for CachedEmbedder<'_> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let (pid, mid) = (self.inner.provider_id(), self.inner.model_id());
        let keys: Vec<String> = texts.iter().map(|t| collapse_whitespace(t)).collect();
        if keys.iter().any(String::is_empty) {
            return Err(EmbedError::EmptyText);
        }
        let mut out: Vec<Option<EmbeddingVector>> =
            keys.iter().map(|k| self.cache.get(pid, mid, k)).collect();

        let mut missing: Vec<&String> = Vec::new();
        for (k, slot) in keys.iter().zip(&out) {
            if slot.is_none() && !missing.contains(&k) {
                missing.push(k);
            }
        }
        for chunk in missing.chunks(self.batch_size) {
            let batch: Vec<String> = chunk.iter().map(|s| (*s).clone()).collect();
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let vectors = self.inner.embed_batch(&batch)?;
            if vectors.len() != batch.len() {
                return Err(EmbedError::CountMismatch { expected: batch.len(), got: vectors.len() });
            }
            self.texts_embedded.fetch_add(batch.len(), Ordering::SeqCst);
            for (text, v) in batch.iter().zip(vectors) {
                if let Err(e) = self.cache.insert(pid, mid, text, v.clone()) {
                    log::warn!("embedding cache write failed: {e}");
                }
                for (k, slot) in keys.iter().zip(out.iter_mut()) {
                    if k == text {
                        *slot = Some(v.clone());
                    }
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every key filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;

    #[test]
    fn persist_and_reload_is_bitwise_equal() {
        let dir = tempfile::tempdir().unwrap();
        let e = HashEmbedder::default();
        let texts: Vec<String> = ["pet supplies", "cat  flaps", "dogs"].iter().map(|s| s.to_string()).collect();
        let first = {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            CachedEmbedder::new(&e, &cache).embed_batch(&texts).unwrap()
        };
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 3);
        let wrapped = CachedEmbedder::new(&e, &cache);
        let second = wrapped.embed_batch(&texts).unwrap();
        assert_eq!(wrapped.provider_calls(), 0);
        for (a, b) in first.iter().zip(&second) {
            let bits = |v: &EmbeddingVector| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn duplicate_texts_embedded_once() {
        let e = HashEmbedder::default();
        let cache = EmbeddingCache::in_memory();
        let wrapped = CachedEmbedder::new(&e, &cache);
        let texts = vec!["a b".to_string(), "a  b".to_string(), "c".to_string()];
        let out = wrapped.embed_batch(&texts).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(wrapped.texts_embedded(), 2);
    }

    #[test]
    fn corrupt_entries_are_dropped_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let e = HashEmbedder::default();
        {
            let cache = EmbeddingCache::open(dir.path()).unwrap();
            let texts = vec!["alpha".to_string(), "beta".to_string()];
            CachedEmbedder::new(&e, &cache).embed_batch(&texts).unwrap();
        }
        // flip one payload byte of the first record and append a garbage line
        let rec = dir.path().join(RECORDS);
        let mut bytes = fs::read(&rec).unwrap();
        bytes[10] ^= 0xff;
        fs::write(&rec, bytes).unwrap();
        let mut man = OpenOptions::new().append(true).open(dir.path().join(MANIFEST)).unwrap();
        writeln!(man, "not-a-number\t3\tx").unwrap();

        let cache = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.dropped_on_load(), 2);
        assert!(cache.get("mock-hash", "hash-bag-64", "beta").is_some());
        assert!(cache.get("mock-hash", "hash-bag-64", "alpha").is_none());
    }
}
