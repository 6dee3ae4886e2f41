//! Text normalization shared by label names, LLM outputs, and cache keys.

/// Characters removed from label names and model outputs. These are the
/// characters the classification prompt tells the model not to emit.
const STRIPPED: [char; 3] = ['"', '\'', '*'];

/// Lowercase, drop `"`, `'` and `*`, trim, and collapse internal whitespace
/// to single spaces.
pub fn normalize_label(raw: &str) -> String {
    let lowered: String = raw
        .chars()
        .filter(|c| !STRIPPED.contains(c))
        .flat_map(char::to_lowercase)
        .collect();
    collapse_whitespace(&lowered)
}

/// Trim and collapse every run of whitespace to a single space.
pub fn collapse_whitespace(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a. Used wherever a hash must be stable across runs and
/// platforms (mock embeddings, cache record checksums).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
