//! Word tokenisation and feature hashing.

/// Lowercased word tokens. Apostrophes inside words are kept so that
/// contractions such as "can't" stay one token.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        if ch.is_alphanumeric() || (ch == '\'' && !current.is_empty()) {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            out.push(finish(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(finish(&mut current));
    }
    out
}

fn finish(current: &mut String) -> String {
    let word = current.trim_end_matches('\'').to_string();
    current.clear();
    word
}

/// Whitespace token count; the token budget unit for prompt truncation.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keep at most `max_tokens` whitespace tokens of `text`.
pub fn clip_tokens(text: &str, max_tokens: usize) -> String {
    if token_count(text) <= max_tokens {
        return text.to_string();
    }
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Bucket index for `feature` within a namespace.
pub fn bucket(namespace: &str, feature: &str, buckets: usize) -> usize {
    let mut key = Vec::with_capacity(namespace.len() + feature.len() + 1);
    key.extend_from_slice(namespace.as_bytes());
    key.push(0x1f);
    key.extend_from_slice(feature.as_bytes());
    (fnv1a(&key) % buckets as u64) as usize
}

/// Sparse count vector: sorted `(index, count)` pairs with unique indices.
pub fn sparse_counts(indices: impl IntoIterator<Item = usize>) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = indices.into_iter().collect();
    idx.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(idx.len());
    for i in idx {
        match out.last_mut() {
            Some((last, count)) if *last == i => *count += 1.0,
            _ => out.push((i, 1.0)),
        }
    }
    out
}
