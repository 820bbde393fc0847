//! The 62-character class set: `0-9`, `a-z`, `A-Z`, in that order.

pub const NUM_CLASSES: usize = 62;

/// Class index of a character, or `None` outside the 62-character set.
pub fn label_of(ch: char) -> Option<usize> {
    match ch {
        '0'..='9' => Some(ch as usize - '0' as usize),
        'a'..='z' => Some(10 + ch as usize - 'a' as usize),
        'A'..='Z' => Some(36 + ch as usize - 'A' as usize),
        _ => None,
    }
}

/// Character of a class index.
pub fn char_of(label: usize) -> Option<char> {
    let base = match label {
        0..=9 => b'0' + label as u8,
        10..=35 => b'a' + (label - 10) as u8,
        36..=61 => b'A' + (label - 36) as u8,
        _ => return None,
    };
    Some(base as char)
}

/// Parses a one-character string into a class index.
pub fn label_of_str(s: &str) -> Option<usize> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => label_of(c),
        _ => None,
    }
}

/// All class indices.
pub fn all() -> impl Iterator<Item = usize> {
    0..NUM_CLASSES
}
