//! Tokenization and sentence segmentation shared by every component.
//!
//! All scoring (retrieval, reading, metrics) runs over the same normalized
//! token stream, so scores are comparable across modules.

/// Characters that end a sentence when followed by whitespace or end of text.
pub const SENTENCE_TERMINATORS: [char; 3] = ['.', '!', '?'];

/// Lowercases, splits on whitespace and strips every non-alphanumeric
/// character from each token. Tokens that end up empty are dropped.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let tok: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            (!tok.is_empty()).then_some(tok)
        })
        .collect()
}

/// Splits `body` after every terminator that is followed by whitespace (or
/// that closes the text). Abbreviations are not special-cased, so
/// `"Mr. Smith left"` yields `["Mr.", "Smith left"]`.
pub fn segment_sentences(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !SENTENCE_TERMINATORS.contains(&c) {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            push_trimmed(&mut out, &body[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &body[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}
