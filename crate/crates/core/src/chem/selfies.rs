//! SELFIES token stream handling.
//!
//! SELFIES strings are treated purely as text: a sequence of `[...]` groups,
//! each an opaque token. They are never decoded into molecular graphs.

use super::{SelfiesError, TokenSequence, Vocab};

/// Tokenizes a SELFIES string into bracket groups.
///
/// Every byte must belong to a `[...]` group; groups cannot nest or be
/// empty. Violations report the byte offset of the offending character.
pub fn tokenize_selfies(input: &str) -> Result<TokenSequence, SelfiesError> {
    let bytes = input.as_bytes();
    let mut vocab = Vocab::new();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            return Err(SelfiesError::MalformedBracket(i));
        }
        let start = i;
        i += 1;
        while i < bytes.len() && bytes[i] != b']' && bytes[i] != b'[' {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b']' {
            let at = if i < bytes.len() { i } else { start };
            return Err(SelfiesError::MalformedBracket(at));
        }
        if i == start + 1 {
            return Err(SelfiesError::MalformedBracket(i));
        }
        tokens.push(vocab.intern(&input[start..=i]));
        i += 1;
    }
    Ok(TokenSequence { tokens, vocab })
}
