fn is_kept(c: char) -> bool {
    matches!(c, '\u{0980}'..='\u{09FF}') || c.is_ascii_alphanumeric()
}

/// Keeps Bangla-block characters (U+0980..=U+09FF), ASCII letters and ASCII
/// digits. Everything else becomes a space, then whitespace runs collapse to
/// one space and the ends are trimmed.
pub fn clean_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars() {
        if is_kept(c) {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}
