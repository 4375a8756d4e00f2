use std::collections::BTreeSet;

use super::TemplateError;

/// Piece of a command line: literal text or a `{{key.path}}` reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Text(&'a str),
    Key(&'a str),
}

const OPEN: &str = "{{";
const CLOSE: &str = "}}";

fn valid_path(path: &str) -> bool {
    !path.is_empty()
        && path.split('.').all(|seg| {
            !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

/// Splits `text` into literal and placeholder segments. Whitespace just
/// inside the braces is ignored.
pub fn parse(text: &str) -> Result<Vec<Segment<'_>>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        if start > 0 {
            out.push(Segment::Text(&rest[..start]));
        }
        let after = &rest[start + OPEN.len()..];
        let end = after
            .find(CLOSE)
            .ok_or_else(|| TemplateError::MalformedPlaceholder { text: text.to_string() })?;
        let path = after[..end].trim();
        if !valid_path(path) {
            return Err(TemplateError::MalformedPlaceholder { text: text.to_string() });
        }
        out.push(Segment::Key(path));
        rest = &after[end + CLOSE.len()..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    Ok(out)
}

/// Key paths referenced by `text`.
pub fn keys(text: &str) -> Result<BTreeSet<String>, TemplateError> {
    Ok(parse(text)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Key(k) => Some(k.to_string()),
            Segment::Text(_) => None,
        })
        .collect())
}

/// Whether `text` still contains anything that looks like a placeholder.
pub fn has_residue(text: &str) -> bool {
    text.contains(OPEN)
}

pub fn substitute<F>(text: &str, mut lookup: F) -> Result<String, TemplateError>
where
    F: FnMut(&str) -> Result<String, TemplateError>,
{
    let mut out = String::with_capacity(text.len());
    for seg in parse(text)? {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Key(k) => out.push_str(&lookup(k)?),
        }
    }
    Ok(out)
}
