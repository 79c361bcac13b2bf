use serde::{Deserialize, Serialize};

use super::Collection;

pub const MAX_CHUNK_CHARS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub source_id: String,
    pub collection: Collection,
    pub text: String,
    /// Half-open character range in the source.
    pub char_span: (usize, usize),
}

/// Half-open character span of one sentence, surrounding whitespace excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

fn trimmed(chars: &[char], start: usize, end: usize) -> Option<Span> {
    let mut s = start;
    let mut e = end;
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    (s < e).then_some(Span { start: s, end: e })
}

/// Sentence spans: a sentence ends after `.`, `!` or `?` followed by whitespace
/// (or the end of text), and at blank lines.
pub fn sentence_spans(chars: &[char]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            out.extend(trimmed(chars, start, i + 1));
            start = i + 1;
        } else if c == '\n' {
            // Blank line: newline, optional horizontal space, newline.
            let mut j = i + 1;
            while j < chars.len() && chars[j] != '\n' && chars[j].is_whitespace() {
                j += 1;
            }
            if chars.get(j) == Some(&'\n') {
                out.extend(trimmed(chars, start, i));
                start = j + 1;
                i = j;
            }
        }
        i += 1;
    }
    out.extend(trimmed(chars, start, chars.len()));
    out
}

/// Splits a span longer than `limit` at the last whitespace before the limit,
/// or exactly at the limit when there is none.
fn hard_split(chars: &[char], span: Span, limit: usize) -> Vec<Span> {
    let mut out = Vec::new();
    let mut rest = span;
    while rest.len() > limit {
        let cut = (rest.start + 1..=rest.start + limit)
            .rev()
            .find(|&k| chars[k].is_whitespace())
            .unwrap_or(rest.start + limit);
        match trimmed(chars, rest.start, cut) {
            Some(piece) => out.push(piece),
            None => break,
        }
        match trimmed(chars, cut, rest.end) {
            Some(r) => rest = r,
            None => return out,
        }
    }
    out.push(rest);
    out
}

/// Greedy packing of consecutive segments into spans of at most `limit` characters.
pub fn pack(segments: &[Span], limit: usize) -> Vec<Span> {
    let mut out: Vec<Span> = Vec::new();
    let mut current: Option<Span> = None;
    for seg in segments {
        current = match current {
            Some(c) if seg.end - c.start <= limit => Some(Span { start: c.start, end: seg.end }),
            Some(c) => {
                out.push(c);
                Some(*seg)
            }
            None => Some(*seg),
        };
    }
    out.extend(current);
    out
}

/// Character spans of the chunks of `text`.
pub fn chunk_spans(text: &str, limit: usize) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let segments: Vec<Span> = sentence_spans(&chars)
        .into_iter()
        .flat_map(|s| hard_split(&chars, s, limit))
        .collect();
    pack(&segments, limit)
}

/// Sentence-preserving chunks of at most [`MAX_CHUNK_CHARS`] characters.
/// Chunk ids are `<source_id>#<index>`, zero-padded to four digits.
pub fn chunk_text(source_id: &str, collection: Collection, text: &str) -> Vec<Chunk> {
    let chars: Vec<char> = text.chars().collect();
    chunk_spans(text, MAX_CHUNK_CHARS)
        .into_iter()
        .enumerate()
        .map(|(i, s)| Chunk {
            id: format!("{source_id}#{i:04}"),
            source_id: source_id.to_string(),
            collection,
            text: chars[s.start..s.end].iter().collect(),
            char_span: (s.start, s.end),
        })
        .collect()
}
