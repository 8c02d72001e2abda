//! Byte spans for diagnostics.

/// A half-open byte range into the source text.
///
/// Spans are carried for error reporting only; they compare equal to any
/// other span so that AST equality is structural "modulo spans".
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    /// Smallest span covering both.
    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }

    /// 1-based line and column of the span start within `text`.
    pub fn line_col(&self, text: &str) -> (usize, usize) {
        let mut line = 1;
        let mut col = 1;
        for (i, ch) in text.char_indices() {
            if i >= self.start {
                break;
            }
            if ch == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        (line, col)
    }
}

impl PartialEq for Span {
    fn eq(&self, _other: &Span) -> bool {
        true
    }
}

impl Eq for Span {}
