use std::fmt;
use std::str::FromStr;

/// Half-open index range `[start, end)`, rendered as `start-end` in keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const EMPTY: Span = Span { start: 0, end: 0 };

    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "inverted span {start}-{end}");
        Self { start, end }
    }

    pub fn full(len: usize) -> Self {
        Self::new(0, len)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn covers(&self, other: Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersect(&self, other: Span) -> Option<Span> {
        let s = self.start.max(other.start);
        let e = self.end.min(other.end);
        (s < e).then(|| Span::new(s, e))
    }

    /// Splits into a first half of `ceil(len/2)` and a second of `floor(len/2)`.
    pub fn halves(&self) -> (Span, Span) {
        let mid = self.start + self.len().div_ceil(2);
        (Span::new(self.start, mid), Span::new(mid, self.end))
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed span {0:?}")]
pub struct SpanParseError(pub String);

impl FromStr for Span {
    type Err = SpanParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SpanParseError(s.to_string());
        let (a, b) = s.split_once('-').ok_or_else(err)?;
        let start: usize = a.parse().map_err(|_| err())?;
        let end: usize = b.parse().map_err(|_| err())?;
        if start > end {
            return Err(err());
        }
        Ok(Span { start, end })
    }
}
