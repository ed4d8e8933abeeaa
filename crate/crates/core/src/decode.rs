//! Character sets, greedy decoding and error-rate scoring.
//!
//! Charset file format: one symbol per line. `<blank>` and `<space>` are
//! directives for the blank label and the word separator; lines starting with
//! `#` and empty lines are ignored. The line order gives the label ids.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::ctc::{collapse, LabelSequence, LogPosteriorLattice};
use crate::error::{Error, Result};

pub const BLANK_DIRECTIVE: &str = "<blank>";
pub const SPACE_DIRECTIVE: &str = "<space>";

const CHARSET_28: &str = include_str!("../data/charset28.txt");
const CHARSET_83_EXAMPLE: &str = include_str!("../data/charset83_example.txt");

/// Ordered label inventory. Symbols may span several characters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<String>,
    blank: usize,
    space: usize,
    index: HashMap<String, usize>,
    longest: usize,
}

impl Charset {
    /// `symbols[blank]` is only a display name; `symbols[space]` must be `" "`.
    pub fn new(symbols: Vec<String>, blank: usize, space: usize) -> Result<Self> {
        if blank >= symbols.len() || space >= symbols.len() || blank == space {
            return Err(Error::Charset(format!(
                "blank {blank} and space {space} must be distinct ids below {}",
                symbols.len()
            )));
        }
        if symbols[space] != " " {
            return Err(Error::Charset("the space symbol must be a single space".into()));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Charset(format!("symbol {i} is empty")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Charset(format!("duplicate symbol {s:?}")));
            }
        }
        index.remove(&symbols[blank]);
        let longest = index.keys().map(|s| s.chars().count()).max().unwrap_or(1);
        Ok(Charset {
            symbols,
            blank,
            space,
            index,
            longest,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        let (mut blank, mut space) = (None, None);
        for (lineno, line) in text.lines().enumerate() {
            let sym = line.trim();
            if sym.is_empty() || sym.starts_with('#') {
                continue;
            }
            let slot = match sym {
                BLANK_DIRECTIVE => Some(&mut blank),
                SPACE_DIRECTIVE => Some(&mut space),
                _ => None,
            };
            match slot {
                Some(Some(_)) => {
                    return Err(Error::Charset(format!("line {}: repeated {sym}", lineno + 1)))
                }
                Some(slot) => {
                    *slot = Some(symbols.len());
                    symbols.push(if sym == SPACE_DIRECTIVE { " ".into() } else { sym.into() });
                }
                None => symbols.push(sym.to_string()),
            }
        }
        let blank = blank.ok_or_else(|| Error::Charset("no <blank> line".into()))?;
        let space = space.ok_or_else(|| Error::Charset("no <space> line".into()))?;
        Charset::new(symbols, blank, space)
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Charset::parse(&text)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, s) in self.symbols.iter().enumerate() {
            let line = if i == self.blank {
                BLANK_DIRECTIVE
            } else if i == self.space {
                SPACE_DIRECTIVE
            } else {
                s
            };
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Blank, space and `a`–`z`.
    pub fn english28() -> Self {
        Charset::parse(CHARSET_28).expect("bundled charset parses")
    }

    /// Illustrative 83-unit inventory with word-initial capitals, double
    /// letters and apostrophe units. Not a canonical list.
    pub fn english83_example() -> Self {
        Charset::parse(CHARSET_83_EXAMPLE).expect("bundled charset parses")
    }

    /// Blank, space, then one single-character symbol per entry of `letters`.
    pub fn from_letters(letters: &str) -> Result<Self> {
        let mut symbols = vec![BLANK_DIRECTIVE.to_string(), " ".to_string()];
        symbols.extend(letters.chars().map(String::from));
        Charset::new(symbols, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn space(&self) -> usize {
        self.space
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Greedy longest-match tokenization. Symbols starting with an uppercase
    /// letter only match at the start of a word.
    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut ids = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let word_start = i == 0 || chars[i - 1].1 == ' ';
            let start = chars[i].0;
            let mut matched = None;
            for len in (1..=self.longest.min(chars.len() - i)).rev() {
                let end = chars.get(i + len).map_or(text.len(), |c| c.0);
                let piece = &text[start..end];
                let Some(&id) = self.index.get(piece) else {
                    continue;
                };
                if !word_start && piece.starts_with(|c: char| c.is_uppercase()) {
                    continue;
                }
                matched = Some((id, len));
                break;
            }
            let (id, len) = matched.ok_or(Error::Unencodable {
                ch: chars[i].1,
                offset: start,
            })?;
            ids.push(id);
            i += len;
        }
        LabelSequence::new(ids, self.blank)
    }

    /// Concatenated symbols, blanks skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .filter(|&&id| id != self.blank)
            .map(|&id| self.symbols[id].as_str())
            .collect()
    }
}

/// Word sequence of one utterance.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Transcript {
    words: Vec<String>,
}

impl Transcript {
    /// Splits on whitespace; empty words never appear.
    pub fn from_text(text: &str) -> Self {
        Transcript {
            words: text.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

fn check_lattice(lat: &LogPosteriorLattice, cs: &Charset) -> Result<()> {
    if lat.labels() != cs.len() || lat.blank() != cs.blank() {
        return Err(Error::Charset(format!(
            "lattice has {} labels (blank {}), charset has {} (blank {})",
            lat.labels(),
            lat.blank(),
            cs.len(),
            cs.blank()
        )));
    }
    Ok(())
}

/// Per-frame argmax, collapse, then symbol concatenation.
pub fn greedy_decode_text(lat: &LogPosteriorLattice, cs: &Charset) -> Result<String> {
    check_lattice(lat, cs)?;
    let labels = collapse(&lat.argmax_path(), cs.blank());
    Ok(cs.decode(labels.ids()))
}

pub fn greedy_decode(lat: &LogPosteriorLattice, cs: &Charset) -> Result<Transcript> {
    Ok(Transcript::from_text(&greedy_decode_text(lat, cs)?))
}

/// Levenshtein alignment counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditStats {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost edit distance from `reference` to `hypothesis`. Among
/// minimal alignments the backtrace prefers matches and substitutions, then
/// deletions, then insertions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut stats = EditStats {
        distance: d[n * w + m],
        ..EditStats::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differ = reference[i - 1] != hypothesis[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(differ) {
                stats.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            stats.deletions += 1;
            i -= 1;
        } else {
            stats.insertions += 1;
            j -= 1;
        }
    }
    stats
}

/// Running error count over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorTally {
    pub errors: usize,
    pub reference_len: usize,
}

impl ErrorTally {
    pub fn add<T: PartialEq>(&mut self, reference: &[T], hypothesis: &[T]) {
        self.errors += edit_distance(reference, hypothesis).distance;
        self.reference_len += reference.len();
    }

    pub fn add_chars(&mut self, reference: &str, hypothesis: &str) {
        let r: Vec<char> = reference.chars().collect();
        let h: Vec<char> = hypothesis.chars().collect();
        self.add(&r, &h);
    }

    pub fn add_words(&mut self, reference: &str, hypothesis: &str) {
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hypothesis.split_whitespace().collect();
        self.add(&r, &h);
    }

    pub fn rate(&self) -> Result<f64> {
        if self.reference_len == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(self.errors as f64 / self.reference_len as f64)
    }
}

/// Word error rate of one hypothesis.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let mut t = ErrorTally::default();
    t.add_words(reference, hypothesis);
    t.rate()
}

/// Character error rate of one hypothesis, spaces included.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let mut t = ErrorTally::default();
    t.add_chars(reference, hypothesis);
    t.rate()
}

/// Reads `<utt-id> <text>` lines. The id runs up to the first whitespace;
/// the text may be empty.
pub fn read_transcripts<R: BufRead>(r: R) -> Result<Vec<(String, Transcript)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        out.push((id.to_string(), Transcript::from_text(text)));
    }
    Ok(out)
}

pub fn write_transcripts<W: Write>(mut w: W, items: &[(String, Transcript)]) -> Result<()> {
    for (id, t) in items {
        if t.is_empty() {
            writeln!(w, "{id}")?;
        } else {
            writeln!(w, "{id} {}", t.text())?;
        }
    }
    Ok(())
}
