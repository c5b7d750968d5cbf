use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Separate end-of-word symbol appended to every word before merging.
pub const END_OF_WORD: &str = "</w>";
/// Suffix marking a subword that continues into the next token.
const CONTINUATION: &str = "@@";

/// Ordered merge rules learned greedily from pair frequencies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

// '@' inside words is written as "@a" so a trailing "@@" is always a marker.
fn escape_char(c: char) -> String {
    if c == '@' {
        "@a".to_owned()
    } else {
        c.to_string()
    }
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '@' && chars.peek() == Some(&'a') {
            chars.next();
        }
        out.push(c);
    }
    out
}

fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(escape_char)
        .chain(std::iter::once(END_OF_WORD.to_owned()))
        .collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        BpeModel { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Greedy learning: repeatedly merge the most frequent adjacent pair,
    /// ties broken by the lexicographically smallest pair.
    pub fn learn<'a, I, S>(sentences: I, num_merges: usize) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut freqs: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for w in s.as_ref() {
                *freqs.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, u64)> = freqs
            .into_iter()
            .map(|(w, f)| (initial_symbols(w), f))
            .collect();
        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
            for (syms, f) in &words {
                for win in syms.windows(2) {
                    *pairs.entry((win[0].as_str(), win[1].as_str())).or_default() += f;
                }
            }
            let best = pairs
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some(((l, r), _)) = best else { break };
            let (l, r) = (l.to_owned(), r.to_owned());
            for (syms, _) in &mut words {
                *syms = merge_pair(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Self::from_merges(merges)
    }

    /// Segment one word into symbols, the last one carrying the end marker.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            syms = merge_pair(&syms, l, r);
        }
        syms
    }

    /// Segment a sentence into subword tokens; non-final pieces end in `@@`.
    pub fn apply(&self, sentence: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for word in sentence {
            let mut syms = self.segment_word(word);
            let last = syms.pop().expect("end marker present");
            let last = last
                .strip_suffix(END_OF_WORD)
                .expect("final symbol ends with marker")
                .to_owned();
            if !last.is_empty() {
                syms.push(last);
            }
            let n = syms.len();
            for (i, s) in syms.into_iter().enumerate() {
                if i + 1 < n {
                    out.push(format!("{s}{CONTINUATION}"));
                } else {
                    out.push(s);
                }
            }
        }
        out
    }

    /// One merge rule per line, `left right`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (l, r) in &self.merges {
            writeln!(w, "{l} {r}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once(' ').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected `left right`".into(),
            })?;
            merges.push((l.to_owned(), r.to_owned()));
        }
        Ok(Self::from_merges(merges))
    }
}

/// Undo [`BpeModel::apply`]: join `@@`-continued pieces into words.
pub fn merge_back(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut buf = String::new();
    for t in tokens {
        match t.strip_suffix(CONTINUATION) {
            Some(piece) => buf.push_str(piece),
            None => {
                buf.push_str(t);
                out.push(unescape(&buf));
                buf.clear();
            }
        }
    }
    if !buf.is_empty() {
        out.push(unescape(&buf));
    }
    out
}
