use std::collections::HashMap;

use crate::schema::DatabaseSchema;

pub const VAL: &str = "[VAL]";
pub const TAB: &str = "[TAB]";
pub const COL: &str = "[COL]";
const MARKERS: [&str; 3] = [VAL, TAB, COL];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Space,
    Other(char),
    Marker(&'static str),
}

/// Mask a question down to its structural skeleton.
///
/// Lowercases, turns quoted spans and standalone numbers into `[VAL]`, table
/// names into `[TAB]` and column names into `[COL]`, then collapses
/// whitespace. Column and table names also match as their underscore-split
/// word phrase; the longest phrase wins and tables win ties. Existing
/// markers pass through, so the mapping is idempotent.
pub fn build_skeleton(question: &str, schema: &DatabaseSchema) -> String {
    let vocab = Vocabulary::from_schema(schema);
    let toks = lex(question);
    let toks = vocab.mask(&toks);
    let mut out = String::with_capacity(question.len());
    for t in toks {
        match t {
            Tok::Word(w) => out.push_str(&w),
            Tok::Space => {
                if !out.is_empty() && !out.ends_with(' ') {
                    out.push(' ');
                }
            }
            Tok::Other(c) => out.push(c),
            Tok::Marker(m) => out.push_str(m),
        }
    }
    out.truncate(out.trim_end().len());
    out
}

fn is_quote(c: char) -> bool {
    matches!(c, '\'' | '"' | '‘' | '’' | '“' | '”')
}

fn closing_for(c: char) -> &'static [char] {
    match c {
        '\'' => &['\''],
        '"' => &['"'],
        '‘' | '’' => &['’', '\''],
        _ => &['”', '"'],
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Vec<Tok> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            if let Some(m) = MARKERS.iter().find(|m| starts_with_at(&chars, i, m)) {
                out.push(Tok::Marker(m));
                i += m.len();
                continue;
            }
        }
        if c.is_whitespace() {
            out.push(Tok::Space);
            i += 1;
            continue;
        }
        let opens_span = i == 0 || chars[i - 1].is_whitespace() || matches!(chars[i - 1], '(' | '{');
        if is_quote(c) && opens_span {
            let close = (i + 1..chars.len()).find(|&j| {
                closing_for(c).contains(&chars[j]) && chars.get(j + 1).is_none_or(|n| !is_word_char(*n) && *n != '[')
            });
            if let Some(j) = close {
                out.push(Tok::Marker(VAL));
                i = j + 1;
                continue;
            }
        }
        if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            // Decimal part of a number.
            if chars[start..i].iter().all(char::is_ascii_digit)
                && chars.get(i) == Some(&'.')
                && chars.get(i + 1).is_some_and(char::is_ascii_digit)
            {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
            if word.chars().all(|ch| ch.is_ascii_digit() || ch == '.') {
                out.push(Tok::Marker(VAL));
            } else {
                out.push(Tok::Word(word));
            }
            continue;
        }
        out.extend(c.to_lowercase().map(Tok::Other));
        i += 1;
    }
    out
}

fn starts_with_at(chars: &[char], at: usize, pat: &str) -> bool {
    let mut k = at;
    for p in pat.chars() {
        if chars.get(k) != Some(&p) {
            return false;
        }
        k += 1;
    }
    true
}

/// Word phrases to mask, keyed by their first word.
struct Vocabulary {
    phrases: HashMap<String, Vec<(Vec<String>, &'static str)>>,
}

impl Vocabulary {
    fn from_schema(schema: &DatabaseSchema) -> Self {
        let mut v = Vocabulary {
            phrases: HashMap::new(),
        };
        for t in &schema.tables {
            v.add(&t.name, TAB);
            for c in &t.columns {
                v.add(&c.name, COL);
            }
        }
        for list in v.phrases.values_mut() {
            // Longest first; TAB before COL at equal length.
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then((a.1 != TAB).cmp(&(b.1 != TAB))));
            list.dedup_by(|a, b| a.0 == b.0);
        }
        v
    }

    fn add(&mut self, name: &str, marker: &'static str) {
        let lower = name.to_lowercase();
        let split: Vec<String> = lower
            .split(|c: char| c == '_' || c.is_whitespace())
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let whole: Vec<String> = lex(&lower)
            .into_iter()
            .filter_map(|t| match t {
                Tok::Word(w) => Some(w),
                _ => None,
            })
            .collect();
        for phrase in [whole, split] {
            if let Some(first) = phrase.first() {
                self.phrases.entry(first.clone()).or_default().push((phrase, marker));
            }
        }
    }

    /// Length in tokens of `phrase` matched at `at`, words separated by one space token.
    fn match_len(toks: &[Tok], at: usize, phrase: &[String]) -> Option<usize> {
        let mut k = at;
        for (n, word) in phrase.iter().enumerate() {
            if n > 0 {
                if toks.get(k) != Some(&Tok::Space) {
                    return None;
                }
                k += 1;
            }
            match toks.get(k) {
                Some(Tok::Word(w)) if w == word => k += 1,
                _ => return None,
            }
        }
        Some(k - at)
    }

    fn mask(&self, toks: &[Tok]) -> Vec<Tok> {
        let mut out = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            if let Tok::Word(w) = &toks[i] {
                if let Some(list) = self.phrases.get(w) {
                    if let Some((len, marker)) = list
                        .iter()
                        .find_map(|(p, m)| Self::match_len(toks, i, p).map(|l| (l, *m)))
                    {
                        out.push(Tok::Marker(marker));
                        i += len;
                        continue;
                    }
                }
            }
            out.push(toks[i].clone());
            i += 1;
        }
        out
    }
}
