use super::{BOS, MAJ, REP, UNK, UP, WREP};

/// Intermediate piece produced while rewriting a document.
#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Marker(&'static str),
    Count(usize),
    Word(String),
}

/// Tokenises one document.
///
/// Rule order: character repeats (`xxrep n c`), word repeats (`xxwrep n w`),
/// case markers (`xxup` for all-caps, `xxmaj` for capitalised words, then
/// lowercasing), and finally whitespace/punctuation splitting. The output
/// always starts with `xxbos`. Literal special tokens in the input map to
/// `xxunk`.
pub fn preprocess(text: &str) -> Vec<String> {
    let pieces = replace_char_repeats(text);
    let pieces = replace_word_repeats(pieces);
    let mut out = vec![BOS.to_string()];
    for piece in pieces {
        match piece {
            Piece::Marker(m) => out.push(m.to_string()),
            Piece::Count(n) => out.push(n.to_string()),
            Piece::Word(w) => push_word(&w, &mut out),
        }
    }
    out
}

pub fn preprocess_all<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<Vec<String>> {
    texts.into_iter().map(preprocess).collect()
}

fn replace_char_repeats(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let mut j = i + 1;
            while j < chars.len() && chars[j] == c {
                j += 1;
            }
            let run = j - i;
            if run >= 3 {
                if !word.is_empty() {
                    pieces.push(Piece::Word(std::mem::take(&mut word)));
                }
                pieces.push(Piece::Marker(REP));
                pieces.push(Piece::Count(run));
                pieces.push(Piece::Word(c.to_string()));
            } else {
                word.extend(std::iter::repeat(c).take(run));
            }
            i = j;
        }
        if !word.is_empty() {
            pieces.push(Piece::Word(word));
        }
    }
    pieces
}

fn replace_word_repeats(pieces: Vec<Piece>) -> Vec<Piece> {
    let mut out = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if let Piece::Word(w) = &pieces[i] {
            let mut j = i + 1;
            while j < pieces.len() && matches!(&pieces[j], Piece::Word(x) if x == w) {
                j += 1;
            }
            let run = j - i;
            if run >= 3 {
                out.push(Piece::Marker(WREP));
                out.push(Piece::Count(run));
                out.push(pieces[i].clone());
                i = j;
                continue;
            }
        }
        out.push(pieces[i].clone());
        i += 1;
    }
    out
}

fn case_marker(word: &str) -> Option<&'static str> {
    let cased: Vec<char> = word
        .chars()
        .filter(|c| c.is_uppercase() || c.is_lowercase())
        .collect();
    let first = *cased.first()?;
    if cased.len() >= 2 && cased.iter().all(|c| c.is_uppercase()) {
        Some(UP)
    } else if first.is_uppercase() && cased[1..].iter().all(|c| !c.is_uppercase()) {
        Some(MAJ)
    } else {
        None
    }
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}')
}

/// Splits a whitespace-free word into alphanumeric runs and single punctuation
/// characters. Hyphens and apostrophes between alphanumerics stay inside the run.
fn split_punct(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let joined = is_joiner(c)
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || joined {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn push_word(word: &str, out: &mut Vec<String>) {
    let marker = case_marker(word);
    let lowered = word.to_lowercase();
    let mut pending = marker;
    for tok in split_punct(&lowered) {
        if let Some(m) = pending {
            if tok.chars().any(char::is_alphabetic) {
                out.push(m.to_string());
                pending = None;
            }
        }
        if super::is_special(&tok) {
            out.push(UNK.to_string());
        } else {
            out.push(tok);
        }
    }
}
