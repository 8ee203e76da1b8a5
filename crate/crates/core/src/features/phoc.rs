//! Pyramidal histogram of characters.
//!
//! Layout of the 604 dimensions:
//!
//! | range     | content                                                 |
//! |-----------|---------------------------------------------------------|
//! | 0..72     | level 2: region 0 then region 1, 36 symbols each         |
//! | 72..180   | level 3: regions 0..3, 36 symbols each                   |
//! | 180..324  | level 4                                                  |
//! | 324..504  | level 5                                                  |
//! | 504..604  | bigrams at level 2: region 0 then region 1, 50 each      |
//!
//! Symbols are `a..z` then `0..9`. A character of an `n`-character word
//! covers `[i/n, (i+1)/n)`; it marks region `r` of level `l` when at least
//! half of its span falls in `[r/l, (r+1)/l)`. All span arithmetic is done
//! in integers scaled by `n * l`, so boundary cases are exact.

use alloc::vec;
use alloc::vec::Vec;

pub const PHOC_DIM: usize = 604;
pub const UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];
pub const BIGRAM_LEVEL: usize = 2;
pub const ALPHABET_LEN: usize = 36;

const BIGRAM_FILE: &str = include_str!("../../data/phoc_bigrams.txt");

/// The 50 frequency-ordered English bigrams of the histogram's last block.
pub fn bigrams() -> Vec<[u8; 2]> {
    BIGRAM_FILE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let b = l.as_bytes();
            [b[0], b[1]]
        })
        .collect()
}

/// Symbol index of a character, after case folding; `None` for anything
/// outside `[a-z0-9]`.
pub fn symbol_index(c: char) -> Option<usize> {
    let c = c.to_ascii_lowercase();
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        '0'..='9' => Some(26 + c as usize - '0' as usize),
        _ => None,
    }
}

/// Case-folded alphanumeric characters of `word`.
pub fn normalize_word(word: &str) -> Vec<u8> {
    word.chars()
        .filter(|c| symbol_index(*c).is_some())
        .map(|c| c.to_ascii_lowercase() as u8)
        .collect()
}

fn level_offset(level: usize) -> usize {
    UNIGRAM_LEVELS.iter().take_while(|&&l| l < level).map(|l| l * ALPHABET_LEN).sum()
}

/// `true` when a span of `span_chars` characters starting at character `i`
/// of an `n`-character word marks region `r` of level `l`.
fn occupies(i: usize, span_chars: usize, n: usize, r: usize, l: usize) -> bool {
    let (s0, s1) = (i * l, (i + span_chars) * l);
    let (r0, r1) = (r * n, (r + 1) * n);
    let overlap = s1.min(r1).saturating_sub(s0.max(r0));
    2 * overlap >= s1 - s0
}

pub fn phoc(word: &str) -> Vec<f64> {
    let mut out = vec![0.0; PHOC_DIM];
    let w = normalize_word(word);
    let n = w.len();
    if n == 0 {
        return out;
    }
    for &l in &UNIGRAM_LEVELS {
        let base = level_offset(l);
        for (i, &c) in w.iter().enumerate() {
            let sym = symbol_index(c as char).expect("normalized");
            for r in 0..l {
                if occupies(i, 1, n, r, l) {
                    out[base + r * ALPHABET_LEN + sym] = 1.0;
                }
            }
        }
    }
    let base = level_offset(usize::MAX);
    let table = bigrams();
    for i in 0..n.saturating_sub(1) {
        let pair = [w[i], w[i + 1]];
        if let Some(b) = table.iter().position(|t| *t == pair) {
            for r in 0..BIGRAM_LEVEL {
                if occupies(i, 2, n, r, BIGRAM_LEVEL) {
                    out[base + r * table.len() + b] = 1.0;
                }
            }
        }
    }
    out
}
