//! Whitespace tokenizer with punctuation peeling and character offsets.

/// A token and its inclusive character range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk one character at a time. Offsets count `char`s, not bytes.
///
/// `"anesthetics."` gives `anesthetics` at `(0, 10)` and `.` at `(11, 11)`.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_chunk(&chars, start, i, &mut tokens);
    }
    tokens
}

fn split_chunk(chars: &[char], mut lo: usize, mut hi: usize, out: &mut Vec<Token>) {
    let single = |i: usize| Token {
        text: chars[i].to_string(),
        start: i,
        end: i,
    };
    let mut trailing = Vec::new();
    while lo < hi && is_punct(chars[lo]) {
        out.push(single(lo));
        lo += 1;
    }
    while hi > lo && is_punct(chars[hi - 1]) {
        trailing.push(single(hi - 1));
        hi -= 1;
    }
    if lo < hi {
        out.push(Token {
            text: chars[lo..hi].iter().collect(),
            start: lo,
            end: hi - 1,
        });
    }
    out.extend(trailing.into_iter().rev());
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(text: &str) -> Vec<(String, usize, usize)> {
        tokenize_with_offsets(text)
            .into_iter()
            .map(|t| (t.text, t.start, t.end))
            .collect()
    }

    #[test]
    fn plain_words() {
        assert_eq!(
            spans("Cimetidine  reduces  clearance"),
            vec![
                ("Cimetidine".into(), 0, 9),
                ("reduces".into(), 12, 18),
                ("clearance".into(), 21, 29)
            ]
        );
        let t = spans("Cimetidine reduces clearance");
        assert_eq!(
            t.iter().map(|x| (x.1, x.2)).collect::<Vec<_>>(),
            vec![(0, 9), (11, 17), (19, 27)]
        );
    }

    #[test]
    fn trailing_period() {
        assert_eq!(
            spans("anesthetics."),
            vec![("anesthetics".into(), 0, 10), (".".into(), 11, 11)]
        );
    }

    #[test]
    fn inner_punctuation_stays() {
        let t: Vec<String> = spans("(5-FU), beta-blockers;")
            .into_iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(t, ["(", "5-FU", ")", ",", "beta-blockers", ";"]);
        let t: Vec<String> = spans("...").into_iter().map(|x| x.0).collect();
        assert_eq!(t, [".", ".", "."]);
    }

    #[test]
    fn empty_and_blank() {
        assert!(spans("").is_empty());
        assert!(spans(" \t ").is_empty());
    }

    #[test]
    fn offsets_count_chars() {
        assert_eq!(
            spans("β-agonist é."),
            vec![
                ("β-agonist".into(), 0, 8),
                ("é".into(), 10, 10),
                (".".into(), 11, 11)
            ]
        );
    }

    proptest! {
        #[test]
        fn slicing_reproduces_tokens(text in "[a-zA-Z0-9 .,;()\\-é]{0,40}") {
            let chars: Vec<char> = text.chars().collect();
            let tokens = tokenize_with_offsets(&text);
            let mut prev_end: Option<usize> = None;
            for t in &tokens {
                prop_assert!(t.start <= t.end);
                let slice: String = chars[t.start..=t.end].iter().collect();
                prop_assert_eq!(&slice, &t.text);
                if let Some(p) = prev_end {
                    prop_assert!(t.start > p);
                }
                prev_end = Some(t.end);
            }
            // nothing but whitespace is lost
            let joined: String = tokens.iter().map(|t| t.text.as_str()).collect();
            let squeezed: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, squeezed);
        }
    }
}
