use super::ProgError;

/// Failure function: `table[i]` is the length of the longest proper border
/// of `pattern[..=i]`.
pub fn kmp_build(pattern: &[u8]) -> Result<Vec<usize>, ProgError> {
    if pattern.is_empty() {
        return Err(ProgError::EmptyPattern);
    }
    let mut table = vec![0usize; pattern.len()];
    let mut k = 0;
    for i in 1..pattern.len() {
        while k > 0 && pattern[i] != pattern[k] {
            k = table[k - 1];
        }
        if pattern[i] == pattern[k] {
            k += 1;
        }
        table[i] = k;
    }
    Ok(table)
}

/// First occurrence of `pattern` fully inside `window`.
pub fn kmp_search(window: &[u8], pattern: &[u8], table: &[usize]) -> Option<usize> {
    debug_assert_eq!(pattern.len(), table.len());
    if pattern.is_empty() {
        return Some(0);
    }
    let mut k = 0;
    for (i, &b) in window.iter().enumerate() {
        while k > 0 && b != pattern[k] {
            k = table[k - 1];
        }
        if b == pattern[k] {
            k += 1;
        }
        if k == pattern.len() {
            return Some(i + 1 - k);
        }
    }
    None
}

/// A pattern bundled with its failure table.
#[derive(Debug, Clone)]
pub struct Matcher {
    pattern: Vec<u8>,
    table: Vec<usize>,
}

impl Matcher {
    pub fn new(pattern: &[u8]) -> Result<Matcher, ProgError> {
        Ok(Matcher { table: kmp_build(pattern)?, pattern: pattern.to_vec() })
    }

    pub fn find(&self, window: &[u8]) -> Option<usize> {
        kmp_search(window, &self.pattern, &self.table)
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_borders(p: &[u8]) -> Vec<usize> {
        (0..p.len())
            .map(|i| {
                let s = &p[..=i];
                (0..s.len()).rev().find(|&l| s[..l] == s[s.len() - l..]).unwrap_or(0)
            })
            .collect()
    }

    fn naive(window: &[u8], pattern: &[u8]) -> Option<usize> {
        if pattern.len() > window.len() {
            return None;
        }
        (0..=window.len() - pattern.len()).find(|&i| &window[i..i + pattern.len()] == pattern)
    }

    #[test]
    fn tables_match_border_oracle() {
        assert_eq!(brute_borders(b"\r\n\r\n"), vec![0, 0, 1, 2]);
        assert_eq!(brute_borders(b"AAAA"), vec![0, 1, 2, 3]);
        assert_eq!(kmp_build(b"\r\n\r\n").unwrap(), vec![0, 0, 1, 2]);
        assert_eq!(kmp_build(b"AAAA").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(kmp_build(b"A").unwrap(), vec![0]);
        assert_eq!(kmp_build(b"").unwrap_err(), ProgError::EmptyPattern);
    }

    #[test]
    fn finds_header_terminator() {
        let w = b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\nhello";
        let m = Matcher::new(b"\r\n\r\n").unwrap();
        assert_eq!(naive(w, b"\r\n\r\n"), Some(34));
        assert_eq!(m.find(w), Some(34));
        assert_eq!(m.find(b"\r\n\r\nrest"), Some(0));
        assert_eq!(m.find(&[b'x'; 256]), None);
        // straddling the window end is not a match
        assert_eq!(m.find(b"abc\r\n\r"), None);
    }

    proptest! {
        #[test]
        fn table_equals_brute_force(p in proptest::collection::vec(0u8..3, 1..40)) {
            prop_assert_eq!(kmp_build(&p).unwrap(), brute_borders(&p));
        }

        #[test]
        fn search_equals_naive(
            w in proptest::collection::vec(0u8..3, 0..300),
            p in proptest::collection::vec(0u8..3, 1..6),
        ) {
            let t = kmp_build(&p).unwrap();
            prop_assert_eq!(kmp_search(&w, &p, &t), naive(&w, &p));
        }
    }
}
