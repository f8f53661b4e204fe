use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

static STOPWORDS_TXT: &str = include_str!("../../assets/stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// True if the lowercase `word` is in the shipped stopword list.
pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

/// Counts of case-folded content words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermProfile {
    terms: BTreeMap<String, u32>,
}

impl TermProfile {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn count(&self, term: &str) -> u32 {
        self.terms.get(term).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Sum of all counts.
    pub fn total(&self) -> u32 {
        self.terms.values().sum()
    }

    /// Sum over shared terms of the smaller count.
    pub fn overlap(&self, other: &TermProfile) -> u32 {
        self.terms.iter().map(|(t, &c)| c.min(other.count(t))).sum()
    }

    /// Cosine similarity of the count vectors; 0 when either is empty.
    pub fn cosine(&self, other: &TermProfile) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        let dot: f64 = self.terms.iter().map(|(t, &c)| f64::from(c) * f64::from(other.count(t))).sum();
        dot / (self.norm() * other.norm())
    }

    fn norm(&self) -> f64 {
        self.terms.values().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt()
    }

    /// The `n` most frequent terms, ties broken alphabetically.
    pub fn top_terms(&self, n: usize) -> Vec<&str> {
        let mut all: Vec<(&str, u32)> = self.iter().collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        all.into_iter().take(n).map(|(t, _)| t).collect()
    }

    pub(crate) fn add_text(&mut self, text: &str) {
        for word in text.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
            let folded = word.to_lowercase();
            if !is_stopword(&folded) {
                *self.terms.entry(folded).or_insert(0) += 1;
            }
        }
    }
}

impl FromIterator<(String, u32)> for TermProfile {
    fn from_iter<I: IntoIterator<Item = (String, u32)>>(iter: I) -> Self {
        let mut terms = BTreeMap::new();
        for (t, c) in iter {
            if c > 0 {
                *terms.entry(t).or_insert(0) += c;
            }
        }
        Self { terms }
    }
}

/// Case-folds `text`, splits on non-letter characters, drops stopwords and
/// counts what is left.
pub fn content_terms(text: &str) -> TermProfile {
    let mut profile = TermProfile::default();
    profile.add_text(text);
    profile
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(pairs: &[(&str, u32)]) -> TermProfile {
        pairs.iter().map(|(t, c)| (t.to_string(), *c)).collect()
    }

    #[test]
    fn examples() {
        assert!(content_terms("").is_empty());
        assert_eq!(
            content_terms("homelessness in Australia, homelessness is rising"),
            profile(&[("homelessness", 2), ("australia", 1), ("rising", 1)])
        );
        assert!(content_terms("the of and").is_empty());
    }

    #[test]
    fn digits_and_apostrophes_split_words() {
        assert_eq!(content_terms("Australia's 2020 COVID-19 data"), profile(&[("australia", 1), ("covid", 1), ("data", 1)]));
    }

    #[test]
    fn cosine_hand_computed() {
        // a = {x:2, y:1}, b = {x:1, z:3}: dot 2, |a| = sqrt 5, |b| = sqrt 10.
        let a = profile(&[("x", 2), ("y", 1)]);
        let b = profile(&[("x", 1), ("z", 3)]);
        let expected = 2.0 / (5f64.sqrt() * 10f64.sqrt());
        assert!((a.cosine(&b) - expected).abs() < 1e-12);
        assert_eq!(a.overlap(&b), 1);
        assert_eq!(a.cosine(&TermProfile::default()), 0.0);
    }

    #[test]
    fn top_terms_order() {
        let p = profile(&[("b", 2), ("a", 2), ("c", 5), ("d", 1)]);
        assert_eq!(p.top_terms(3), vec!["c", "a", "b"]);
    }

    #[test]
    fn stopword_list_loaded() {
        assert!(is_stopword("the"));
        assert!(!is_stopword("homelessness"));
        assert!(!is_stopword("# english stopword list used for content-term profiles and entity filtering."));
    }
}
