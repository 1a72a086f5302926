use std::ops::Range;

use super::TokenLogprob;

fn is_edge_junk(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Byte range of the completed value within a raw response.
///
/// Only the first line is considered. If the response begins by echoing a
/// word-aligned tail of the prompt stem (case-insensitive), that echo is
/// skipped; surrounding whitespace and punctuation are trimmed.
pub fn extract_span(stem: &str, text: &str) -> Range<usize> {
    let line_end = text.find(['\n', '\r']).unwrap_or(text.len());
    let line = &text[..line_end];
    let lead = line.len() - line.trim_start().len();
    let mut start = lead;
    let body = &line[lead..];

    let stem = stem.trim();
    let word_starts = stem
        .char_indices()
        .filter(|&(i, c)| {
            !c.is_whitespace() && (i == 0 || stem[..i].ends_with(char::is_whitespace))
        })
        .map(|(i, _)| i);
    for ws in word_starts {
        let tail = &stem[ws..];
        if tail.is_empty() {
            continue;
        }
        if let Some(rest) = strip_prefix_ci(body, tail) {
            if rest.chars().next().is_none_or(|c| !c.is_alphanumeric()) {
                start = lead + (body.len() - rest.len());
                break;
            }
        }
    }

    let seg = &line[start..];
    let left = seg.len() - seg.trim_start_matches(is_edge_junk).len();
    let seg = &seg[left..];
    let trimmed = seg.trim_end_matches(is_edge_junk);
    let begin = start + left;
    begin..begin + trimmed.len()
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let mut si = s.char_indices();
    for pc in prefix.chars() {
        let (_, sc) = si.next()?;
        if !sc.to_lowercase().eq(pc.to_lowercase()) {
            return None;
        }
    }
    let offset = si.next().map_or(s.len(), |(i, _)| i);
    Some(&s[offset..])
}

/// Product of the probabilities of tokens overlapping `span`. An empty span
/// yields 0. Falls back to the whole sequence when the tokens do not
/// reassemble the text.
pub fn span_probability(text: &str, tokens: &[TokenLogprob], span: Range<usize>) -> f64 {
    if span.is_empty() {
        return 0.0;
    }
    let joined: String = tokens.iter().map(|t| t.token.as_str()).collect();
    if !joined.starts_with(&text[..span.end]) && joined != text {
        let total: f64 = tokens.iter().map(|t| t.logprob).sum();
        return total.exp();
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for t in tokens {
        let range = offset..offset + t.token.len();
        offset = range.end;
        if range.start < span.end && range.end > span.start {
            sum += t.logprob;
        }
        if offset >= span.end {
            break;
        }
    }
    sum.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext<'a>(stem: &str, text: &'a str) -> &'a str {
        &text[extract_span(stem, text)]
    }

    #[test]
    fn strips_echoed_stem_tail() {
        assert_eq!(
            ext("Harry Potter lives in ", "lives in Hogwarts"),
            "Hogwarts"
        );
        assert_eq!(
            ext("Harry Potter lives in ", "Harry Potter lives in Hogwarts."),
            "Hogwarts"
        );
        assert_eq!(ext("Harry Potter lives in ", " In Hogwarts"), "Hogwarts");
        assert_eq!(ext("Harry Potter lives in ", "Hogwarts"), "Hogwarts");
    }

    #[test]
    fn echo_must_be_word_aligned() {
        assert_eq!(ext("Harry Potter lives in ", "Inverness"), "Inverness");
        assert_eq!(ext("X was born in ", "Indiana, USA"), "Indiana, USA");
    }

    #[test]
    fn first_line_only_and_trimmed() {
        assert_eq!(ext("A is ", "\"Spain\"\nexplanation"), "Spain");
        assert_eq!(ext("A is ", "..."), "");
        assert_eq!(ext("A is ", ""), "");
    }

    fn tl(token: &str, p: f64) -> TokenLogprob {
        TokenLogprob {
            token: token.into(),
            logprob: p.ln(),
        }
    }

    #[test]
    fn probability_covers_only_the_span() {
        let text = "lives in Hogwarts.";
        let tokens = [
            tl("lives", 0.1),
            tl(" in", 0.2),
            tl(" Hog", 0.5),
            tl("warts", 0.8),
            tl(".", 0.3),
        ];
        let span = extract_span("Harry Potter lives in ", text);
        let p = span_probability(text, &tokens, span);
        assert!((p - 0.4).abs() < 1e-12, "{p}");
    }

    #[test]
    fn mismatched_tokens_use_whole_sequence() {
        let tokens = [tl("Ho", 0.5), tl("g", 0.5)];
        let p = span_probability("Hogwarts", &tokens, 0..8);
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_span_has_no_mass() {
        assert_eq!(span_probability("", &[], 0..0), 0.0);
    }
}
