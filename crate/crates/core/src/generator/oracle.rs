use crate::corpus::SynonymTable;
use crate::textmodel::words;

/// The answer when no entry matches the query marker.
pub const ORACLE_FALLBACK: &str = "unknown";

const INPUT_PREFIX: &str = "classify:";

/// Deterministic stand-in for a language model on the synthetic task.
///
/// The prompt's input names a marker; every retrieved entry carrying that
/// marker (literally or through its synonym) offers the payload token next to
/// it, and the most recently dated such entry wins. With no matching entry the
/// answer is [`ORACLE_FALLBACK`].
#[derive(Debug, Clone)]
pub struct OracleGenerator {
    synonyms: SynonymTable,
}

impl OracleGenerator {
    pub fn new(synonyms: SynonymTable) -> Self {
        OracleGenerator { synonyms }
    }

    pub fn synonyms(&self) -> &SynonymTable {
        &self.synonyms
    }

    pub fn generate(&self, prompt: &str) -> String {
        let Some(input_at) = prompt.rfind(INPUT_PREFIX) else {
            return ORACLE_FALLBACK.to_string();
        };
        let Some(marker) = words(&prompt[input_at + INPUT_PREFIX.len()..])
            .first()
            .and_then(|t| self.synonyms.resolve(t))
        else {
            return ORACLE_FALLBACK.to_string();
        };

        let mut best: Option<(&str, String)> = None;
        for entry in prompt[..input_at].split(", and ") {
            let (body, date) = match entry.find(" date: ") {
                Some(i) => (&entry[..i], entry[i + 7..].trim_end_matches(['.', ' '])),
                None => (entry, ""),
            };
            let toks = words(body);
            if !toks.iter().any(|t| self.synonyms.resolve(t) == Some(marker)) {
                continue;
            }
            let Some(payload) = toks.iter().find(|t| is_payload(t)) else {
                continue;
            };
            // ISO dates compare correctly as strings; earlier entries win ties.
            if best.as_ref().is_none_or(|(d, _)| date > *d) {
                best = Some((date, payload.clone()));
            }
        }
        best.map_or_else(|| ORACLE_FALLBACK.to_string(), |(_, p)| p)
    }
}

fn is_payload(token: &str) -> bool {
    token
        .strip_prefix('p')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}
