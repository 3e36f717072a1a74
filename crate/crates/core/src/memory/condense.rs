use crate::gateway::{Backend, ChatRequest};

use super::StoreError;

const SYSTEM: &str = "You condense standard operating procedures. Keep only high-density, \
action-guiding rules: preconditions, the key steps, and known failure cases with their recovery. \
Drop narrative, examples and anything already implied.";

#[derive(Debug, Clone, PartialEq)]
pub enum CondenseOutcome {
    Condensed(String),
    /// Both attempts exceeded the budget; nothing was stored.
    Deferred { words: usize, budget: usize },
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Asks the model for a word-limited summary, retrying once with a tighter
/// instruction when the first answer runs over.
pub fn condense(sop_text: &str, word_budget: usize, model: &mut dyn Backend) -> Result<CondenseOutcome, StoreError> {
    if sop_text.trim().is_empty() {
        return Err(StoreError::InvalidCandidate("cannot condense an empty SOP".into()));
    }
    if word_budget == 0 {
        return Err(StoreError::InvalidCandidate("word budget must be positive".into()));
    }
    let first = format!("Condense this SOP into at most {word_budget} words.\n\n{sop_text}");
    let reply = model.complete(&ChatRequest::plain(SYSTEM, first, 1024))?;
    let text = reply.text.unwrap_or_default().trim().to_string();
    let words = word_count(&text);
    if words <= word_budget && words > 0 {
        return Ok(CondenseOutcome::Condensed(text));
    }
    let retry = format!(
        "Your previous summary had {words} words; the hard limit is {word_budget}. \
Rewrite it in at most {word_budget} words, keeping only the rules an agent must follow.\n\n{sop_text}"
    );
    let reply = model.complete(&ChatRequest::plain(SYSTEM, retry, 1024))?;
    let text = reply.text.unwrap_or_default().trim().to_string();
    let words = word_count(&text);
    if words <= word_budget && words > 0 {
        Ok(CondenseOutcome::Condensed(text))
    } else {
        Ok(CondenseOutcome::Deferred { words, budget: word_budget })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;

    fn script(replies: &[&str]) -> ScriptedBackend {
        let steps: Vec<_> = replies.iter().map(|r| serde_json::json!({"reply": {"text": r}})).collect();
        ScriptedBackend::from_json(&serde_json::to_string(&steps).unwrap()).unwrap()
    }

    #[test]
    fn within_budget_first_time() {
        let mut b = script(&["check token, then list PRs"]);
        assert_eq!(
            condense("long sop", 10, &mut b).unwrap(),
            CondenseOutcome::Condensed("check token, then list PRs".into())
        );
        assert_eq!(b.steps_used(), 1);
    }

    #[test]
    fn retry_then_defer() {
        let long = "word ".repeat(20);
        let mut b = script(&[&long, &long]);
        assert_eq!(
            condense("sop", 5, &mut b).unwrap(),
            CondenseOutcome::Deferred { words: 20, budget: 5 }
        );
        let second = b.requests()[1].to_wire_string();
        assert!(second.contains("previous summary had 20 words"));
    }

    #[test]
    fn retry_can_succeed() {
        let long = "word ".repeat(20);
        let mut b = script(&[&long, "short one"]);
        assert_eq!(condense("sop", 5, &mut b).unwrap(), CondenseOutcome::Condensed("short one".into()));
    }

    #[test]
    fn empty_sop_rejected() {
        let mut b = script(&[]);
        assert!(matches!(condense("  \n", 5, &mut b), Err(StoreError::InvalidCandidate(_))));
        assert_eq!(b.steps_used(), 0);
    }
}
