use crate::config::SchemaConfig;
use crate::gateway::ToolDeclarations;
use crate::toolkit::{schema_digest, ToolSchema};

/// Marker opening the reminder that stands in for elided schemas.
pub const REMINDER_PREFIX: &str = "[tool schemas elided]";

/// When and what was last sent in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SentSchemas {
    pub turn: u32,
    pub digest: String,
}

/// Chooses between full schemas and a one-line reminder.
///
/// Full schemas go out on the first turn, whenever the set changed, once
/// `resend_interval_turns` have passed, and when the active prompt exceeds
/// `resend_prompt_fraction` of the character budget.
pub fn elide_schemas(
    schemas: &[ToolSchema],
    last_sent: Option<&SentSchemas>,
    current_turn: u32,
    prompt_chars: u64,
    char_budget: u64,
    config: &SchemaConfig,
) -> ToolDeclarations {
    let full = ToolDeclarations::Full(schemas.to_vec());
    if !config.elision {
        return full;
    }
    let Some(sent) = last_sent else {
        return full;
    };
    let changed = sent.digest != schema_digest(schemas);
    let stale = current_turn.saturating_sub(sent.turn) >= config.resend_interval_turns;
    let long_prompt = prompt_chars as f64 > config.resend_prompt_fraction * char_budget as f64;
    if changed || stale || long_prompt {
        return full;
    }
    let names: Vec<&str> = schemas.iter().map(|s| s.name.as_str()).collect();
    ToolDeclarations::Reminder(format!(
        "{REMINDER_PREFIX} Tools unchanged since turn {}; call them exactly as declared then: {}. Full schemas are re-sent periodically.",
        sent.turn,
        names.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ToolThresholds;
    use crate::toolkit::builtin_schemas;

    fn setup() -> (Vec<ToolSchema>, SentSchemas) {
        let schemas = builtin_schemas(&ToolThresholds::default());
        let sent = SentSchemas { turn: 0, digest: schema_digest(&schemas) };
        (schemas, sent)
    }

    #[test]
    fn first_turn_sends_full() {
        let (schemas, _) = setup();
        let d = elide_schemas(&schemas, None, 0, 0, 90_000, &SchemaConfig::default());
        assert!(matches!(d, ToolDeclarations::Full(_)));
    }

    #[test]
    fn unchanged_recent_gets_reminder() {
        let (schemas, sent) = setup();
        match elide_schemas(&schemas, Some(&sent), 3, 1_000, 90_000, &SchemaConfig::default()) {
            ToolDeclarations::Reminder(text) => {
                assert!(text.starts_with(REMINDER_PREFIX));
                assert!(text.contains("code_run") && text.contains("web_execute_js"));
                assert!(!text.contains("\"parameters\""));
            }
            other => panic!("expected reminder, got {other:?}"),
        }
    }

    #[test]
    fn edit_forces_resend() {
        let (mut schemas, sent) = setup();
        schemas[2].description = "edited".into();
        assert!(matches!(
            elide_schemas(&schemas, Some(&sent), 3, 0, 90_000, &SchemaConfig::default()),
            ToolDeclarations::Full(_)
        ));
    }

    #[test]
    fn interval_and_length_force_resend() {
        let (schemas, sent) = setup();
        let cfg = SchemaConfig::default();
        assert!(matches!(elide_schemas(&schemas, Some(&sent), 9, 0, 90_000, &cfg), ToolDeclarations::Reminder(_)));
        assert!(matches!(elide_schemas(&schemas, Some(&sent), 10, 0, 90_000, &cfg), ToolDeclarations::Full(_)));
        assert!(matches!(elide_schemas(&schemas, Some(&sent), 3, 45_001, 90_000, &cfg), ToolDeclarations::Full(_)));
    }
}
