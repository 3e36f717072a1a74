//! The three ways history is kept inside budget: head/tail truncation of a
//! tool output, tag compression of old messages, and eviction.

use densa::config::BudgetConfig;
use densa::ledger::{build_anchor, compress_tags, evict, history_length, summarize_turn, AnchorBlock};
use densa::message::Message;
use densa::toolkit::truncate_head_tail;

fn main() {
    let (cut, truncated) = truncate_head_tail(&"0123456789".repeat(3), 12);
    println!("truncated={truncated}: {cut:?}");

    let cfg = BudgetConfig::default();
    let mut history: Vec<Message> = (0..14)
        .map(|i| Message::assistant(format!("<thinking>{}</thinking> step {i}", "x".repeat(2_000)), vec![]))
        .collect();
    let before = history_length(&history);
    compress_tags(&mut history, &cfg, false);
    println!("compression: {before} -> {} chars", history_length(&history));

    let mut history: Vec<Message> = (0..40).map(|i| Message::user(format!("{i}: {}", "y".repeat(4_000)))).collect();
    let report = evict(&mut history, &cfg, 2).expect("fits after eviction");
    println!(
        "eviction: {} -> {} chars (budget {}, target {}), {} messages dropped",
        report.before,
        report.after,
        cfg.char_budget(),
        cfg.evict_target(),
        report.evicted
    );

    let mut anchor = AnchorBlock::default();
    for turn in 1..=3 {
        anchor.record(&summarize_turn(turn, &[Message::assistant(format!("finished part {turn}"), vec![])]));
        anchor.current_turn = turn;
    }
    anchor.key_info = "output goes to report.md".into();
    println!("{}", build_anchor(&anchor));
}
