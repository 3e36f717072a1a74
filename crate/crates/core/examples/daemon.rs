//! Trigger-driven runs on a simulated clock: a schedule and a watched
//! directory, each feeding tasks to a dispatcher.

use std::time::Duration;

use chrono::Utc;
use densa::cli::daemon::{run_daemon, RecordingDispatcher, Schedule, ScheduleTrigger, WatchTrigger};
use densa::exploration::{Clock, ManualClock};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clock = ManualClock::new(Utc::now());
    let mut sleep = |_: Duration| clock.advance(chrono::Duration::minutes(1));

    let mut schedule = ScheduleTrigger::new(Schedule::parse("every 6m")?, "check the backup logs", clock.now());
    let mut dispatcher = RecordingDispatcher::default();
    run_daemon(&mut schedule, &mut dispatcher, &clock, Duration::ZERO, Some(30), &mut sleep);
    println!("30 simulated minutes, every 6m: {:?}", dispatcher.tasks);

    let dir = tempfile::tempdir()?;
    let mut watch = WatchTrigger::new(dir.path(), "summarise {path}")?;
    std::fs::write(dir.path().join("report.csv"), "a,b\n1,2\n")?;
    let mut dispatcher = RecordingDispatcher::default();
    run_daemon(&mut watch, &mut dispatcher, &clock, Duration::ZERO, Some(3), &mut sleep);
    println!("watched directory: {:?}", dispatcher.tasks);
    Ok(())
}
