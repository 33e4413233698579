//! Criterion bookkeeping for the acceptance suite in `tests/acceptance.rs`.
//!
//! Every criterion prints one `PASS` or `FAIL` line; the suite exits
//! non-zero if any failed.

use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Suite {
    outcomes: Vec<Outcome>,
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records and prints one criterion.
    pub fn record(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        let o = Outcome { name: name.to_owned(), passed, detail: detail.into() };
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        self.outcomes.push(o);
    }

    /// Runs `check`, turning an `Err` into a failed criterion.
    pub fn check(&mut self, name: &str, check: impl FnOnce() -> Result<(bool, String), String>) {
        match check() {
            Ok((passed, detail)) => self.record(name, passed, detail),
            Err(e) => self.record(name, false, format!("error: {e}")),
        }
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed).count()
    }

    /// Prints the tally and returns the process exit code.
    pub fn finish(&self) -> i32 {
        println!("acceptance: {} passed, {} failed", self.outcomes.len() - self.failed(), self.failed());
        i32::from(self.failed() > 0)
    }
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}
