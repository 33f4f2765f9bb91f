//! Configurations shipped under `configs/`, embedded at build time.

macro_rules! embedded {
    ($dir:literal: $($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../../../configs/", $dir, "/", $name, ".json")))),*]
    };
}

pub const SCHEDULES: &[(&str, &str)] = embedded!("schedules":
    "sigmoid-25",
    "sigmoid-35",
    "sigmoid-50",
    "step-all-attn-1m",
    "step-all-attn-25",
    "step-all-attn-2m",
    "step-all-attn-35",
    "step-all-attn-50",
    "step-first-attn",
    "step-first-mamba",
    "step-second-mamba",
);

pub const PATTERNS: &[(&str, &str)] = embedded!("patterns":
    "all",
    "all-attn",
    "all-attn-1m",
    "all-attn-2m",
    "first-attn",
    "first-mamba",
    "second-mamba",
);

pub const RUNS: &[(&str, &str)] = embedded!("runs":
    "nemotron62-all-attn-1m",
    "nemotron62-all-attn-25",
    "nemotron62-all-attn-2m",
    "nemotron62-all-attn-35",
    "nemotron62-all-attn-50",
    "nemotron62-first-attn",
    "nemotron62-first-mamba",
    "nemotron62-second-mamba",
    "nemotron62-sigmoid-25",
    "nemotron62-sigmoid-35",
    "nemotron62-sigmoid-50",
    "tiny8-baseline",
    "tiny8-planted-avg-pool",
    "tiny8-planted-query-based",
);

fn lookup(table: &[(&'static str, &'static str)], name: &str) -> Option<&'static str> {
    table
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn schedule(name: &str) -> Option<&'static str> {
    lookup(SCHEDULES, name)
}

pub fn pattern(name: &str) -> Option<&'static str> {
    lookup(PATTERNS, name)
}

pub fn run(name: &str) -> Option<&'static str> {
    lookup(RUNS, name)
}

pub fn schedule_names() -> Vec<&'static str> {
    SCHEDULES.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::RunConfig;
    use crate::schedule::{ReductionPattern, ScheduleSpec};

    #[test]
    fn every_shipped_config_parses() {
        for (_, text) in SCHEDULES {
            ScheduleSpec::from_json(text).unwrap().validate(62).unwrap();
        }
        for (_, text) in PATTERNS {
            serde_json::from_str::<ReductionPattern>(text).unwrap();
        }
        for (name, text) in RUNS {
            let cfg = RunConfig::from_json(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.schedule().unwrap();
            cfg.architecture().unwrap();
        }
    }
}
