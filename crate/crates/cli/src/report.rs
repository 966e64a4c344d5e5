use std::fs;
use std::path::Path;

use corpusforge::PipelineReport;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

/// Written by every run. Contains no timestamps or absolute paths the user
/// did not pass, so identical invocations produce identical bytes.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub command: String,
    pub config: &'a RunConfig,
    pub stages: Vec<PipelineReport>,
    /// `docs_in` of the first stage, `docs_out` of the last, drops summed.
    pub totals: PipelineReport,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl<'a> RunReport<'a> {
    pub fn new(
        command: &str,
        config: &'a RunConfig,
        stages: Vec<PipelineReport>,
        details: Value,
    ) -> Self {
        Self {
            command: command.to_string(),
            config,
            totals: totals(&stages),
            stages,
            details,
        }
    }

    /// To `path` if given, else to stdout.
    pub fn emit(&self, path: Option<&Path>) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        match path {
            Some(p) => fs::write(p, s)?,
            None => print!("{s}"),
        }
        Ok(())
    }
}

pub fn totals(stages: &[PipelineReport]) -> PipelineReport {
    let mut t = PipelineReport::new("total");
    if let (Some(first), Some(last)) = (stages.first(), stages.last()) {
        t.docs_in = first.docs_in;
        t.docs_out = last.docs_out;
    }
    for s in stages {
        for (reason, n) in &s.docs_dropped_by_reason {
            *t.docs_dropped_by_reason.entry(reason.clone()).or_default() += n;
        }
    }
    t
}

/// A stage that keeps everything it sees.
pub fn passthrough(name: &str, n: usize) -> PipelineReport {
    let mut r = PipelineReport::new(name);
    r.docs_in = n as u64;
    r.docs_out = n as u64;
    r
}
