//! Scenario runner (stub).

pub struct ScenarioConfig;
pub struct RunReport;
