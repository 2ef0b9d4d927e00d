use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed court document: {0}")]
    MalformedCourt(String),
    #[error("start not navigable")]
    StartNotNavigable,
    #[error("goal not navigable")]
    GoalNotNavigable,
    #[error("{0} cell {1:?} out of bounds")]
    OutOfBounds(&'static str, (i32, i32)),
    #[error("goal unreachable from start")]
    GoalUnreachable,
    #[error("zero total gust probability with gusts enabled")]
    ZeroGustProbability,
    #[error("malformed polar table: {0}")]
    MalformedPolar(String),
    #[error("graph contains a cycle")]
    Cyclic,
    #[error("no feasible route")]
    NoFeasibleRoute,
    #[error("malformed route: {0}")]
    MalformedRoute(String),
    #[error("malformed scenario file: {0}")]
    MalformedScenario(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot repair chromosome: {0}")]
    Repair(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
