use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum PrecoderError {
    #[error("user set contains duplicate index {0}")]
    DuplicateUser(usize),
    #[error("user index {index} out of range for {users} users")]
    UserOutOfRange { index: usize, users: usize },
    #[error("empty user set")]
    EmptySet,
    #[error("effective channel matrix is singular or ill-conditioned (cond = {condition:e})")]
    SingularChannel { condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("top-k needs 1 <= k <= n_max, got k = {k} with n_max = {n_max}")]
    InvalidK { k: usize, n_max: usize },
    #[error(
        "exhaustive search over {subsets} subsets exceeds the cap of {cap}; \
         reduce num_users or n_max to desk-scale values"
    )]
    CapExceeded { subsets: u128, cap: u64 },
    #[error(transparent)]
    Precoder(#[from] PrecoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {got} does not match network input {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("training diverged at epoch {epoch}: loss is {loss}; lower the learning rate or check input normalisation")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown input mode `{0}`; expected a `+`-joined list of W, C(D), C(W), C(R/I), B")]
    InputMode(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cumulative rate of user {user} is {value}, log undefined")]
    NonPositiveRate { user: usize, value: f64 },
    #[error("channel of user {0} has zero norm")]
    ZeroChannel(usize),
    #[error("no episodes to aggregate")]
    Empty,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scheduler `{scheduler}` failed at slot {slot}: {source}")]
    Schedule {
        scheduler: String,
        slot: usize,
        #[source]
        source: ScheduleError,
    },
    #[error("slot {slot}: reported Q {reported} differs from recomputed {recomputed}")]
    Inconsistent {
        slot: usize,
        reported: f64,
        recomputed: f64,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}
