use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-stochastic kernel: row (s={state}, a={action}) sums to {sum}")]
    NonStochasticKernel { state: usize, action: usize, sum: f64 },

    #[error("negative transition probability {value} at (s={state}, a={action}, s'={next})")]
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("discount {value} outside [0, 1] at (s={state}, a={action}, s'={next})")]
    DiscountOutOfRange {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("negative {which} {value} at state {state}")]
    NegativeInterest {
        which: &'static str,
        state: usize,
        value: f64,
    },

    #[error("shape mismatch for {field}: expected {expected} entries, got {got}")]
    Shape {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("non-ergodic chain: {0}")]
    NonErgodic(String),

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error("value function may not exist: I - P_gamma is singular")]
    ValueUndefined,

    #[error("emphasis undefined: I - P_gamma is singular")]
    EmphasisUndefined,

    #[error("behavior chain not fully supported: d_mu({state}) = {value}")]
    BehaviorUnsupported { state: usize, value: f64 },

    #[error("gamma_hat {0} out of range")]
    GammaHatOutOfRange(f64),

    #[error("trace not warmed: no previous transition")]
    TraceNotWarmed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
