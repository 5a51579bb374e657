//! Finite MDPs with transition-based discounting and interest functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest tolerated deviation of a kernel row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A finite MDP.
///
/// `transition` and `discount` are flat `|S|·|A|·|S|` tensors indexed
/// `(s, a, s')`; `reward` is `|S|·|A|`. States may restrict which actions
/// are available through `action_mask`; unavailable actions still carry a
/// valid kernel row but are never selected by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp<T> {
    n_states: usize,
    n_actions: usize,
    transition: Vec<T>,
    reward: Vec<T>,
    discount: Vec<T>,
    interest: Vec<T>,
    interest_hat: Vec<T>,
    action_mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub max_row_deviation: f64,
}

/// Builder input for [`FiniteMdp::new`].
#[derive(Debug, Clone)]
pub struct MdpParts<T> {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<T>,
    pub reward: Vec<T>,
    pub discount: Vec<T>,
    pub interest: Vec<T>,
    pub interest_hat: Vec<T>,
    pub action_mask: Option<Vec<bool>>,
}

impl<T: Scalar> FiniteMdp<T> {
    pub fn new(parts: MdpParts<T>) -> Result<Self> {
        let MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            discount,
            interest,
            interest_hat,
            action_mask,
        } = parts;
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        let check = |field, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Shape { field, expected, got })
            }
        };
        check("transition", ns * na * ns, transition.len())?;
        check("reward", ns * na, reward.len())?;
        check("discount", ns * na * ns, discount.len())?;
        check("interest", ns, interest.len())?;
        check("interest_hat", ns, interest_hat.len())?;
        let action_mask = action_mask.unwrap_or_else(|| vec![true; ns * na]);
        check("action_mask", ns * na, action_mask.len())?;
        let mdp = Self {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            discount,
            interest,
            interest_hat,
            action_mask,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Check every structural invariant; reports the worst kernel row-sum
    /// deviation on success.
    pub fn validate(&self) -> Result<ValidationReport> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut worst = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let mut sum = T::zero();
                for s2 in 0..ns {
                    let p = self.p(s, a, s2);
                    if p.is_nan() || p < T::zero() {
                        return Err(Error::NegativeProbability {
                            state: s,
                            action: a,
                            next: s2,
                            value: p.as_f64(),
                        });
                    }
                    let g = self.gamma(s, a, s2);
                    if !(g >= T::zero() && g <= T::one()) {
                        return Err(Error::DiscountOutOfRange {
                            state: s,
                            action: a,
                            next: s2,
                            value: g.as_f64(),
                        });
                    }
                    sum += p;
                }
                let dev = (sum - T::one()).abs();
                if dev.is_nan() || dev > T::tol(ROW_SUM_TOL) {
                    return Err(Error::NonStochasticKernel {
                        state: s,
                        action: a,
                        sum: sum.as_f64(),
                    });
                }
                worst = worst.max(dev.as_f64());
                if !self.reward(s, a).is_finite() {
                    return Err(Error::InvalidMdp(format!("reward at ({s}, {a}) is not finite")));
                }
            }
            if self.n_available(s) == 0 {
                return Err(Error::InvalidMdp(format!("state {s} has no available action")));
            }
            for (which, v) in [("interest", self.interest[s]), ("interest_hat", self.interest_hat[s])] {
                if v < T::zero() || !v.is_finite() {
                    return Err(Error::NegativeInterest {
                        which,
                        state: s,
                        value: v.as_f64(),
                    });
                }
            }
        }
        Ok(ValidationReport {
            max_row_deviation: worst,
        })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of policy parameters for a tabular policy on this MDP.
    #[inline]
    pub fn n_params(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, s2: usize) -> T {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    /// Kernel row `p(·|s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[T] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn gamma(&self, s: usize, a: usize, s2: usize) -> T {
        self.discount[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> T {
        self.reward[s * self.n_actions + a]
    }

    #[inline]
    pub fn interest(&self, s: usize) -> T {
        self.interest[s]
    }

    #[inline]
    pub fn interest_hat(&self, s: usize) -> T {
        self.interest_hat[s]
    }

    pub fn interest_vec(&self) -> &[T] {
        &self.interest
    }

    pub fn interest_hat_vec(&self) -> &[T] {
        &self.interest_hat
    }

    #[inline]
    pub fn is_available(&self, s: usize, a: usize) -> bool {
        self.action_mask[s * self.n_actions + a]
    }

    pub fn action_mask(&self) -> &[bool] {
        &self.action_mask
    }

    pub fn n_available(&self, s: usize) -> usize {
        (0..self.n_actions).filter(|&a| self.is_available(s, a)).count()
    }

    /// Copy with every reward multiplied by `k`.
    pub fn scale_rewards(&self, k: T) -> Self {
        let mut out = self.clone();
        out.reward.iter_mut().for_each(|r| *r *= k);
        out
    }

    /// Copy with `interest_hat` replaced.
    pub fn with_interest_hat(&self, interest_hat: Vec<T>) -> Result<Self> {
        let mut out = self.clone();
        out.interest_hat = interest_hat;
        out.validate()?;
        Ok(out)
    }

    pub fn to_document(&self) -> MdpDocument {
        let (ns, na) = (self.n_states, self.n_actions);
        let cube = |v: &[T]| -> Vec<Vec<Vec<f64>>> {
            (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| {
                            let start = (s * na + a) * ns;
                            v[start..start + ns].iter().map(|x| x.as_f64()).collect()
                        })
                        .collect()
                })
                .collect()
        };
        let all_masked = self.action_mask.iter().all(|&m| m);
        MdpDocument {
            n_states: ns,
            n_actions: na,
            transition: cube(&self.transition),
            reward: (0..ns)
                .map(|s| (0..na).map(|a| self.reward(s, a).as_f64()).collect())
                .collect(),
            discount: Discount::Tensor(cube(&self.discount)),
            interest: PerState::Vector(self.interest.iter().map(|x| x.as_f64()).collect()),
            interest_hat: PerState::Vector(self.interest_hat.iter().map(|x| x.as_f64()).collect()),
            action_mask: (!all_masked).then(|| {
                (0..ns)
                    .map(|s| (0..na).map(|a| self.is_available(s, a)).collect())
                    .collect()
            }),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.n_states, doc.n_actions);
        let flat_cube = |field: &'static str, c: &[Vec<Vec<f64>>]| -> Result<Vec<T>> {
            if c.len() != ns || c.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != ns)) {
                return Err(Error::Shape {
                    field,
                    expected: ns * na * ns,
                    got: c.iter().flatten().map(Vec::len).sum(),
                });
            }
            Ok(c.iter().flatten().flatten().map(|&x| T::of(x)).collect())
        };
        let transition = flat_cube("transition", &doc.transition)?;
        if doc.reward.len() != ns || doc.reward.iter().any(|r| r.len() != na) {
            return Err(Error::Shape {
                field: "reward",
                expected: ns * na,
                got: doc.reward.iter().map(Vec::len).sum(),
            });
        }
        let reward = doc.reward.iter().flatten().map(|&x| T::of(x)).collect();
        let discount = match &doc.discount {
            Discount::Constant(g) => vec![T::of(*g); ns * na * ns],
            Discount::Tensor(c) => flat_cube("discount", c)?,
        };
        let action_mask = match &doc.action_mask {
            None => None,
            Some(m) => {
                if m.len() != ns || m.iter().any(|r| r.len() != na) {
                    return Err(Error::Shape {
                        field: "action_mask",
                        expected: ns * na,
                        got: m.iter().map(Vec::len).sum(),
                    });
                }
                Some(m.iter().flatten().copied().collect())
            }
        };
        Self::new(MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            discount,
            interest: doc.interest.expand(ns),
            interest_hat: doc.interest_hat.expand(ns),
            action_mask,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP document serializes")
    }
}

/// JSON form of an MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    pub discount: Discount,
    #[serde(default = "PerState::one")]
    pub interest: PerState,
    #[serde(default = "PerState::one")]
    pub interest_hat: PerState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_mask: Option<Vec<Vec<bool>>>,
}

/// Discount as a constant or a full `[s][a][s']` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Discount {
    Constant(f64),
    Tensor(Vec<Vec<Vec<f64>>>),
}

/// A per-state function given as a scalar shorthand or a full vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerState {
    Constant(f64),
    Vector(Vec<f64>),
}

impl PerState {
    fn one() -> Self {
        PerState::Constant(1.0)
    }

    fn expand<T: Scalar>(&self, n: usize) -> Vec<T> {
        match self {
            PerState::Constant(x) => vec![T::of(*x); n],
            PerState::Vector(v) => v.iter().map(|&x| T::of(x)).collect(),
        }
    }
}
