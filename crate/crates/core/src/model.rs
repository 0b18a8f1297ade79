//! Market description, discretization parameters, and config ingestion.
//!
//! Configs are TOML documents with two tables:
//!
//! ```toml
//! [model]
//! values = [1.0, -1.0]     # asset value support (pairwise distinct)
//! prior = [0.5, 0.5]       # prior probabilities (renormalized on load)
//! horizon = 0.25           # T > 0
//! action_bound = 1.0       # optional; the sqrt cost forces 1.0
//!
//! [model.cost]
//! variant = "sqrt"         # "sqrt" | "quadratic" | "tabulated"
//! # lambda = 1.0           # quadratic only
//! # theta = [...]          # tabulated only
//! # f = [...]              # tabulated only
//!
//! [discretization]
//! num_steps = 64
//! num_paths = 10000
//! simplex_grid = 201
//! seed = 42
//! basis_degree = 3
//! ```

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hamiltonian::{CostVariant, HamiltonianSpec};
use crate::scalar::Real;
use crate::Result;

/// The discrete-value Kyle-Back market: support, prior, horizon, and cost.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel<F> {
    pub values: Vec<F>,
    pub prior: Vec<F>,
    pub horizon: F,
    pub hamiltonian: HamiltonianSpec<F>,
}

impl<F: Real> MarketModel<F> {
    pub fn new(
        values: Vec<F>,
        prior: Vec<F>,
        horizon: F,
        hamiltonian: HamiltonianSpec<F>,
    ) -> Result<Self> {
        let model = Self {
            values,
            prior,
            horizon,
            hamiltonian,
        };
        model.validate("model")?;
        Ok(model)
    }

    /// The symmetric two-type instance: values (1, -1), uniform prior,
    /// square-root cost.
    pub fn canonical_two_type(horizon: F) -> Self {
        Self::new(
            vec![F::one(), -F::one()],
            vec![F::lit(0.5), F::lit(0.5)],
            horizon,
            HamiltonianSpec::sqrt_closed_form(),
        )
        .expect("canonical instance is valid")
    }

    /// Degenerate one-type instance (no inside information).
    pub fn single_type(value: F, horizon: F) -> Self {
        Self::new(
            vec![value],
            vec![F::one()],
            horizon,
            HamiltonianSpec::sqrt_closed_form(),
        )
        .expect("single-type instance is valid")
    }

    pub fn n_types(&self) -> usize {
        self.values.len()
    }

    /// Break-even price at a simplex point: `Σ v_i x_i`.
    pub fn price_at(&self, x: &[F]) -> F {
        self.values
            .iter()
            .zip(x.iter())
            .map(|(&v, &xi)| v * xi)
            .sum()
    }

    /// Prior-mean value `Σ p_i v_i`.
    pub fn mean_value(&self) -> F {
        self.price_at(&self.prior)
    }

    pub fn action_bound(&self) -> F {
        self.hamiltonian.bound
    }

    fn validate(&self, key: &str) -> Result<()> {
        let n = self.values.len();
        if n == 0 {
            return Err(Error::ConfigValue {
                key: format!("{key}.values"),
                message: "support must not be empty (N >= 1)".into(),
            });
        }
        if self.prior.len() != n {
            return Err(Error::ConfigValue {
                key: format!("{key}.prior"),
                message: format!("expected {n} entries, got {}", self.prior.len()),
            });
        }
        for i in 0..n {
            if !self.values[i].is_finite() {
                return Err(Error::ConfigValue {
                    key: format!("{key}.values[{i}]"),
                    message: "value must be finite".into(),
                });
            }
            for j in i + 1..n {
                if self.values[i] == self.values[j] {
                    return Err(Error::ConfigValue {
                        key: format!("{key}.values[{j}]"),
                        message: format!("duplicate values at indices {i} and {j}"),
                    });
                }
            }
        }
        for (i, &p) in self.prior.iter().enumerate() {
            if !(p > F::zero()) {
                return Err(Error::ConfigValue {
                    key: format!("{key}.prior[{i}]"),
                    message: "prior probabilities must be strictly positive".into(),
                });
            }
        }
        if !(self.horizon > F::zero()) || !self.horizon.is_finite() {
            return Err(Error::ConfigValue {
                key: format!("{key}.horizon"),
                message: "horizon must be a positive real".into(),
            });
        }
        Ok(())
    }
}

/// Monte Carlo / grid discretization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization<F> {
    pub num_steps: usize,
    pub num_paths: usize,
    pub simplex_grid: usize,
    pub seed: u64,
    pub basis_degree: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Real> Discretization<F> {
    pub fn new(
        num_steps: usize,
        num_paths: usize,
        simplex_grid: usize,
        seed: u64,
        basis_degree: usize,
    ) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::ConfigValue {
                key: "discretization.num_steps".into(),
                message: "must be >= 1".into(),
            });
        }
        if num_paths == 0 {
            return Err(Error::ConfigValue {
                key: "discretization.num_paths".into(),
                message: "must be >= 1".into(),
            });
        }
        if simplex_grid < 2 {
            return Err(Error::ConfigValue {
                key: "discretization.simplex_grid".into(),
                message: "must be >= 2".into(),
            });
        }
        if basis_degree == 0 {
            return Err(Error::ConfigValue {
                key: "discretization.basis_degree".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(Self {
            num_steps,
            num_paths,
            simplex_grid,
            seed,
            basis_degree,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn dt(&self, horizon: F) -> F {
        horizon / F::from_usize(self.num_steps).unwrap()
    }

    pub fn with_steps(&self, num_steps: usize) -> Self {
        let mut out = self.clone();
        out.num_steps = num_steps;
        out
    }

    pub fn with_paths(&self, num_paths: usize) -> Self {
        let mut out = self.clone();
        out.num_paths = num_paths;
        out
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out
    }
}

// ---------------------------------------------------------------------------
// Serde-facing config document (always f64; converted on load).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigDoc {
    model: ModelSection,
    discretization: DiscSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSection {
    values: Vec<f64>,
    prior: Vec<f64>,
    horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    action_bound: Option<f64>,
    cost: CostSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostSection {
    variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DiscSection {
    num_steps: usize,
    num_paths: usize,
    #[serde(default = "default_simplex_grid")]
    simplex_grid: usize,
    seed: u64,
    #[serde(default = "default_basis_degree")]
    basis_degree: usize,
}

fn default_simplex_grid() -> usize {
    201
}

fn default_basis_degree() -> usize {
    3
}

/// Parse and validate a config document. The prior is renormalized to sum
/// exactly to one; deviations beyond 1e-12 are logged as a warning.
pub fn load_model<F: Real>(config_text: &str) -> Result<(MarketModel<F>, Discretization<F>)> {
    let doc: ConfigDoc =
        toml::from_str(config_text).map_err(|e| Error::ConfigParse(e.to_string()))?;

    let mut prior = doc.model.prior.clone();
    if prior.is_empty() {
        return Err(Error::ConfigValue {
            key: "model.prior".into(),
            message: "must not be empty".into(),
        });
    }
    for (i, &p) in prior.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::ConfigValue {
                key: format!("model.prior[{i}]"),
                message: "prior probabilities must be strictly positive".into(),
            });
        }
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        log::warn!("model.prior sums to {total:.17}; renormalizing to 1");
    }
    // Renormalize and pin the index-order sum to exactly one; when the sum
    // is already exactly one this is a bitwise no-op, so loading is
    // idempotent.
    crate::simplex::pin_unit_mass(&mut prior);

    let bound = doc.model.action_bound;
    let hamiltonian: HamiltonianSpec<F> = match doc.model.cost.variant.as_str() {
        "sqrt" | "sqrt_closed_form" => {
            if let Some(b) = bound {
                if (b - 1.0).abs() > 0.0 {
                    return Err(Error::ConfigValue {
                        key: "model.action_bound".into(),
                        message: "the sqrt cost fixes the action interval to [-1, 1]".into(),
                    });
                }
            }
            HamiltonianSpec::sqrt_closed_form()
        }
        "quadratic" => {
            let lambda = doc.model.cost.lambda.ok_or_else(|| Error::ConfigValue {
                key: "model.cost.lambda".into(),
                message: "required for the quadratic variant".into(),
            })?;
            let b = bound.ok_or_else(|| Error::ConfigValue {
                key: "model.action_bound".into(),
                message: "required for the quadratic variant".into(),
            })?;
            HamiltonianSpec::quadratic(F::lit(lambda), F::lit(b)).map_err(|e| {
                Error::ConfigValue {
                    key: "model.cost".into(),
                    message: e.to_string(),
                }
            })?
        }
        "tabulated" => {
            let theta = doc.model.cost.theta.clone().ok_or_else(|| Error::ConfigValue {
                key: "model.cost.theta".into(),
                message: "required for the tabulated variant".into(),
            })?;
            let f = doc.model.cost.f.clone().ok_or_else(|| Error::ConfigValue {
                key: "model.cost.f".into(),
                message: "required for the tabulated variant".into(),
            })?;
            let b = bound.ok_or_else(|| Error::ConfigValue {
                key: "model.action_bound".into(),
                message: "required for the tabulated variant".into(),
            })?;
            HamiltonianSpec::tabulated(
                theta.into_iter().map(F::lit).collect(),
                f.into_iter().map(F::lit).collect(),
                F::lit(b),
            )
            .map_err(|e| Error::ConfigValue {
                key: "model.cost".into(),
                message: e.to_string(),
            })?
        }
        other => {
            return Err(Error::ConfigValue {
                key: "model.cost.variant".into(),
                message: format!("unknown variant `{other}`"),
            })
        }
    };

    let model = MarketModel::new(
        doc.model.values.iter().map(|&v| F::lit(v)).collect(),
        prior.iter().map(|&p| F::lit(p)).collect(),
        F::lit(doc.model.horizon),
        hamiltonian,
    )?;
    let disc = Discretization::new(
        doc.discretization.num_steps,
        doc.discretization.num_paths,
        doc.discretization.simplex_grid,
        doc.discretization.seed,
        doc.discretization.basis_degree,
    )?;
    Ok((model, disc))
}

/// Serialize a model + discretization back into the config grammar accepted
/// by [`load_model`]. Loading the output reproduces the inputs bit-for-bit.
pub fn to_config_string<F: Real>(
    model: &MarketModel<F>,
    disc: &Discretization<F>,
) -> String {
    let cost = match &model.hamiltonian.variant {
        CostVariant::SqrtClosedForm => CostSection {
            variant: "sqrt".into(),
            lambda: None,
            theta: None,
            f: None,
        },
        CostVariant::Quadratic { lambda } => CostSection {
            variant: "quadratic".into(),
            lambda: Some(lambda.as_f64()),
            theta: None,
            f: None,
        },
        CostVariant::Tabulated { theta, cost } => CostSection {
            variant: "tabulated".into(),
            lambda: None,
            theta: Some(theta.iter().map(|&t| t.as_f64()).collect()),
            f: Some(cost.iter().map(|&c| c.as_f64()).collect()),
        },
    };
    let action_bound = match &model.hamiltonian.variant {
        CostVariant::SqrtClosedForm => None,
        _ => Some(model.hamiltonian.bound.as_f64()),
    };
    let doc = ConfigDoc {
        model: ModelSection {
            values: model.values.iter().map(|&v| v.as_f64()).collect(),
            prior: model.prior.iter().map(|&p| p.as_f64()).collect(),
            horizon: model.horizon.as_f64(),
            action_bound,
            cost,
        },
        discretization: DiscSection {
            num_steps: disc.num_steps,
            num_paths: disc.num_paths,
            simplex_grid: disc.simplex_grid,
            seed: disc.seed,
            basis_degree: disc.basis_degree,
        },
    };
    toml::to_string_pretty(&doc).expect("config serialization cannot fail")
}
