//! Polynomial regression basis on the simplex.
//!
//! Since the coordinates sum to one, the basis uses the first `N-1`
//! coordinates only: all monomials `x_1^{e_1} ... x_{N-1}^{e_{N-1}}` of total
//! degree at most `d`. For N=1 this degenerates to the constant function.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyBasis {
    pub n_types: usize,
    pub degree: usize,
    /// Exponent vectors over the free coordinates, constant term first.
    pub exponents: Vec<Vec<u32>>,
}

impl PolyBasis {
    pub fn new(n_types: usize, degree: usize) -> Self {
        assert!(n_types >= 1 && degree >= 1);
        let free = n_types - 1;
        let mut exponents = Vec::new();
        let mut current = vec![0u32; free.max(1)];
        gen_exponents(free, degree as u32, 0, &mut current, &mut exponents);
        exponents.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));
        Self {
            n_types,
            degree,
            exponents,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Evaluate all basis functions at a simplex point, appending to `out`.
    pub fn eval_into<F: Real>(&self, x: &[F], out: &mut Vec<F>) {
        let free = self.n_types - 1;
        for exps in &self.exponents {
            let mut term = F::one();
            for (j, &e) in exps.iter().enumerate().take(free) {
                for _ in 0..e {
                    term = term * x[j];
                }
            }
            out.push(term);
        }
    }

    pub fn eval<F: Real>(&self, x: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(self.len());
        self.eval_into(x, &mut out);
        out
    }

    /// Combine coefficients with basis values at `x`.
    pub fn combine<F: Real>(&self, coef: &[F], x: &[F]) -> F {
        debug_assert_eq!(coef.len(), self.len());
        let free = self.n_types - 1;
        let mut acc = F::zero();
        for (exps, &c) in self.exponents.iter().zip(coef.iter()) {
            let mut term = F::one();
            for (j, &e) in exps.iter().enumerate().take(free) {
                for _ in 0..e {
                    term = term * x[j];
                }
            }
            acc = acc + c * term;
        }
        acc
    }

    /// The same basis with a lower total degree (for rank-deficiency repair).
    pub fn reduced(&self) -> Option<Self> {
        if self.degree <= 1 {
            return None;
        }
        Some(Self::new(self.n_types, self.degree - 1))
    }
}

fn gen_exponents(
    free: usize,
    budget: u32,
    pos: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if free == 0 {
        if out.is_empty() {
            out.push(vec![0]);
        }
        return;
    }
    if pos == free {
        out.push(current.clone());
        return;
    }
    for e in 0..=budget {
        current[pos] = e;
        gen_exponents(free, budget - e, pos + 1, current, out);
    }
    current[pos] = 0;
}
