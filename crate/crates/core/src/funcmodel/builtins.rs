//! Named test functions and expression-defined functions.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::ExprField;
use super::function::SampledFunction;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::geometry::Region;

/// Default symbolic derivative order of built-in functions.
pub const DEFAULT_ORDER: usize = 3;

/// Configuration of a function to approximate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// f ≡ 0 in ℝ^m.
    Zero { value_dim: usize },
    /// amplitude·exp(−|x|²/width²)·e.
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        width: f64,
        vector: Vec<f64>,
    },
    /// (Σ_k c_k x₁^k)·exp(−|x|²)·e.
    PolyGaussian { coeffs: Vec<f64>, vector: Vec<f64> },
    /// f_q(x) = amplitude·exp(−|x|²)·cos(s_q x₁)·envelope(x) on the nodes s_q.
    PlaneWave {
        nodes: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        envelope: Option<String>,
    },
    /// One expression per coordinate.
    Expr { coords: Vec<String> },
    /// One template expression evaluated with `s` bound to each node.
    Template { template: String, nodes: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl FunctionSpec {
    pub fn value_dim(&self) -> usize {
        match self {
            FunctionSpec::Zero { value_dim } => *value_dim,
            FunctionSpec::Gaussian { vector, .. } | FunctionSpec::PolyGaussian { vector, .. } => {
                vector.len()
            }
            FunctionSpec::PlaneWave { nodes, .. } | FunctionSpec::Template { nodes, .. } => {
                nodes.len()
            }
            FunctionSpec::Expr { coords } => coords.len(),
        }
    }

    /// Coordinate expressions in `dim` variables.
    pub fn expressions(&self, dim: usize) -> Result<Vec<Expr>> {
        let no = HashMap::new();
        let p = |s: &str, consts: &HashMap<String, f64>| parse(s, dim, consts);
        let sq = "(|x|^2)";
        match self {
            FunctionSpec::Zero { value_dim } => Ok(vec![Expr::Const(0.0); *value_dim]),
            FunctionSpec::Gaussian {
                amplitude,
                width,
                vector,
            } => vector
                .iter()
                .map(|e| {
                    p(
                        &format!("{}*exp(-{sq}/{})", amplitude * e, width * width),
                        &no,
                    )
                })
                .collect(),
            FunctionSpec::PolyGaussian { coeffs, vector } => {
                let poly: Vec<String> = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| format!("({c})*x1^{k}"))
                    .collect();
                let poly = if poly.is_empty() {
                    "0".to_string()
                } else {
                    poly.join("+")
                };
                vector
                    .iter()
                    .map(|e| p(&format!("({e})*({poly})*exp(-{sq})"), &no))
                    .collect()
            }
            FunctionSpec::PlaneWave {
                nodes,
                amplitude,
                envelope,
            } => {
                let env = envelope.as_deref().unwrap_or("1");
                nodes
                    .iter()
                    .map(|s| {
                        p(
                            &format!("({amplitude})*exp(-{sq})*cos(({s})*x1)*({env})"),
                            &no,
                        )
                    })
                    .collect()
            }
            FunctionSpec::Expr { coords } => coords.iter().map(|c| p(c, &no)).collect(),
            FunctionSpec::Template { template, nodes } => nodes
                .iter()
                .map(|s| {
                    let mut consts = HashMap::new();
                    consts.insert("s".to_string(), *s);
                    p(template, &consts)
                })
                .collect(),
        }
    }

    /// Build the function on `domain` with symbolic derivatives up to `order`.
    pub fn build(&self, domain: Region, order: usize) -> Result<SampledFunction> {
        if self.value_dim() == 0 {
            return Err(Error::Config(
                "function needs at least one coordinate".into(),
            ));
        }
        if let FunctionSpec::Zero { value_dim } = self {
            return Ok(SampledFunction::zero(*value_dim, domain).with_order(order));
        }
        let exprs = self.expressions(domain.dim())?;
        let field = ExprField::new(domain.dim(), &exprs, order);
        SampledFunction::analytic(Arc::new(field), domain, order)
    }
}

/// Shorthand: scalar function from one expression.
pub fn scalar_expr(src: &str, domain: Region, order: usize) -> Result<SampledFunction> {
    FunctionSpec::Expr {
        coords: vec![src.to_string()],
    }
    .build(domain, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcmodel::MultiIndex;
    use crate::geometry::AxisBox;

    fn line() -> Region {
        Region::new(vec![AxisBox::new(vec![-4.0], vec![4.0]).unwrap()], vec![81]).unwrap()
    }

    #[test]
    fn plane_wave_values() {
        let f = FunctionSpec::PlaneWave {
            nodes: vec![0.0, 1.0, 2.5],
            amplitude: 1.0,
            envelope: None,
        }
        .build(line(), 2)
        .unwrap();
        let x = 0.8f64;
        let v = f.evaluate(&MultiIndex::new(&[0]), &[x]).unwrap();
        for (q, s) in [0.0, 1.0, 2.5f64].iter().enumerate() {
            assert!((v[q] - (-x * x).exp() * (s * x).cos()).abs() < 1e-15);
        }
        let d = f.evaluate(&MultiIndex::new(&[1]), &[x]).unwrap();
        let s = 2.5f64;
        let want = (-x * x).exp() * (-2.0 * x * (s * x).cos() - s * (s * x).sin());
        assert!((d[2] - want).abs() < 1e-13);
    }

    #[test]
    fn template_and_gaussian() {
        let t = FunctionSpec::Template {
            template: "s*x".into(),
            nodes: vec![1.0, -2.0],
        }
        .build(line(), 1)
        .unwrap();
        assert_eq!(
            t.evaluate(&MultiIndex::new(&[0]), &[0.5]).unwrap(),
            vec![0.5, -1.0]
        );
        let g = FunctionSpec::Gaussian {
            amplitude: 2.0,
            width: 1.0,
            vector: vec![1.0, 0.5],
        }
        .build(line(), 1)
        .unwrap();
        assert_eq!(
            g.evaluate(&MultiIndex::new(&[0]), &[0.0]).unwrap(),
            vec![2.0, 1.0]
        );
    }

    #[test]
    fn toml_roundtrip() {
        let spec: FunctionSpec =
            toml::from_str("kind = \"plane_wave\"\nnodes = [0.0, 0.5]\n").unwrap();
        assert_eq!(spec.value_dim(), 2);
    }
}
