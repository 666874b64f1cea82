//! SDE models `dX = a(X) dt + B(X) dW|_α` and the named-model registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::ito_equivalent_drift;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{DomainBox, MatrixField, VectorField};
use crate::sense::SenseParameter;

/// Block width of [`ScalarKernel::eval_batch`].
pub(crate) const LANES: usize = 8;

/// Fused `x -> [a(x), b(x), b'(x)]` for a scalar model, evaluating exactly
/// what the separate drift and noise fields evaluate.
#[derive(Clone)]
pub(crate) struct ScalarKernel {
    batch: Arc<dyn Fn(&[f64; LANES], &mut [[f64; 3]; LANES]) + Send + Sync>,
}

impl std::fmt::Debug for ScalarKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarKernel")
    }
}

impl ScalarKernel {
    #[cfg(test)]
    fn eval(&self, x: f64) -> [f64; 3] {
        let mut out = [[0.0; 3]; LANES];
        self.eval_batch(&[x; LANES], &mut out);
        out[0]
    }

    /// `eval` over a block of states.
    #[inline]
    pub(crate) fn eval_batch(&self, xs: &[f64; LANES], out: &mut [[f64; 3]; LANES]) {
        (self.batch)(xs, out)
    }
}

#[derive(Debug, Clone)]
pub struct SdeModel {
    name: String,
    drift: VectorField,
    noise: MatrixField,
    sense: SenseParameter,
    kernel: Option<ScalarKernel>,
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        drift: VectorField,
        noise: MatrixField,
        sense: SenseParameter,
    ) -> Result<Self> {
        let n = drift.dim();
        if noise.rows() != n || noise.dim() != n {
            return Err(Error::contract(format!(
                "noise must be {n} x m over a {n}-dimensional domain, got {} x {} over {}",
                noise.rows(),
                noise.cols(),
                noise.dim()
            )));
        }
        if drift.domain() != noise.domain() {
            return Err(Error::contract("drift and noise domains must coincide"));
        }
        Ok(SdeModel {
            name: name.into(),
            drift,
            noise,
            sense,
            kernel: None,
        })
    }

    /// Attaches a fused scalar kernel; it must agree bit for bit with the fields.
    pub(crate) fn with_kernel(mut self, k: impl Fn(f64) -> [f64; 3] + Copy + Send + Sync + 'static) -> Self {
        debug_assert!(self.state_dim() == 1 && self.noise_dim() == 1);
        self.kernel = Some(ScalarKernel {
            batch: Arc::new(move |xs: &[f64; LANES], out: &mut [[f64; 3]; LANES]| {
                for l in 0..LANES {
                    out[l] = k(xs[l]);
                }
            }),
        });
        self
    }

    pub(crate) fn kernel(&self) -> Option<&ScalarKernel> {
        self.kernel.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    pub fn noise(&self) -> &MatrixField {
        &self.noise
    }

    pub fn sense(&self) -> SenseParameter {
        self.sense
    }

    pub fn state_dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.cols()
    }

    pub fn domain(&self) -> &DomainBox {
        self.drift.domain()
    }

    pub fn with_sense(&self, sense: SenseParameter) -> SdeModel {
        SdeModel {
            sense,
            ..self.clone()
        }
    }

    /// The same process written as an Itô equation: drift `a + α a_sp`, sense 0.
    pub fn to_ito_form(&self) -> SdeModel {
        let src = self.clone();
        let n = self.state_dim();
        let drift = VectorField::new(self.domain().clone(), move |x, out| {
            let v = ito_equivalent_drift(&src, x).expect("point checked by caller");
            out[..n].copy_from_slice(&v);
        });
        SdeModel {
            name: format!("{}-ito", self.name),
            drift,
            noise: self.noise.clone(),
            sense: SenseParameter::ITO,
            kernel: None,
        }
    }
}

/// How a model is named in config files and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Registry {
        name: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
    Expression(ExpressionModel),
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        ModelSpec::Registry {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelSpec::Registry { name, .. } => name.clone(),
            ModelSpec::Expression(e) => e.name.clone(),
        }
    }

    pub fn build(&self, sense: SenseParameter) -> Result<SdeModel> {
        match self {
            ModelSpec::Registry { name, params } => registry_model(name, params, sense),
            ModelSpec::Expression(e) => e.build(sense),
        }
    }

    /// Registry parameter with its default.
    pub fn param(&self, key: &str) -> Option<f64> {
        match self {
            ModelSpec::Registry { name, params } => params
                .get(key)
                .copied()
                .or_else(|| default_param(name, key)),
            ModelSpec::Expression(_) => None,
        }
    }
}

/// A user model given as expression strings in `x1..xn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionModel {
    #[serde(default = "default_expr_name")]
    pub name: String,
    pub drift: Vec<String>,
    /// Row-major noise matrix, `noise[i][k] = b^{ik}`.
    pub noise: Vec<Vec<String>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Optional analytic derivatives, `noise_gradient[i][k][j] = ∂b^{ik}/∂x^j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_gradient: Option<Vec<Vec<Vec<String>>>>,
}

fn default_expr_name() -> String {
    "user".to_string()
}

impl ExpressionModel {
    pub fn build(&self, sense: SenseParameter) -> Result<SdeModel> {
        let n = self.drift.len();
        if n == 0 {
            return Err(Error::config("model.drift", "at least one component required"));
        }
        if self.noise.len() != n {
            return Err(Error::config("model.noise", format!("expected {n} rows")));
        }
        let m = self.noise[0].len();
        if m == 0 || self.noise.iter().any(|r| r.len() != m) {
            return Err(Error::config("model.noise", "rows must be non-empty and equal length"));
        }
        let domain = DomainBox::new(self.lo.clone(), self.hi.clone())
            .map_err(|e| Error::config("model.lo/hi", e.to_string()))?;
        if domain.dim() != n {
            return Err(Error::config("model.lo/hi", format!("expected {n} bounds")));
        }

        let compile = |field: &str, srcs: Vec<&String>| -> Result<Arc<Vec<Expr>>> {
            let mut out = Vec::with_capacity(srcs.len());
            for s in srcs {
                let e = Expr::parse(s).map_err(|e| Error::config(field, e.to_string()))?;
                if e.arity() > n {
                    return Err(Error::config(
                        field,
                        format!("`{s}` uses x{} but the state has dimension {n}", e.arity()),
                    ));
                }
                out.push(e);
            }
            Ok(Arc::new(out))
        };

        let drift_e = compile("model.drift", self.drift.iter().collect())?;
        let noise_e = compile("model.noise", self.noise.iter().flatten().collect())?;

        let de = drift_e.clone();
        let drift = VectorField::new(domain.clone(), move |x, out| {
            for (o, e) in out.iter_mut().zip(de.iter()) {
                *o = e.eval(x);
            }
        });
        let ne = noise_e.clone();
        let mut noise = MatrixField::new(n, m, domain, move |x, out| {
            for (o, e) in out.iter_mut().zip(ne.iter()) {
                *o = e.eval(x);
            }
        });
        if let Some(g) = &self.noise_gradient {
            let shape_ok = g.len() == n
                && g.iter().all(|r| r.len() == m && r.iter().all(|c| c.len() == n));
            if !shape_ok {
                return Err(Error::config(
                    "model.noise_gradient",
                    format!("expected shape {n} x {m} x {n}"),
                ));
            }
            let ge = compile(
                "model.noise_gradient",
                g.iter().flatten().flatten().collect(),
            )?;
            noise = noise.with_gradient(move |x, out| {
                for (o, e) in out.iter_mut().zip(ge.iter()) {
                    *o = e.eval(x);
                }
            });
        }
        SdeModel::new(self.name.clone(), drift, noise, sense)
    }
}

pub const REGISTRY_NAMES: [&str; 5] = ["geometric", "asinh", "diag2d", "constant", "ou"];

fn default_param(name: &str, key: &str) -> Option<f64> {
    let v = match (name, key) {
        ("geometric", "sigma") => 0.5,
        ("geometric", "mu") => 0.0,
        ("geometric", "x_min") => 1e-8,
        ("geometric", "x_max") => 1e8,
        ("asinh", "x_max") => 1e3,
        ("diag2d", "x_min") => 0.1,
        ("diag2d", "x_max") => 10.0,
        ("constant", "sigma") => 1.0,
        ("constant", "x_max") => 1e8,
        ("ou", "theta") => 1.0,
        ("ou", "sigma") => std::f64::consts::SQRT_2,
        ("ou", "x_max") => 1e8,
        _ => return None,
    };
    Some(v)
}

fn registry_model(
    name: &str,
    params: &BTreeMap<String, f64>,
    sense: SenseParameter,
) -> Result<SdeModel> {
    for key in params.keys() {
        if default_param(name, key).is_none() {
            return Err(Error::config(
                "model.params",
                format!("unknown parameter `{key}` for model `{name}`"),
            ));
        }
    }
    let p = |key: &str| params.get(key).copied().or_else(|| default_param(name, key)).unwrap();
    match name {
        "geometric" => {
            let (x_min, x_max) = (p("x_min"), p("x_max"));
            if x_min <= 0.0 {
                return Err(Error::config("model.params.x_min", "geometric needs x_min > 0"));
            }
            geometric(p("sigma"), p("mu"), x_min, x_max, sense)
        }
        "asinh" => asinh(p("x_max"), sense),
        "diag2d" => diag2d(p("x_min"), p("x_max"), sense),
        "constant" => constant_noise(p("sigma"), p("x_max"), sense),
        "ou" => ornstein_uhlenbeck(p("theta"), p("sigma"), p("x_max"), sense),
        other => Err(Error::config(
            "model",
            format!("unknown model `{other}`; known: {}", REGISTRY_NAMES.join(", ")),
        )),
    }
}

/// `dX = μX dt + σX dW` on `[x_min, x_max]`.
pub fn geometric(
    sigma: f64,
    mu: f64,
    x_min: f64,
    x_max: f64,
    sense: SenseParameter,
) -> Result<SdeModel> {
    let dom = DomainBox::interval(x_min, x_max)?;
    let drift = VectorField::new(dom.clone(), move |x, o| o[0] = mu * x[0])
        .with_jacobian(move |_, o| o[0] = mu);
    let noise = MatrixField::scalar(dom, move |x| sigma * x, move |_| sigma);
    Ok(SdeModel::new("geometric", drift, noise, sense)?.with_kernel(move |x| [mu * x, sigma * x, sigma]))
}

/// `dX = sqrt(1 + X²) dW`, whose unit-diffusion chart is `asinh`.
pub fn asinh(x_max: f64, sense: SenseParameter) -> Result<SdeModel> {
    let dom = DomainBox::interval(-x_max, x_max)?;
    let noise = MatrixField::scalar(
        dom.clone(),
        |x| (1.0 + x * x).sqrt(),
        |x| x / (1.0 + x * x).sqrt(),
    );
    Ok(SdeModel::new("asinh", VectorField::zero(dom), noise, sense)?
        .with_kernel(|x| [0.0, (1.0 + x * x).sqrt(), x / (1.0 + x * x).sqrt()]))
}

/// `B = diag(x1, x2)` on `[x_min, x_max]²`.
pub fn diag2d(x_min: f64, x_max: f64, sense: SenseParameter) -> Result<SdeModel> {
    let dom = DomainBox::new(vec![x_min; 2], vec![x_max; 2])?;
    let noise = MatrixField::new(2, 2, dom.clone(), |x, o| {
        o[0] = x[0];
        o[1] = 0.0;
        o[2] = 0.0;
        o[3] = x[1];
    })
    .with_gradient(|_, o| {
        o.iter_mut().for_each(|v| *v = 0.0);
        // ∂b^{11}/∂x^1 and ∂b^{22}/∂x^2
        o[0] = 1.0;
        o[3 * 2 + 1] = 1.0;
    });
    SdeModel::new("diag2d", VectorField::zero(dom), noise, sense)
}

/// Additive noise `dX = σ dW`; every sense gives the same process.
pub fn constant_noise(sigma: f64, x_max: f64, sense: SenseParameter) -> Result<SdeModel> {
    let dom = DomainBox::interval(-x_max, x_max)?;
    let noise = MatrixField::scalar(dom.clone(), move |_| sigma, |_| 0.0);
    Ok(SdeModel::new("constant", VectorField::zero(dom), noise, sense)?.with_kernel(move |_| [0.0, sigma, 0.0]))
}

/// `dX = -θX dt + σ dW`.
pub fn ornstein_uhlenbeck(
    theta: f64,
    sigma: f64,
    x_max: f64,
    sense: SenseParameter,
) -> Result<SdeModel> {
    let dom = DomainBox::interval(-x_max, x_max)?;
    let drift = VectorField::new(dom.clone(), move |x, o| o[0] = -theta * x[0])
        .with_jacobian(move |_, o| o[0] = -theta);
    let noise = MatrixField::scalar(dom, move |_| sigma, |_| 0.0);
    Ok(SdeModel::new("ou", drift, noise, sense)?.with_kernel(move |x| [-theta * x, sigma, 0.0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_kernels_agree_with_fields() {
        let a = SenseParameter::STRATONOVICH;
        let models = [
            geometric(0.5, 0.2, 0.1, 10.0, a).unwrap(),
            asinh(5.0, a).unwrap(),
            constant_noise(0.7, 5.0, a).unwrap(),
            ornstein_uhlenbeck(1.3, 0.7, 5.0, a).unwrap(),
        ];
        for m in &models {
            let k = m.kernel().expect("registry scalar models carry a kernel");
            for x in [0.1, 0.37, 1.0, 4.9] {
                let mut out = [0.0];
                m.drift().eval_unchecked(&[x], &mut out);
                let [ka, kb, kg] = k.eval(x);
                assert_eq!(ka.to_bits(), out[0].to_bits(), "{}", m.name());
                m.noise().eval_unchecked(&[x], &mut out);
                assert_eq!(kb.to_bits(), out[0].to_bits(), "{}", m.name());
                m.noise().gradient_unchecked(&[x], &mut out);
                assert_eq!(kg.to_bits(), out[0].to_bits(), "{}", m.name());
            }
        }
        assert!(models[0].to_ito_form().kernel().is_none());
        assert!(models[0].with_sense(SenseParameter::ITO).kernel().is_some());
    }

    #[test]
    fn registry_builds_every_name() {
        for name in REGISTRY_NAMES {
            let m = ModelSpec::named(name).build(SenseParameter::ITO).unwrap();
            assert_eq!(m.name(), name);
            assert_eq!(m.noise().rows(), m.state_dim());
        }
        assert!(ModelSpec::named("nope").build(SenseParameter::ITO).is_err());
    }

    #[test]
    fn unknown_param_is_rejected() {
        let spec = ModelSpec::Registry {
            name: "geometric".into(),
            params: [("gamma".to_string(), 1.0)].into_iter().collect(),
        };
        assert!(spec.build(SenseParameter::ITO).is_err());
    }

    #[test]
    fn expression_model_matches_registry_geometric() {
        let e = ExpressionModel {
            name: "g".into(),
            drift: vec!["0".into()],
            noise: vec![vec!["0.5*x1".into()]],
            lo: vec![0.1],
            hi: vec![10.0],
            noise_gradient: Some(vec![vec![vec!["0.5".into()]]]),
        };
        let m = e.build(SenseParameter::STRATONOVICH).unwrap();
        let r = geometric(0.5, 0.0, 0.1, 10.0, SenseParameter::STRATONOVICH).unwrap();
        for x in [0.2, 1.0, 7.5] {
            assert_eq!(m.noise().eval(&[x]).unwrap(), r.noise().eval(&[x]).unwrap());
            assert_eq!(m.noise().gradient(&[x]).unwrap(), vec![0.5]);
        }
    }

    #[test]
    fn expression_model_shape_errors_name_the_field() {
        let e = ExpressionModel {
            name: "bad".into(),
            drift: vec!["x2".into()],
            noise: vec![vec!["1".into()]],
            lo: vec![0.0],
            hi: vec![1.0],
            noise_gradient: None,
        };
        match e.build(SenseParameter::ITO).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "model.drift"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_spec_json_round_trip() {
        let spec = ModelSpec::Registry {
            name: "geometric".into(),
            params: [("sigma".to_string(), 0.25)].into_iter().collect(),
        };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&s).unwrap(), spec);
    }
}
