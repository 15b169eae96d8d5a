//! The nonlinearity f, its primitive F and derivative f', plus structural
//! hypothesis checks on sampled inputs.

use crate::error::{Result, SolverError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Config section selecting the nonlinearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityConfig {
    PurePower { p: f64 },
    Table { path: PathBuf },
}

#[derive(Debug, Clone)]
enum Kind {
    PurePower,
    UserTable(Table),
}

/// Tabulated odd nonlinearity on t >= 0. Values are interpolated linearly
/// between nodes and extended by a power law t^p below the first node and
/// above the last one.
#[derive(Debug, Clone)]
struct Table {
    t: Vec<f64>,
    f: Vec<f64>,
    /// cumulative trapezoid of f, anchored by a power-law head below t[0]
    big_f: Vec<f64>,
    /// centered differences of f at the nodes
    df: Vec<f64>,
}

impl Table {
    fn locate(&self, t: f64) -> usize {
        match self.t.binary_search_by(|a| a.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        }
    }
}

/// Odd nonlinearity with superquadratic primitive.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: Kind,
    /// growth exponent (exact for pure power, log-log fit for tables)
    pub p: f64,
    /// superquadraticity constant, mu > 2
    pub mu: f64,
}

impl Nonlinearity {
    /// f(t) = |t|^{p-1} t, F(t) = |t|^{p+1}/(p+1), mu = p+1.
    pub fn pure_power(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(SolverError::InvalidNonlinearity {
                reason: format!("pure power requires p > 1, got {p}"),
            });
        }
        Ok(Nonlinearity {
            kind: Kind::PurePower,
            p,
            mu: p + 1.0,
        })
    }

    /// Build from samples (t_k, f(t_k)) with 0 < t_0 < t_1 < ... .
    /// The primitive comes from cumulative trapezoid quadrature, the
    /// derivative from centered differences, and mu is estimated as
    /// inf_k f(t_k) t_k / F(t_k).
    pub fn from_table(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.len() < 4 {
            return Err(SolverError::InvalidNonlinearity {
                reason: format!("table needs at least 4 rows, got {}", pairs.len()),
            });
        }
        let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let f: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolverError::InvalidNonlinearity {
                reason: "table abscissae must be strictly increasing and positive".into(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidNonlinearity {
                reason: "table values must be finite".into(),
            });
        }

        // log-log regression for the growth exponent
        let logs: Vec<(f64, f64)> = t
            .iter()
            .zip(&f)
            .filter(|(_, &fv)| fv > 0.0)
            .map(|(&tv, &fv)| (tv.ln(), fv.ln()))
            .collect();
        if logs.len() < 3 {
            return Err(SolverError::InvalidNonlinearity {
                reason: "table needs at least 3 positive values to fit an exponent".into(),
            });
        }
        let n = logs.len() as f64;
        let sx: f64 = logs.iter().map(|l| l.0).sum();
        let sy: f64 = logs.iter().map(|l| l.1).sum();
        let sxx: f64 = logs.iter().map(|l| l.0 * l.0).sum();
        let sxy: f64 = logs.iter().map(|l| l.0 * l.1).sum();
        let p_hat = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if !(p_hat > 1.0) || !p_hat.is_finite() {
            return Err(SolverError::InvalidNonlinearity {
                reason: format!("fitted exponent p = {p_hat:.4} must exceed 1"),
            });
        }

        // primitive: power-law head on [0, t_0], trapezoid afterwards
        let mut big_f = vec![0.0; t.len()];
        big_f[0] = f[0] * t[0] / (p_hat + 1.0);
        for k in 1..t.len() {
            big_f[k] = big_f[k - 1] + 0.5 * (f[k] + f[k - 1]) * (t[k] - t[k - 1]);
        }

        let mut df = vec![0.0; t.len()];
        for k in 0..t.len() {
            let (kl, kr) = (k.saturating_sub(1), (k + 1).min(t.len() - 1));
            df[k] = (f[kr] - f[kl]) / (t[kr] - t[kl]);
        }

        let mu = t
            .iter()
            .zip(&f)
            .zip(&big_f)
            .filter(|((_, _), &ff)| ff > 0.0)
            .map(|((&tv, &fv), &ff)| fv * tv / ff)
            .fold(f64::INFINITY, f64::min);
        if !(mu > 2.0) {
            return Err(SolverError::InvalidNonlinearity {
                reason: format!("estimated mu = {mu:.4} must exceed 2"),
            });
        }

        Ok(Nonlinearity {
            kind: Kind::UserTable(Table { t, f, big_f, df }),
            p: p_hat,
            mu,
        })
    }

    pub fn from_config(cfg: &NonlinearityConfig) -> Result<Self> {
        match cfg {
            NonlinearityConfig::PurePower { p } => Self::pure_power(*p),
            NonlinearityConfig::Table { path } => {
                let pairs = read_table(path)?;
                Self::from_table(&pairs)
            }
        }
    }

    /// f(t); odd by construction.
    pub fn f(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::PurePower => {
                if t == 0.0 {
                    0.0
                } else {
                    t.abs().powf(self.p - 1.0) * t
                }
            }
            Kind::UserTable(tab) => {
                let (a, s) = (t.abs(), t.signum());
                if a == 0.0 {
                    return 0.0;
                }
                let v = if a < tab.t[0] {
                    tab.f[0] * (a / tab.t[0]).powf(self.p)
                } else if a > *tab.t.last().unwrap() {
                    let k = tab.t.len() - 1;
                    tab.f[k] * (a / tab.t[k]).powf(self.p)
                } else {
                    let k = tab.locate(a).min(tab.t.len() - 2);
                    let w = (a - tab.t[k]) / (tab.t[k + 1] - tab.t[k]);
                    tab.f[k] * (1.0 - w) + tab.f[k + 1] * w
                };
                s * v
            }
        }
    }

    /// F(t) = ∫_0^t f; even by oddness of f.
    pub fn primitive(&self, t: f64) -> f64 {
        let a = t.abs();
        match &self.kind {
            Kind::PurePower => a.powf(self.p + 1.0) / (self.p + 1.0),
            Kind::UserTable(tab) => {
                if a == 0.0 {
                    0.0
                } else if a < tab.t[0] {
                    tab.big_f[0] * (a / tab.t[0]).powf(self.p + 1.0)
                } else if a > *tab.t.last().unwrap() {
                    let k = tab.t.len() - 1;
                    // integrate the power-law tail analytically
                    tab.big_f[k]
                        + tab.f[k] * tab.t[k] / (self.p + 1.0)
                            * ((a / tab.t[k]).powf(self.p + 1.0) - 1.0)
                } else {
                    let k = tab.locate(a).min(tab.t.len() - 2);
                    let w = (a - tab.t[k]) / (tab.t[k + 1] - tab.t[k]);
                    let f_here = tab.f[k] * (1.0 - w) + tab.f[k + 1] * w;
                    tab.big_f[k] + 0.5 * (tab.f[k] + f_here) * (a - tab.t[k])
                }
            }
        }
    }

    /// f'(t); even by oddness of f.
    pub fn derivative(&self, t: f64) -> f64 {
        let a = t.abs();
        match &self.kind {
            Kind::PurePower => {
                if a == 0.0 {
                    0.0
                } else {
                    self.p * a.powf(self.p - 1.0)
                }
            }
            Kind::UserTable(tab) => {
                if a == 0.0 {
                    0.0
                } else if a < tab.t[0] || a > *tab.t.last().unwrap() {
                    self.p * self.f(a) / a
                } else {
                    let k = tab.locate(a).min(tab.t.len() - 2);
                    let w = (a - tab.t[k]) / (tab.t[k + 1] - tab.t[k]);
                    tab.df[k] * (1.0 - w) + tab.df[k + 1] * w
                }
            }
        }
    }

    pub fn is_pure_power(&self) -> bool {
        matches!(self.kind, Kind::PurePower)
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| SolverError::Format {
                    path: path.display().to_string(),
                    reason: format!("line {}: expected two numeric columns", ln + 1),
                })
        };
        let t = parse(cols.next())?;
        let f = parse(cols.next())?;
        pairs.push((t, f));
    }
    Ok(pairs)
}

/// Outcome of a single sampled hypothesis check.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub passed: bool,
    /// most negative margin observed (>= 0 means the inequality held everywhere)
    pub worst_margin: f64,
}

impl HypothesisCheck {
    fn from_margin(m: f64, tol: f64) -> Self {
        HypothesisCheck {
            passed: m >= -tol,
            worst_margin: m,
        }
    }
}

/// Pass/fail per structural hypothesis, on the given samples.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub p: f64,
    pub mu: f64,
    /// sup over samples of |f(t)| / (1 + |t|^p), reported as the growth constant
    pub growth_constant: f64,
    pub growth: HypothesisCheck,
    pub superquadratic: HypothesisCheck,
    pub derivative_convexity: HypothesisCheck,
    pub oddness: HypothesisCheck,
    pub scaling_monotone: HypothesisCheck,
    /// below this |t|, |f(t)/t| < 1e-3 held on samples
    pub small_slope_threshold: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.growth.passed
            && self.superquadratic.passed
            && self.derivative_convexity.passed
            && self.oddness.passed
            && self.scaling_monotone.passed
    }
}

/// Log-spaced default sample grid on [1e-6, 1e3]; sign reflection is applied
/// by the checks themselves.
pub fn default_samples() -> Vec<f64> {
    let (lo, hi, n) = (1e-6f64, 1e3f64, 64);
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// Check the structural hypotheses on the sampled grid. Rejects mu <= 2,
/// p <= 1 and p >= 1 + 4/N outright.
pub fn validate_hypotheses(
    nl: &Nonlinearity,
    dim: usize,
    samples: &[f64],
) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(SolverError::InvalidNonlinearity {
            reason: "empty sample set".into(),
        });
    }
    let p_cap = 1.0 + 4.0 / dim as f64;
    if nl.mu <= 2.0 {
        return Err(SolverError::InvalidNonlinearity {
            reason: format!("mu = {} must exceed 2", nl.mu),
        });
    }
    if nl.p <= 1.0 || nl.p >= p_cap {
        return Err(SolverError::InvalidNonlinearity {
            reason: format!("p = {} outside the subcritical range (1, {p_cap})", nl.p),
        });
    }

    let ts: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|t| *t != 0.0)
        .flat_map(|t| [t, -t])
        .collect();
    let tol = 1e-12;

    let growth_constant = ts
        .iter()
        .map(|&t| nl.f(t).abs() / (1.0 + t.abs().powf(nl.p)))
        .fold(0.0f64, f64::max);
    let growth = HypothesisCheck {
        passed: growth_constant.is_finite(),
        worst_margin: growth_constant,
    };

    // (f3): 0 < mu F(t) <= f(t) t, equality allowed
    let mut m3 = f64::INFINITY;
    for &t in &ts {
        let ff = nl.primitive(t);
        let ft = nl.f(t) * t;
        let scale = ft.abs().max(1.0);
        m3 = m3.min(ff / scale).min((ft - nl.mu * ff) / scale);
    }
    let superquadratic = HypothesisCheck::from_margin(m3, tol);

    // (f4): f(t) t < f'(t) t^2, strict
    let mut m4 = f64::INFINITY;
    for &t in &ts {
        let lhs = nl.f(t) * t;
        let rhs = nl.derivative(t) * t * t;
        m4 = m4.min((rhs - lhs) / rhs.abs().max(1e-300));
    }
    let derivative_convexity = HypothesisCheck {
        passed: m4 > 0.0,
        worst_margin: m4,
    };

    // (f5): oddness
    let mut m5 = 0.0f64;
    for &t in &ts {
        let scale = nl.f(t).abs().max(1e-300);
        m5 = m5.max((nl.f(t) + nl.f(-t)).abs() / scale);
    }
    let oddness = HypothesisCheck {
        passed: m5 <= 1e-10,
        worst_margin: m5,
    };

    // s -> (1/s) f(s t) t strictly increasing, on a log grid of scales
    let scales: Vec<f64> = (0..24).map(|k| 0.1f64 * (100.0f64).powf(k as f64 / 23.0)).collect();
    let mut m_mono = f64::INFINITY;
    for &t in samples.iter().filter(|t| **t != 0.0) {
        let mut prev = f64::NEG_INFINITY;
        for &s in &scales {
            let q = nl.f(s * t) * t / s;
            if prev.is_finite() {
                m_mono = m_mono.min((q - prev) / q.abs().max(1e-300));
            }
            prev = q;
        }
    }
    let scaling_monotone = HypothesisCheck {
        passed: m_mono > 0.0,
        worst_margin: m_mono,
    };

    // largest sampled |t| below which |f(t)/t| < 1e-3
    let mut small_slope_threshold = 0.0;
    let mut sorted: Vec<f64> = samples.iter().map(|t| t.abs()).filter(|t| *t > 0.0).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &t in &sorted {
        if (nl.f(t) / t).abs() < 1e-3 {
            small_slope_threshold = t;
        } else {
            break;
        }
    }

    Ok(ValidationReport {
        p: nl.p,
        mu: nl.mu,
        growth_constant,
        growth,
        superquadratic,
        derivative_convexity,
        oddness,
        scaling_monotone,
        small_slope_threshold,
    })
}
