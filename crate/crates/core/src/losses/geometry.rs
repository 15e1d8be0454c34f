use crate::error::{Error, Result};
use crate::tensor::{l2, Tensor};

/// `‖h − h⁺‖ / (‖h‖ + ‖h⁺‖)`, computed exactly.
pub fn tmc_geometric(h: &[f64], h_pos: &[f64]) -> Result<f64> {
    if h.len() != h_pos.len() {
        return Err(Error::Dimension {
            op: "tmc_geometric",
            lhs: vec![h.len()],
            rhs: vec![h_pos.len()],
        });
    }
    let (a, b) = (l2(h), l2(h_pos));
    if a == 0.0 || b == 0.0 {
        return Err(Error::degenerate("tmc_geometric", "zero-norm input"));
    }
    let diff: f64 = h.iter().zip(h_pos).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(diff.sqrt() / (a + b))
}

/// Closed form in the norm ratio `k = ‖h⁺‖/‖h‖` and `t = cos γ`:
/// `√(1 + k² − 2kt) / (1 + k)`.
pub fn tmc_binary(k: f64, t: f64) -> Result<f64> {
    if !(k > 0.0 && k.is_finite()) || !(-1.0..=1.0).contains(&t) {
        return Err(Error::contract(
            "tmc_binary",
            format!("need k > 0 and t in [-1, 1], got k = {k}, t = {t}"),
        ));
    }
    // 1 + k² − 2kt = (1 − k)² + 2k(1 − t) avoids cancellation near (1, 1)
    let radicand = (1.0 - k) * (1.0 - k) + 2.0 * k * (1.0 - t);
    Ok(radicand.sqrt() / (1.0 + k))
}

/// One `(k, t, value)` sample of the closed-form modulus constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub k: f64,
    pub t: f64,
    pub value: f64,
}

/// `tmc_binary` over a `k_steps x t_steps` grid spanning `[k_min, k_max]`
/// and `t` in `[-1, 1]`, endpoints included, `k` varying slowest.
pub fn tmc_surface(k_min: f64, k_max: f64, k_steps: usize, t_steps: usize) -> Result<Vec<SurfacePoint>> {
    if !(k_min > 0.0 && k_max > k_min && k_max.is_finite()) || k_steps < 2 || t_steps < 2 {
        return Err(Error::Config(format!(
            "surface grid needs 0 < k_min < k_max and at least 2 steps per axis, \
             got k in [{k_min}, {k_max}] with {k_steps} x {t_steps} steps"
        )));
    }
    let mut out = Vec::with_capacity(k_steps * t_steps);
    for i in 0..k_steps {
        let k = k_min + (k_max - k_min) * i as f64 / (k_steps - 1) as f64;
        for j in 0..t_steps {
            let t = -1.0 + 2.0 * j as f64 / (t_steps - 1) as f64;
            out.push(SurfacePoint {
                k,
                t,
                value: tmc_binary(k, t)?,
            });
        }
    }
    Ok(out)
}

fn unit_rows(h: &Tensor) -> Vec<Vec<f64>> {
    (0..h.rows())
        .map(|i| {
            let r = h.row(i);
            let n = l2(r);
            r.iter()
                .map(|x| if n > 0.0 { x / n } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Mean squared distance between normalized positive pairs.
pub fn alignment(h: &Tensor, h_pos: &Tensor) -> Result<f64> {
    if h.shape() != h_pos.shape() || h.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "alignment",
            lhs: h.shape().to_vec(),
            rhs: h_pos.shape().to_vec(),
        });
    }
    if h.rows() == 0 {
        return Err(Error::contract("alignment", "empty batch"));
    }
    let (a, b) = (unit_rows(h), unit_rows(h_pos));
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum();
    Ok(total / a.len() as f64)
}

/// `log mean_{i≠j} exp(−t ‖f(x_i) − f(x_j)‖²)` over normalized rows.
pub fn uniformity(h: &Tensor, t: f64) -> Result<f64> {
    if h.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "uniformity",
            lhs: h.shape().to_vec(),
            rhs: vec![],
        });
    }
    let n = h.rows();
    if n < 2 {
        return Err(Error::contract(
            "uniformity",
            format!("needs at least 2 embeddings, got {n}"),
        ));
    }
    let u = unit_rows(h);
    let mut exponents = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let sq: f64 = u[i].iter().zip(&u[j]).map(|(p, q)| (p - q) * (p - q)).sum();
                exponents.push(-t * sq);
            }
        }
    }
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
    Ok(m + (s / exponents.len() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_examples() {
        assert_eq!(tmc_geometric(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(tmc_geometric(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(tmc_geometric(&[1.0, 0.0], &[3.0, 0.0]).unwrap(), 0.5);
        assert!(tmc_geometric(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn binary_examples() {
        assert_eq!(tmc_binary(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(tmc_binary(1.0, -1.0).unwrap(), 1.0);
        assert!(tmc_binary(0.0, 0.5).is_err());
        assert!(tmc_binary(1.0, 1.5).is_err());
    }

    #[test]
    fn antipodal_uniformity() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!((uniformity(&h, 2.0).unwrap() + 8.0).abs() < 1e-12);
        assert_eq!(alignment(&h, &h).unwrap(), 0.0);
    }
}
