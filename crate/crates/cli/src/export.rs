//! CSV export of trajectories: time, state, quantity values and the
//! singular values of the quantity's Jacobian, one row per sample.

use std::fmt::Write as _;
use std::path::Path;

use invset::integrate::Trajectory;
use invset::rank_sets::classify_M;
use invset::ConservedQuantitySet;

/// 17 significant digits, enough to read every double back exactly.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(quantity: &ConservedQuantitySet, coordinates: &[String]) -> Vec<String> {
    let m = quantity.k().min(quantity.dim());
    let mut h = vec!["t".to_string()];
    h.extend(coordinates.iter().cloned());
    h.extend(quantity.labels().iter().cloned());
    h.extend((1..=m).map(|i| format!("sigma{i}")));
    h
}

pub fn to_csv(
    traj: &Trajectory,
    quantity: &ConservedQuantitySet,
    coordinates: &[String],
    tau: f64,
) -> invset::Result<String> {
    let mut out = header(quantity, coordinates).join(",");
    out.push('\n');
    for (t, x) in traj.iter() {
        let mut row = vec![num(t)];
        row.extend(x.as_slice().iter().map(|&v| num(v)));
        row.extend(quantity.value(x)?.into_iter().map(num));
        row.extend(classify_M(quantity, x, tau)?.singular_values.into_iter().map(num));
        let _ = writeln!(out, "{}", row.join(","));
    }
    Ok(out)
}

pub fn write_csv(
    path: &Path,
    traj: &Trajectory,
    quantity: &ConservedQuantitySet,
    coordinates: &[String],
    tau: f64,
) -> Result<(), String> {
    let text = to_csv(traj, quantity, coordinates, tau).map_err(|e| e.to_string())?;
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use invset::integrate::{flow_adaptive, FlowOptions};
    use invset::models::toda::{self, Lattice};
    use invset::StateVector;

    #[test]
    fn toda_export_shape_and_round_trip() {
        let n = 3;
        let sys = toda::periodic_field(n).unwrap();
        let q = toda::periodic_quantity(n, &[1, 2, 3]).unwrap();
        let x0 = StateVector::from_slice(&[0.7, 1.1, 0.4, 0.3, -0.2, 0.1]).unwrap();
        let traj = flow_adaptive(&sys, &x0, 2.0, &FlowOptions::default()).unwrap();
        let text = to_csv(&traj, &q, &Lattice::Periodic.coordinate_names(n), 1e-8).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 402);
        assert_eq!(lines[0], "t,X1,X2,X3,u1,u2,u3,I1,I2,I3,sigma1,sigma2,sigma3");
        let cols = 2 * n + 3 + 3 + 1;
        for (line, (t, x)) in lines[1..].iter().zip(traj.iter()) {
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            assert_eq!(v.len(), cols);
            assert_eq!(v[0].to_bits(), t.to_bits());
            for (a, b) in v[1..=2 * n].iter().zip(x.as_slice()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn digits_survive_extremes() {
        for v in [f64::MIN_POSITIVE, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
