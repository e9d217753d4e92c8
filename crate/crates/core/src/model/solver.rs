use crate::error::{Error, Result};

/// Classical fixed-step RK4 over any state type. `rhs(t, x, grid)` receives
/// the grid states computed so far (including the initial state), which
/// delay terms may interpolate. `combine` evaluates linear combinations.
/// Returns the grid states, initial state first.
pub fn rk4_integrate<S, R, C>(
    mut rhs: R,
    combine: C,
    x0: S,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Vec<S>>
where
    S: Clone,
    R: FnMut(f64, &S, &[S]) -> Result<S>,
    C: Fn(&[(&S, f64)]) -> Result<S>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("solver needs at least one step".into()));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("empty interval [{t0}, {t1}]")));
    }
    let h = (t1 - t0) / steps as f64;
    let mut grid = vec![x0];
    for c in 0..steps {
        let t = t0 + c as f64 * h;
        let x = grid[c].clone();
        let k1 = rhs(t, &x, &grid)?;
        let x2 = combine(&[(&x, 1.0), (&k1, 0.5 * h)])?;
        let k2 = rhs(t + 0.5 * h, &x2, &grid)?;
        let x3 = combine(&[(&x, 1.0), (&k2, 0.5 * h)])?;
        let k3 = rhs(t + 0.5 * h, &x3, &grid)?;
        let x4 = combine(&[(&x, 1.0), (&k3, h)])?;
        let k4 = rhs(t + h, &x4, &grid)?;
        let next = combine(&[
            (&x, 1.0),
            (&k1, h / 6.0),
            (&k2, h / 3.0),
            (&k3, h / 3.0),
            (&k4, h / 6.0),
        ])?;
        grid.push(next);
    }
    Ok(grid)
}

fn combine_vec(terms: &[(&Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let n = terms[0].0.len();
    let mut out = vec![0.0; n];
    for (v, c) in terms {
        if v.len() != n {
            return Err(Error::SizeMismatch(format!("state of length {} vs {n}", v.len())));
        }
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += c * x;
        }
    }
    Ok(out)
}

/// RK4 on plain vectors with step `(t1 - t0) / steps`. Returns `(t, x)` at
/// every grid point including both ends; a non-finite state fails with the
/// index of the step that produced it.
pub fn ode_solve<R>(mut rhs: R, x0: &[f64], t0: f64, t1: f64, steps: usize) -> Result<Vec<(f64, Vec<f64>)>>
where
    R: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let h = (t1 - t0) / steps.max(1) as f64;
    let grid = rk4_integrate(
        |t, x: &Vec<f64>, grid: &[Vec<f64>]| {
            if let Some(v) = x.iter().position(|y| !y.is_finite()) {
                return Err(Error::BlowUp {
                    step: grid.len(),
                    detail: format!("vertex {v} is {}", x[v]),
                });
            }
            rhs(t, x)
        },
        combine_vec,
        x0.to_vec(),
        t0,
        t1,
        steps,
    )?;
    if let Some(v) = grid.last().and_then(|x| x.iter().position(|y| !y.is_finite())) {
        return Err(Error::BlowUp {
            step: steps,
            detail: format!("vertex {v} is not finite"),
        });
    }
    Ok(grid
        .into_iter()
        .enumerate()
        .map(|(k, x)| (if k == steps { t1 } else { t0 + k as f64 * h }, x))
        .collect())
}
