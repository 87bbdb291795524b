use super::{build_feature_vector, window_at, BaseModel, Feature, FeatureSpec, FitMethod, VarCountMode};
use crate::error::{Error, Result};
use crate::sim::RoomDataset;

/// Ridge floor applied to every fit as a silent rank-deficiency guard.
pub const RIDGE_FLOOR: f64 = 1e-8;

/// Solve `min ||y - X b - a||^2 + ridge * ||b||^2` (intercept `a` unpenalized)
/// by equilibrated normal equations. Returns `(coefficients, intercept)`.
pub fn solve_ridge(xs: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<(Vec<f64>, f64)> {
    let n = xs.len();
    if n == 0 || n != y.len() {
        return Err(Error::Fit(format!("design has {n} rows, targets {}", y.len())));
    }
    let p = xs[0].len();
    let cols = p + 1; // intercept last
    let ridge = ridge.max(RIDGE_FLOOR);

    // Column scales for conditioning; the solved objective is unchanged.
    let mut scale = vec![1.0_f64; cols];
    for j in 0..p {
        let rms = (xs.iter().map(|r| r[j] * r[j]).sum::<f64>() / n as f64).sqrt();
        if rms > 1e-12 {
            scale[j] = 1.0 / rms;
        }
    }

    // Normal equations in the scaled basis: (S X^T X S + ridge S^2 D) c = S X^T y,
    // D zero on the intercept.
    let mut ata = vec![0.0_f64; cols * cols];
    let mut aty = vec![0.0_f64; cols];
    let mut row = vec![0.0_f64; cols];
    for (r, target) in xs.iter().zip(y) {
        for j in 0..p {
            row[j] = r[j] * scale[j];
        }
        row[p] = 1.0;
        for i in 0..cols {
            let ri = row[i];
            if ri != 0.0 {
                for j in i..cols {
                    ata[i * cols + j] += ri * row[j];
                }
            }
            aty[i] += ri * target;
        }
    }
    for i in 0..cols {
        for j in 0..i {
            ata[i * cols + j] = ata[j * cols + i];
        }
    }
    for (j, s) in scale.iter().enumerate().take(p) {
        ata[j * cols + j] += ridge * s * s;
    }

    let sol = cholesky_solve(&mut ata, &aty, cols)?;
    let coefficients = (0..p).map(|j| sol[j] * scale[j]).collect();
    Ok((coefficients, sol[p]))
}

/// In-place Cholesky factorization and solve for a symmetric positive
/// definite system.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Fit(format!("normal equations not positive definite at pivot {i}")));
                }
                a[i * n + j] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= a[i * n + k] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= a[k * n + i] * x[k];
        }
        x[i] /= a[i * n + i];
    }
    Ok(x)
}

struct DesignMatrix {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    trained_from: chrono::NaiveDateTime,
    trained_to: chrono::NaiveDateTime,
}

fn build_design(dataset: &RoomDataset, spec: &FeatureSpec) -> Result<DesignMatrix> {
    let l = spec.lookback;
    let n_rows = dataset.rows.len();
    if n_rows < l + 1 {
        return Err(Error::Fit(format!(
            "dataset {} has {n_rows} rows, need at least {}",
            dataset.room_id,
            l + 1
        )));
    }
    let mut rows = Vec::with_capacity(n_rows - l);
    let mut targets = Vec::with_capacity(n_rows - l);
    for t in l - 1..n_rows - 1 {
        let window = window_at(&dataset.rows, t, l, dataset.sampling_minutes)?;
        let u_t = dataset.rows[t].u_hvac;
        rows.push(build_feature_vector(&window, u_t, spec)?);
        targets.push(dataset.rows[t + 1].t_room);
    }
    Ok(DesignMatrix {
        rows,
        targets,
        trained_from: dataset.rows[l - 1].timestamp,
        trained_to: dataset.rows[n_rows - 1].timestamp,
    })
}

fn require_rows(n: usize, features: usize, room: &str) -> Result<()> {
    let needed = 10 * features.max(1);
    if n < needed {
        return Err(Error::Fit(format!(
            "room {room}: {n} usable rows but {needed} required for {features} features"
        )));
    }
    Ok(())
}

/// Ordinary least squares with a ridge guard over the given spec.
pub fn fit_least_squares(dataset: &RoomDataset, spec: &FeatureSpec, ridge: f64) -> Result<BaseModel> {
    let design = build_design(dataset, spec)?;
    require_rows(design.rows.len(), spec.len(), &dataset.room_id)?;
    let (coefficients, intercept) = solve_ridge(&design.rows, &design.targets, ridge)?;
    let mut model = BaseModel {
        spec: spec.clone(),
        coefficients,
        intercept,
        source_room: dataset.room_id.clone(),
        method: FitMethod::Mlr,
        trained_from: design.trained_from,
        trained_to: design.trained_to,
        variable_count: 0,
    };
    model.variable_count = model.count_variables(VarCountMode::DistinctRaw);
    Ok(model)
}

fn rss_of(cols: &[usize], design: &DesignMatrix, ridge: f64) -> Result<(f64, Vec<f64>, f64)> {
    let sub: Vec<Vec<f64>> = design
        .rows
        .iter()
        .map(|r| cols.iter().map(|&j| r[j]).collect())
        .collect();
    let (coefs, intercept) = solve_ridge(&sub, &design.targets, ridge)?;
    let rss: f64 = sub
        .iter()
        .zip(&design.targets)
        .map(|(r, &y)| {
            let pred = intercept + r.iter().zip(&coefs).map(|(f, c)| f * c).sum::<f64>();
            (y - pred) * (y - pred)
        })
        .sum();
    Ok((rss, coefs, intercept))
}

fn bic(rss: f64, n: usize, terms: usize) -> f64 {
    let n_f = n as f64;
    n_f * (rss.max(1e-300) / n_f).ln() + ((terms + 1) as f64) * n_f.ln()
}

/// Greedy forward stepwise selection over the dictionary spec, scored by BIC;
/// the final coefficients are refit by least squares on the selected terms.
pub fn fit_dictionary_regression(
    dataset: &RoomDataset,
    dictionary: &FeatureSpec,
    max_terms: usize,
    ridge: f64,
) -> Result<BaseModel> {
    if max_terms == 0 {
        return Err(Error::Fit("max_terms must be at least 1".into()));
    }
    let design = build_design(dataset, dictionary)?;
    require_rows(design.rows.len(), max_terms.min(dictionary.len()), &dataset.room_id)?;
    let n = design.rows.len();

    let mut selected: Vec<usize> = Vec::new();
    let mean = design.targets.iter().sum::<f64>() / n as f64;
    let rss0: f64 = design.targets.iter().map(|&y| (y - mean) * (y - mean)).sum();
    let mut best_bic = bic(rss0, n, 0);

    while selected.len() < max_terms.min(dictionary.len()) {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..dictionary.len() {
            if selected.contains(&j) {
                continue;
            }
            let mut cand = selected.clone();
            cand.push(j);
            let (rss, _, _) = rss_of(&cand, &design, ridge)?;
            if best.map_or(true, |(b, _)| rss < b) {
                best = Some((rss, j));
            }
        }
        let Some((rss, j)) = best else { break };
        let cand_bic = bic(rss, n, selected.len() + 1);
        if cand_bic >= best_bic {
            break;
        }
        best_bic = cand_bic;
        selected.push(j);
    }

    let (coefficients, intercept) = if selected.is_empty() {
        (Vec::new(), mean)
    } else {
        let (_, c, i) = rss_of(&selected, &design, ridge)?;
        (c, i)
    };

    let features: Vec<Feature> = selected.iter().map(|&j| dictionary.features[j]).collect();
    let mut model = BaseModel {
        spec: FeatureSpec::new(dictionary.lookback, features),
        coefficients,
        intercept,
        source_room: dataset.room_id.clone(),
        method: FitMethod::Dict,
        trained_from: design.trained_from,
        trained_to: design.trained_to,
        variable_count: 0,
    };
    model.variable_count = model.count_variables(VarCountMode::DistinctRaw);
    Ok(model)
}

/// Mean squared training residual of a model over a dataset; used by tests
/// and the library builder.
pub fn training_mse(model: &BaseModel, dataset: &RoomDataset) -> Result<f64> {
    let l = model.spec.lookback;
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in l - 1..dataset.rows.len() - 1 {
        let window = window_at(&dataset.rows, t, l, dataset.sampling_minutes)?;
        let pred = model.predict(&window, dataset.rows[t].u_hvac)?;
        let err = dataset.rows[t + 1].t_room - pred;
        sum += err * err;
        count += 1;
    }
    Ok(sum / count as f64)
}
