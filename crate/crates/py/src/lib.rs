use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use edgetrack::boundary::{self, Conic};
use edgetrack::geometry::{BBox, DynamicFeature, Mat2, Point2, Polyline};
use edgetrack::movement::{self, ModelParams, SubPop};
use edgetrack::rsf::Season;
use edgetrack::{scenario, validation};

create_exception!(edgetrack_py, EdgetrackError, PyException);

type Xy = (f64, f64);
type Cov = (Xy, Xy);

fn err(e: edgetrack::Error) -> PyErr {
    EdgetrackError::new_err(e.to_string())
}

fn pt(p: Xy) -> Point2 {
    Point2::new(p.0, p.1)
}

fn xy(p: Point2) -> Xy {
    (p.x, p.y)
}

fn mat(c: Cov) -> Mat2 {
    Mat2::new(c.0 .0, c.0 .1, c.1 .0, c.1 .1)
}

fn cov(m: Mat2) -> Cov {
    ((m.m00, m.m01), (m.m10, m.m11))
}

fn sub_pop(z: u8) -> PyResult<SubPop> {
    SubPop::from_z(z).map_err(err)
}

/// Model parameters; defaults are the synthetic acceptance scenario.
#[pyclass(name = "Params")]
#[derive(Clone)]
struct PyParams {
    #[pyo3(get, set)]
    sigma_mu2: f64,
    #[pyo3(get, set)]
    tau2: f64,
    #[pyo3(get, set)]
    season_a: f64,
    #[pyo3(get, set)]
    season_b: f64,
    #[pyo3(get, set)]
    center_cs: Xy,
    #[pyo3(get, set)]
    center_sb: Xy,
    #[pyo3(get, set)]
    cov_cs: Cov,
    #[pyo3(get, set)]
    cov_sb: Cov,
}

impl PyParams {
    fn to_model(&self) -> PyResult<ModelParams> {
        let p = ModelParams {
            sigma2: self.sigma_mu2,
            tau2: self.tau2,
            season: Season::new(self.season_a, self.season_b).map_err(err)?,
            center_cs: pt(self.center_cs),
            center_sb: pt(self.center_sb),
            cov_cs: mat(self.cov_cs),
            cov_sb: mat(self.cov_sb),
        };
        p.validate().map_err(err)?;
        Ok(p)
    }
}

#[pymethods]
impl PyParams {
    #[new]
    fn new() -> Self {
        let p = scenario::default_params();
        PyParams {
            sigma_mu2: p.sigma2,
            tau2: p.tau2,
            season_a: p.season.a,
            season_b: p.season.b,
            center_cs: xy(p.center_cs),
            center_sb: xy(p.center_sb),
            cov_cs: cov(p.cov_cs),
            cov_sb: cov(p.cov_sb),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(sigma_mu2={}, tau2={}, season=({}, {}), center_cs={:?}, center_sb={:?})",
            self.sigma_mu2, self.tau2, self.season_a, self.season_b, self.center_cs, self.center_sb
        )
    }
}

fn feature_for(day: i64, lines: Vec<Vec<Xy>>) -> PyResult<DynamicFeature> {
    let polylines = lines
        .into_iter()
        .map(|l| Polyline::new(l.into_iter().map(pt).collect()).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(DynamicFeature::constant(polylines, day..day + 1))
}

/// Closed-form step conditional: `(mean, cov, log_norm)`.
#[pyfunction]
#[pyo3(signature = (params, z, day, p_prev, feature))]
fn step_conditional(params: &PyParams, z: u8, day: i64, p_prev: Option<Xy>, feature: Vec<Vec<Xy>>) -> PyResult<(Xy, Cov, f64)> {
    let f = feature_for(day, feature)?;
    let c = movement::step_conditional(p_prev.map(pt), day, &params.to_model()?, sub_pop(z)?, &f).map_err(err)?;
    Ok((xy(c.gaussian.mean()), cov(c.gaussian.cov()), c.log_norm))
}

/// Exact population simulation on the default moving-line feature.
/// Returns `(rows, labels)` with rows `(id, day, x_km, y_km)`.
#[pyfunction]
#[pyo3(signature = (params, n_individuals=20, days=200, seed=1))]
#[allow(clippy::type_complexity)]
fn simulate(
    params: &PyParams,
    n_individuals: usize,
    days: usize,
    seed: u64,
) -> PyResult<(Vec<(String, i64, f64, f64)>, Vec<(String, u8)>)> {
    let p = params.to_model()?;
    let last = (0..n_individuals).map(scenario::staggered_start).max().unwrap_or(0) + days as i64;
    let f = scenario::default_feature(0..last + 1).map_err(err)?;
    let pop = scenario::simulate_population(&p, &f, n_individuals, days, seed).map_err(err)?;
    let rows = pop
        .tracks
        .iter()
        .flat_map(|t| t.iter().map(move |(d, x)| (t.id.clone(), d, x.x, x.y)))
        .collect();
    let labels = pop.tracks.iter().zip(&pop.labels).map(|(t, z)| (t.id.clone(), z.z())).collect();
    Ok((rows, labels))
}

/// Coefficients `(A, B, C, D, E, F)` of the log-density ratio
/// `log N_CS − log N_SB = A x² + B x y + C y² + D x + E y + F`.
#[pyfunction]
fn equal_density_conic(center_cs: Xy, cov_cs: Cov, center_sb: Xy, cov_sb: Cov) -> PyResult<(f64, f64, f64, f64, f64, f64)> {
    let c = boundary::equal_density_conic(pt(center_cs), &mat(cov_cs), pt(center_sb), &mat(cov_sb)).map_err(err)?;
    Ok((c.a, c.b, c.c, c.d, c.e, c.f))
}

/// Zero set of a conic inside `window = (xmin, ymin, xmax, ymax)`.
#[pyfunction]
fn trace_conic(coeffs: (f64, f64, f64, f64, f64, f64), window: (f64, f64, f64, f64), step: f64) -> PyResult<Vec<Vec<Xy>>> {
    let (a, b, c, d, e, f) = coeffs;
    let conic = Conic { a, b, c, d, e, f };
    let bbox = BBox::new(Point2::new(window.0, window.1), Point2::new(window.2, window.3));
    let lines = boundary::trace_conic(&conic, &bbox, step).map_err(err)?;
    Ok(lines.iter().map(|l| l.vertices().iter().copied().map(xy).collect()).collect())
}

/// TV distance between the tangent-line and quadrature step densities near
/// a circular feature.
#[pyfunction]
#[pyo3(signature = (radius, sigma_mu2, tau2, cells=512))]
fn circle_tv(radius: f64, sigma_mu2: f64, tau2: f64, cells: usize) -> PyResult<f64> {
    let case = validation::circle_case(radius, sigma_mu2, tau2).map_err(err)?;
    Ok(validation::evaluate_case(&case, cells).map_err(err)?.tv)
}

/// Runs the command-line front end and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    edgetrack::cli::main_with_args(std::iter::once("edgetrack".to_string()).chain(args))
}

#[pymodule]
fn edgetrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EdgetrackError", m.py().get_type::<EdgetrackError>())?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(step_conditional, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(equal_density_conic, m)?)?;
    m.add_function(wrap_pyfunction!(trace_conic, m)?)?;
    m.add_function(wrap_pyfunction!(circle_tv, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
