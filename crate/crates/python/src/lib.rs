use pyo3::prelude::*;

#[pymodule]
fn _cuspidal(_py: Python<'_>, _m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
