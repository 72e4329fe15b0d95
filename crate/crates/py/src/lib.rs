use pyo3::prelude::*;
#[pymodule]
fn neurograph_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
