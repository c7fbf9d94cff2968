use pyo3::prelude::*;
use pyo3::types::PyDict;

fn module(py: Python<'_>) -> Bound<'_, PyModule> {
    let m = PyModule::new(py, "eqpm_py").unwrap();
    eqpm_py::register(&m).unwrap();
    m
}

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("eqpm", module(py)).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn metrics_and_agents() {
    run(c"
assert abs(eqpm.variance([0.2, 0.4]) - 0.01) < 1e-15
assert abs(eqpm.percentile_gap([1.0, 3.0]) - 1.8) < 1e-12
assert eqpm.norm_entropy([1.0, 0.0]) == 0.0
assert eqpm.equitable_loss([1.0, 2.0], 1.0) == 5.0
p, cost = eqpm.dc_optimal(1.0, 1.0, 1.0)
assert (p, cost) == (2.0, 3.0)
assert eqpm.dc_act(4.0, 1.0, 1.0) == 6.0
x, cost = eqpm.ev_optimal(0.0, 2.0, 1.0, [3.0, 1.0, 2.0, 5.0])
assert x == [0, 1, 1, 0] and cost == 3.0
try:
    eqpm.variance([])
    raise SystemExit('no error')
except eqpm.EqpmError:
    pass
");
}

#[test]
fn config_train_and_errors() {
    run(c"
cfg = eqpm.Config('{\"datacenter\": {\"agents\": 2, \"length\": 144}, \"train\": {\"epochs\": 1, \"hidden\": [4]}}')
h = cfg.config_hash()
cfg.seed = 5
assert cfg.config_hash() == h
r = eqpm.train(cfg)
assert len(r.summary.mean_regrets) == 2 and r.summary.variance >= 0
assert r.model.horizon == 1 and len(r.model.predict([300.0] * r.model.lookback)) == 1
try:
    eqpm.Config('{\"train\": {\"beta\": 2}}')
    raise SystemExit('no error')
except eqpm.EqpmError:
    pass
bad = eqpm.Config('{\"datacenter\": {\"agents\": 2, \"length\": 144}, \"train\": {\"mode\": \"plain\", \"lr\": 1e12, \"epochs\": 3, \"hidden\": [4]}}')
try:
    eqpm.train(bad)
    raise SystemExit('no error')
except eqpm.DivergenceError:
    pass
");
}
