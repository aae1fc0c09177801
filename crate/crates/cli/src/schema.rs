use serde_json::{json, Value};

/// Descriptions of every file the CLI reads or writes.
pub fn schema() -> Value {
    json!({
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "formats": {
            "grid": {
                "type": "json",
                "fields": {
                    "buses": "number of non-substation buses N",
                    "lines": "array of {child, parent, r, x}; child in 1..=N, parent in 0..=N, r > 0, x ≥ 0 (per unit)"
                }
            },
            "profiles": {
                "type": "csv",
                "header": "t,p_1,…,p_N,q_1,…,q_N",
                "rows": "net active and reactive injections per time slot (per unit, generation positive)"
            },
            "series": {
                "type": "csv",
                "header": "t,bus_1,…,bus_N",
                "rows": "squared voltage magnitudes per time slot, 17 significant digits"
            },
            "kernels": {
                "type": "json",
                "items": "one record per bus: {n, rho1: [N entries, entry k for bus k+1], rho2: [{i, j, value}] nonzero pairs with i < j}",
                "note": "coefficients act on deviations of each bus from the reference voltages stored in the diagnostics file"
            },
            "diagnostics": {
                "type": "json",
                "fields": {
                    "centers": "reference voltage per bus (length N)",
                    "buses": "per-bus {bus, lambda, mu, ratios, status, iterations, optimality_residual, objective, intercept, ill_conditioned, pairs_cleared, holdout_mse}"
                }
            },
            "roc_<method>": {"type": "csv", "header": "threshold,fpr,tpr"},
            "edges_<method>": {"type": "csv", "header": "i,j,score,truth"},
            "triads_volterra": {"type": "csv", "header": "n,i,j,score,truth"},
            "auc": {
                "type": "json",
                "fields": {
                    "auc": "method name → edge AUC",
                    "triad_auc_volterra": "AUC of pair coefficients against two-hop triads, or null",
                    "buses": "N",
                    "samples": "T"
                }
            },
            "run_config": {
                "type": "toml",
                "keys": {
                    "seed": "integer",
                    "output": "directory",
                    "model": "exact | linear",
                    "noise_std": "number ≥ 0",
                    "grid": "{path} or {buses, degree_bias}",
                    "profiles": "{path, v0} or {samples, base_load, volatility, solar_fraction, autocorrelation, common_share, v0}",
                    "solver": "{lambda, mu, tol, max_iter, sweep}",
                    "evaluate": "{methods = [\"volterra\", \"pc\", \"concentration\"]}"
                }
            }
        }
    })
}
