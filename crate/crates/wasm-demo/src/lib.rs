//! Browser bindings for the static demo page in `www/`.
//!
//! Each export returns a JSON string. The `*_json` functions hold the logic
//! and run natively, so the tests do not need a browser.

use std::sync::Arc;

use probshield::envs::{parse_grid_map, BuiltinEnv, GridLayout};
use probshield::geometry::{enumerate_vertices, g_encode, HalfspaceCoefficients};
use probshield::shield::{sample_encoded, ProfileFamily, Shield, ShieldSession, TabularShieldPolicy, DEFAULT_CLOSURE_LIMIT};
use probshield::verify::verify_shield_policy_exact;
use probshield::{interval_iteration, IntervalConfig, Mdp, SafetyCertificate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest number of steps a single rollout may request.
pub const MAX_ROLLOUT_STEPS: usize = 5_000;

/// Encoded actions mixed per state by the demo's random policy.
const POLICY_SUPPORT: usize = 3;

type DemoResult<T> = Result<T, String>;

fn err(e: impl ToString) -> String {
    e.to_string()
}

/// Vertices of `{x in simplex : Σ c_i x_i <= budget}` and the image of every
/// index pair under the g-encoding.
pub fn polytope_json(costs: &[f64], budget: f64) -> DemoResult<Value> {
    if costs.is_empty() || costs.iter().chain([&budget]).any(|c| !c.is_finite()) {
        return Err("costs and budget must be finite and nonempty".into());
    }
    let coeffs = HalfspaceCoefficients::new(costs.to_vec(), budget);
    let vertices = enumerate_vertices(&coeffs).map_err(err)?;
    let d = costs.len();
    let mut encoded = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let x = g_encode(&coeffs, &vertices, i, j).map_err(err)?;
            encoded.push(json!({ "i": i, "j": j, "point": x, "level": coeffs.expected_level(&x) }));
        }
    }
    Ok(json!({ "vertices": vertices.vertices(), "encoded": encoded }))
}

struct GridEnv {
    env: BuiltinEnv,
    layout: GridLayout,
    mdp: Mdp,
}

fn grid_env(name: &str) -> DemoResult<GridEnv> {
    let env: BuiltinEnv = name.parse().map_err(err)?;
    let text = env.layout_text().ok_or_else(|| format!("{name} is not a grid environment"))?;
    Ok(GridEnv {
        env,
        layout: parse_grid_map(text).map_err(err)?,
        mdp: env.build().map_err(err)?,
    })
}

fn certify(m: &Mdp, epsilon: f64) -> DemoResult<SafetyCertificate> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    interval_iteration(m, IntervalConfig::with_epsilon(epsilon)).map_err(err)
}

fn glyph_rows(layout: &GridLayout, config: usize) -> Vec<String> {
    (0..layout.height)
        .map(|r| (0..layout.width).map(|c| layout.cell(config, r, c).glyph()).collect())
        .collect()
}

/// Certified bound on the minimal unsafe-reach probability for every cell of
/// one zone configuration.
pub fn risk_map_json(env: &str, config: usize, epsilon: f64) -> DemoResult<Value> {
    let g = grid_env(env)?;
    if config >= g.layout.configurations() {
        return Err(format!("{env} has {} configurations", g.layout.configurations()));
    }
    let cert = certify(&g.mdp, epsilon)?;
    let n = g.layout.cell_count();
    Ok(json!({
        "env": g.env.name(),
        "width": g.layout.width,
        "height": g.layout.height,
        "configurations": g.layout.configurations(),
        "config": config,
        "start": [g.layout.start.0, g.layout.start.1],
        "glyphs": glyph_rows(&g.layout, config),
        "beta": &cert.beta[config * n..(config + 1) * n],
        "beta_initial": cert.beta(g.mdp.initial()),
        "iterations": cert.iterations,
        "safety_bound": g.env.params().safety_bound,
    }))
}

/// One episode of a random shield policy, with its exact violation
/// probability.
pub fn rollout_json(env: &str, p: f64, seed: u64, steps: usize) -> DemoResult<Value> {
    if steps == 0 || steps > MAX_ROLLOUT_STEPS {
        return Err(format!("steps must lie in 1..={MAX_ROLLOUT_STEPS}"));
    }
    let g = grid_env(env)?;
    let cert = certify(&g.mdp, probshield::reach::DEFAULT_EPSILON)?;
    let shield = Arc::new(
        Shield::new(&g.mdp, &cert, p, ProfileFamily::uniform_slack(probshield::shield::DEFAULT_SLACK_STEPS))
            .map_err(err)?,
    );
    let closure = shield.reachable_levels(DEFAULT_CLOSURE_LIMIT).map_err(err)?;
    let policy = TabularShieldPolicy::random(shield.action_space(), &closure, POLICY_SUPPORT, seed).map_err(err)?;
    let report = verify_shield_policy_exact(&shield, &policy).map_err(err)?;

    let n = g.layout.cell_count();
    let cell = |s: usize| {
        let (config, rest) = (s / n, s % n);
        json!({ "config": config, "row": rest / g.layout.width, "col": rest % g.layout.width })
    };
    let mut session = ShieldSession::new(shield.clone(), Some(steps), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let start = session.reset(None);
    let mut trace = vec![json!({
        "cell": cell(start.state.0),
        "level": start.level,
        "beta": shield.beta()[start.state.0],
    })];
    let mut ret = 0.0;
    let mut unsafe_hit = g.mdp.is_unsafe(start.state);
    while !session.is_done() {
        let idx = sample_encoded(&policy, session.state(), &mut rng).map_err(err)?;
        let out = session.step_flat(idx).map_err(err)?;
        ret += out.reward;
        unsafe_hit |= g.mdp.is_unsafe(out.next.state);
        trace.push(json!({
            "cell": cell(out.next.state.0),
            "level": out.next.level,
            "beta": shield.beta()[out.next.state.0],
            "reward": out.reward,
            "action": out.diagnostics.base_action,
            "profile": out.diagnostics.profile,
            "fell_back": out.diagnostics.fell_back,
        }));
    }
    Ok(json!({
        "env": g.env.name(),
        "bound": p,
        "beta_initial": shield.beta()[g.mdp.initial().0],
        "closure_states": closure.len(),
        "exact": report,
        "trace": trace,
        "return": ret,
        "violated": unsafe_hit,
    }))
}

fn to_js(r: DemoResult<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn polytope(costs: Vec<f64>, budget: f64) -> Result<String, JsError> {
    to_js(polytope_json(&costs, budget))
}

#[wasm_bindgen]
pub fn risk_map(env: &str, config: u32, epsilon: f64) -> Result<String, JsError> {
    to_js(risk_map_json(env, config as usize, epsilon))
}

#[wasm_bindgen]
pub fn shield_rollout(env: &str, p: f64, seed: u32, steps: u32) -> Result<String, JsError> {
    to_js(rollout_json(env, p, u64::from(seed), steps as usize))
}

#[wasm_bindgen]
pub fn grid_envs() -> String {
    let names: Vec<&str> = BuiltinEnv::ALL
        .iter()
        .filter(|e| e.layout_text().is_some())
        .map(|e| e.name())
        .collect();
    json!(names).to_string()
}
