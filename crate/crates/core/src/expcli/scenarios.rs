//! Built-in environments, all on `[0, 1]`.

use crate::environment::{Coefficients, EnvironmentBuilder, EnvironmentSpec, JumpKernel};

pub const SCENARIOS: [&str; 5] = ["feller", "linear-drift", "atom-bottleneck", "heavy-tail", "null"];

pub fn list_builtin_scenarios() -> Vec<&'static str> {
    SCENARIOS.to_vec()
}

/// The environment of a built-in scenario, or `None` for an unknown name.
pub fn builtin_scenario(name: &str) -> Option<EnvironmentSpec> {
    let builder = EnvironmentBuilder::new(1.0);
    let builder = match name {
        // pure diffusion c = 1 on γ(t) = t
        "feller" => builder.piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 1.0, JumpKernel::zero())),
        "linear-drift" => builder.piece(0.0, 1.0, 1.0, Coefficients::drift(1.0)),
        // one bottleneck at t = 0.5 killing half the mass: δ = b1 Δγ = 0.5
        "atom-bottleneck" => builder
            .piece(0.0, 1.0, 1.0, Coefficients::new(0.0, 0.5, JumpKernel::zero()))
            .atom(0.5, 0.5, Coefficients::drift(1.0)),
        // infinite-activity small jumps on pieces, a large jump of size 2 at the atom
        "heavy-tail" => builder
            .piece(
                0.0,
                1.0,
                1.0,
                Coefficients::new(0.0, 0.3, JumpKernel::power_law(0.5, 0.5, 0.0, 1.0)),
            )
            .atom(0.5, 0.5, Coefficients::new(0.5, 0.0, JumpKernel::atomic(&[(2.0, 0.6)]))),
        "null" => builder.piece(0.0, 1.0, 1.0, Coefficients::default()),
        _ => return None,
    };
    Some(builder.build().expect("built-in scenarios are well formed"))
}
