#pragma once

namespace pesim {

/// Run the invariant battery (stencil moments, convergence orders, cost
/// counts, continuity and determinism checks); prints one pass/fail line per
/// check and returns the number of failures. `inject_stencil_fault` perturbs
/// a stencil weight before the moment check, as a negative control.
int run_selftest(bool inject_stencil_fault);

}  // namespace pesim
