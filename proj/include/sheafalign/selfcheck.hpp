#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sheafalign {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // worst error seen
  double tolerance = 0.0;
  std::string detail;
};

/// Invariant suite behind `sheafalign check`: Laplacian equivalence and
/// factorization, loss gradients against finite differences, and the
/// contrastive closed forms.
std::vector<CheckResult> run_selfcheck(std::uint64_t seed);

/// Edge-wise quadratic form vs h^T L h on random configurations.
CheckResult check_laplacian_equivalence(std::uint64_t seed, std::size_t configs = 100);
/// L symmetric and positive semidefinite on random probes.
CheckResult check_laplacian_psd(std::uint64_t seed, std::size_t probes = 1000);
/// Gradients of each loss term w.r.t. embeddings, P, Q and encoder weights.
CheckResult check_loss_gradients(std::uint64_t seed, std::size_t points = 20);
CheckResult check_contrastive_closed_forms();

}  // namespace sheafalign
