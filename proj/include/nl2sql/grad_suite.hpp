#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nl2sql {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

// Central-difference checks of every differentiable op, the LSTM composites,
// the pointer span head and the cell attention head, on small seeded inputs.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace nl2sql
