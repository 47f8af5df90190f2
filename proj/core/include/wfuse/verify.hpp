#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wfuse/tensor.hpp"

namespace wfuse {

struct CheckReport {
  std::string check;
  std::uint64_t seed = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  // Checks that must also show a difference (non-absorption) report the
  // smallest observed difference and the bound it has to exceed.
  std::optional<double> min_separation;
  std::optional<double> separation_bound;
  bool passed = false;
  std::string detail;

  void finalize();
};

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares analytic gradients of sum(f(inputs) * R), R a fixed random
// projection, with central differences (step 1e-5) on every input element.
// Inputs are converted to real-64. max_error is, per input, the largest
// absolute deviation divided by max(1, largest gradient magnitude).
CheckReport grad_check(const std::string& name, const GradFn& f, const std::vector<Tensor>& inputs,
                       double tolerance, std::uint64_t seed);

// Finite-difference checks for every differentiable op and fusion operator.
std::vector<CheckReport> grad_check_suite(std::uint64_t seed);

// Two parallel branches from one input; beta on branch 1 versus beta folded
// into branch 1's convolution weights. Throws ContractError for beta <= 0.
CheckReport absorption_check(double beta, std::uint64_t seed);

// Series branches X1 = H1(X0), X2 = H2(X1) fused as concat(alpha X1, X2).
CheckReport series_nonabsorption_check(double alpha, std::uint64_t seed);

// Bias-free conv -> BN (training mode) with conv weights scaled by c.
CheckReport bn_scale_invariance_check(double c, std::uint64_t seed);

// Residual U-Net with all alphas = betas = 1 versus the naive baseline.
CheckReport baseline_reduction_check(std::uint64_t seed);

enum class Suite { all, grad, absorption, series, bn, baseline };

Suite parse_suite(const std::string& name);
std::vector<CheckReport> run_suite(Suite suite, int seeds = 10);

std::string check_csv_header();
std::string check_csv_row(const CheckReport& r);

}  // namespace wfuse
