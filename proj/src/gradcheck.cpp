#include "jointdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "jointdiff/autodiff.hpp"

namespace jointdiff {

GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<Tensor> params, GradCheckOptions opts) {
  if (!(opts.eps > 0.0f)) throw ContractViolation("finite_difference_check: eps must be positive");
  if (params.empty()) throw ContractViolation("finite_difference_check: no parameters");

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = loss_fn();
    }
    require_finite(loss, "finite_difference_check loss");
    tape.backward(loss, params);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (total <= static_cast<std::size_t>(opts.max_coords)) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].size(); ++i) coords.emplace_back(k, i);
  } else {
    std::mt19937_64 rng(opts.seed);
    for (int n = 0; n < opts.max_coords; ++n) {
      const std::size_t k = static_cast<std::size_t>(n) % params.size();
      std::uniform_int_distribution<std::size_t> pick(0, params[k].size() - 1);
      coords.emplace_back(k, pick(rng));
    }
  }

  auto eval = [&]() {
    Tensor l = loss_fn();
    require_finite(l, "finite_difference_check loss");
    return static_cast<double>(l.item());
  };

  GradCheckReport report;
  for (auto [k, i] : coords) {
    auto values = params[k].data();
    const float original = values[i];
    const float up = original + opts.eps;
    const float down = original - opts.eps;
    values[i] = up;
    const double f_up = eval();
    values[i] = down;
    const double f_down = eval();
    values[i] = original;
    const double fd = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
    const double analytic = params[k].grad()[i];
    const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.coords_checked;
  }
  return report;
}

}  // namespace jointdiff
