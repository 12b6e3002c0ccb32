#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ugcn/tensor.hpp"

namespace ugcn {

// A scalar-valued tensor function: registers the given tensors as tape leaves
// (or constants) and returns the scalar output Var. Must be pure: same
// inputs, same value, no hidden state mutation.
using ScalarFn = std::function<Var(Tape&, std::vector<Tensor>&)>;

// Central finite differences against the tape's analytic gradients.
// Returns the max relative error over every coordinate of every input,
// rel = |a - n| / max(floor, |a| + |n|).
inline double grad_check(const ScalarFn& f, std::vector<Tensor>& inputs,
                         double h = 1e-5, double floor = 1e-8) {
  for (Tensor& t : inputs) {
    t.requires_grad = true;
    t.zero_grad();
  }
  {
    Tape tape;
    Var out = f(tape, inputs);
    tape.backward(out);
  }
  auto value = [&]() {
    Tape tape;
    Var out = f(tape, inputs);
    return tape.val(out).data[0];
  };
  double max_rel = 0.0;
  for (Tensor& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + h;
      const double fp = value();
      t.data[i] = saved - h;
      const double fm = value();
      t.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = t.grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(floor, std::abs(analytic) + std::abs(numeric));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace ugcn
