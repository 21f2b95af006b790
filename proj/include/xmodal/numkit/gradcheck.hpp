#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "xmodal/numkit/autodiff.hpp"

namespace xmodal::numkit {

// A differentiable function of one tensor, expressed as tape ops.
using TapedFunction = std::function<ad::Var(ad::Tape&, ad::Var)>;

// Compares the tape gradient of sum(op(x)) at `point` against central
// differences (f(x+h) − f(x−h)) / 2h, coordinate by coordinate. Returns the
// worst relative error |a − n| / max(|a|, |n|, 1e−8).
inline double finite_difference_check(const TapedFunction& op, const Tensord& point, double step) {
  auto evaluate = [&](const Tensord& x) {
    ad::Tape tape;
    ad::Var out = op(tape, tape.variable(x));
    if (tape.value(out).size() != 1) out = ad::sum(tape, out);
    const double v = tape.value(out)[0];
    if (!std::isfinite(v)) throw NumericInstabilityError("non-finite value during finite-difference check");
    return v;
  };

  Tensord analytic;
  {
    ad::Tape tape;
    ad::Var x = tape.variable(point);
    ad::Var out = op(tape, x);
    if (tape.value(out).size() != 1) out = ad::sum(tape, out);
    if (!tape.value(out).all_finite()) {
      throw NumericInstabilityError("non-finite forward value during finite-difference check");
    }
    analytic = tape.backward(out)[x];
  }
  if (!analytic.all_finite()) throw NumericInstabilityError("non-finite analytic gradient");

  double worst = 0.0;
  Tensord probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    // Divide by the step actually representable at this coordinate.
    const double hi = point[i] + step;
    const double lo = point[i] - step;
    probe[i] = hi;
    const double up = evaluate(probe);
    probe[i] = lo;
    const double down = evaluate(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (hi - lo);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace xmodal::numkit
