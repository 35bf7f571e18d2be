#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pitrans/tensor.hpp"

namespace pitrans {

/// One element of one leaf tensor to probe.
struct ProbeSite {
  std::size_t leaf = 0;
  std::size_t index = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  ProbeSite worst;
  std::size_t probes = 0;
  /// Sites dropped because the function is not smooth across the probe interval.
  std::size_t skipped = 0;
};

/// Compares tape gradients of the scalar `f()` with respect to `leaves` against
/// central differences at the given sites. The error per site is
/// |analytic - numeric| / max(1, |numeric|); the difference quotient is formed in
/// double from the two float32 evaluations. `f` must read the leaves' current values
/// (they are perturbed in place and restored). Throws NumericError naming the site
/// when an evaluation is not finite.
///
/// With `kink_tolerance` > 0 each site is also differenced at eps/2; when the two
/// quotients differ by more than kink_tolerance * max(1, |numeric|) a ReLU/abs kink lies
/// inside the interval, the site is skipped and counted in `skipped`.
GradcheckResult gradcheck_sites(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                const std::vector<ProbeSite>& sites, double eps, double kink_tolerance = 0.0);

/// All elements of all leaves.
GradcheckResult gradcheck_all(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps);

/// Single-input form: max relative error of d f(x) / dx over every element of x.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace pitrans
