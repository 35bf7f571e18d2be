#include "pitrans/gradcheck.hpp"

#include <cmath>
#include <string>

#include "pitrans/errors.hpp"
#include "pitrans/tape.hpp"

namespace pitrans {

GradcheckResult gradcheck_sites(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                const std::vector<ProbeSite>& sites, double eps, double kink_tolerance) {
  std::vector<bool> saved_flags;
  for (auto& leaf : leaves) {
    saved_flags.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  std::vector<std::vector<float>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    backward(y, tape);
    for (auto& leaf : leaves) {
      if (leaf.has_grad())
        analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
      else
        analytic.emplace_back(static_cast<std::size_t>(leaf.numel()), 0.0f);
      leaf.zero_grad();
    }
  }

  GradcheckResult result;
  NoGradScope no_grad;
  for (const auto& site : sites) {
    Tensor& leaf = leaves.at(site.leaf);
    auto data = leaf.mutable_data();
    const float orig = data[site.index];
    auto quotient = [&](double step) {
      const float up = static_cast<float>(orig + step);
      const float down = static_cast<float>(orig - step);
      data[site.index] = up;
      const double fp = f().item();
      data[site.index] = down;
      const double fm = f().item();
      data[site.index] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradcheck: non-finite evaluation when perturbing leaf " + std::to_string(site.leaf) +
                           " element " + std::to_string(site.index));
      return (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
    };
    const double numeric = quotient(eps);
    if (kink_tolerance > 0.0) {
      const double half = quotient(eps / 2);
      if (std::fabs(numeric - half) > kink_tolerance * std::max(1.0, std::fabs(numeric))) {
        ++result.skipped;
        continue;
      }
    }
    const double a = analytic[site.leaf][site.index];
    if (!std::isfinite(a))
      throw NumericError("gradcheck: non-finite analytic gradient at leaf " + std::to_string(site.leaf) +
                         " element " + std::to_string(site.index));
    const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric));
    if (err > result.max_rel_error || result.probes == 0) {
      result.max_rel_error = err;
      result.worst = site;
    }
    ++result.probes;
  }

  for (std::size_t i = 0; i < leaves.size(); ++i) leaves[i].set_requires_grad(saved_flags[i]);
  return result;
}

GradcheckResult gradcheck_all(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps) {
  std::vector<ProbeSite> sites;
  for (std::size_t l = 0; l < leaves.size(); ++l)
    for (std::size_t i = 0; i < static_cast<std::size_t>(leaves[l].numel()); ++i) sites.push_back({l, i});
  return gradcheck_sites(f, std::move(leaves), sites, eps);
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (x.numel() > 1000) throw ContractError("gradcheck: input has more than 1000 elements");
  if (eps < 1e-4 || eps > 1e-2) throw ContractError("gradcheck: eps must lie in [1e-4, 1e-2]");
  Tensor leaf = x.detach();
  return gradcheck_all([&] { return f(leaf); }, {leaf}, eps).max_rel_error;
}

}  // namespace pitrans
