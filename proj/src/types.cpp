#include "kl/types.hpp"

#include <algorithm>
#include <thread>

namespace kl {

Box::Box(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() == 0 || lo.size() != hi.size()) {
    throw Error("box: bounds must be nonempty and of equal dimension");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!(lo[i] < hi[i])) {
      throw Error("box: empty along axis " + std::to_string(i));
    }
  }
}

Box Box::centered(const Vec& center, const Vec& half_widths) {
  return Box(center - half_widths, center + half_widths);
}

Box Box::cube(int dim, double lo, double hi) {
  return Box(Vec::Constant(dim, lo), Vec::Constant(dim, hi));
}

bool Box::contains(const Vec& x, double slack) const {
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
  }
  return true;
}

double Box::distance_to_frontier(const Vec& x) const {
  double d = kInf;
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    d = std::min({d, x[i] - lo[i], hi[i] - x[i]});
  }
  return std::max(d, 0.0);
}

Vec Box::clamp(const Vec& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

Vec Box::uniform(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec x(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    x[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
  }
  return x;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t nthreads =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nthreads);
  pool.reserve(nthreads);
  for (std::size_t w = 0; w < nthreads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += nthreads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace kl
