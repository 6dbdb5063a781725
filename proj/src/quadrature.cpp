#include "sfl/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace sfl::quad {

namespace {

Rule build_rule(std::size_t n) {
  Rule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = pk;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = x;
    r.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

}  // namespace

const Rule& gauss_legendre(std::size_t order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  if (order == 1) {
    static const Rule one{{0.0}, {2.0}};
    return one;
  }
  static std::mutex mu;
  static std::map<std::size_t, Rule> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, build_rule(order)).first;
  return it->second;
}

void Composite::map(double a, double b, std::vector<double>& nodes, std::vector<double>& weights) const {
  const Rule& r = gauss_legendre(order);
  const double width = (b - a) / static_cast<double>(panels);
  nodes.clear();
  weights.clear();
  nodes.reserve(this->nodes());
  weights.reserve(this->nodes());
  for (std::size_t p = 0; p < panels; ++p) {
    const double mid = a + width * (static_cast<double>(p) + 0.5);
    for (std::size_t i = 0; i < order; ++i) {
      nodes.push_back(mid + 0.5 * width * r.nodes[i]);
      weights.push_back(0.5 * width * r.weights[i]);
    }
  }
}

Composite Composite::with_nodes(std::size_t total) {
  if (total < 8) throw std::invalid_argument("quadrature: at least 8 nodes required");
  return Composite{(total + 7) / 8, 8};
}

}  // namespace sfl::quad
