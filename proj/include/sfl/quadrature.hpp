#pragma once

#include <cstddef>
#include <functional>
#include <type_traits>
#include <vector>

namespace sfl::quad {

struct Rule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1] (Newton iteration on P_n).
const Rule& gauss_legendre(std::size_t order);

/// Composite Gauss-Legendre: `panels` equal panels of `order` nodes each.
struct Composite {
  std::size_t panels = 8;
  std::size_t order = 8;

  std::size_t nodes() const { return panels * order; }

  /// Nodes and weights mapped to [a, b].
  void map(double a, double b, std::vector<double>& nodes, std::vector<double>& weights) const;

  template <typename F>
  auto integrate(F&& f, double a, double b) const -> std::decay_t<decltype(f(a))> {
    const Rule& r = gauss_legendre(order);
    const double width = (b - a) / static_cast<double>(panels);
    using R = std::decay_t<decltype(f(a))>;
    R acc{};
    bool first = true;
    for (std::size_t p = 0; p < panels; ++p) {
      const double lo = a + width * static_cast<double>(p);
      const double mid = lo + 0.5 * width;
      for (std::size_t i = 0; i < order; ++i) {
        R term = (0.5 * width * r.weights[i]) * f(mid + 0.5 * width * r.nodes[i]);
        if (first) {
          acc = term;
          first = false;
        } else {
          acc += term;
        }
      }
    }
    return acc;
  }

  /// Split a requested node count into 8-node panels (at least one panel).
  static Composite with_nodes(std::size_t total);
};

}  // namespace sfl::quad
