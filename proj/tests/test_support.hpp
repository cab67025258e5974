#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nasrl/ops.hpp"
#include "nasrl/network.hpp"
#include "nasrl/rng.hpp"
#include "nasrl/search_space.hpp"
#include "nasrl/tensor.hpp"

namespace nasrl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  Tensor t(std::move(shape), requires_grad);
  for (double& v : t.data()) v = scale * standard_normal(rng);
  return t;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

// Analytic gradient of the scalar `f()` with respect to `wrt`, via the tape.
inline std::vector<double> analytic_grad(const std::function<Tensor()>& f, Tensor wrt) {
  wrt.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = f();
  backward(loss);
  auto g = wrt.grad();
  return {g.begin(), g.end()};
}

// Central finite differences of `f()` with respect to `wrt`. Runs with no
// active tape so nothing is recorded.
inline std::vector<double> numeric_grad(const std::function<Tensor()>& f, Tensor wrt, double eps = 1e-5) {
  auto d = wrt.data();
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double orig = d[i];
    d[i] = orig + eps;
    const double up = f().item();
    d[i] = orig - eps;
    const double down = f().item();
    d[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double gradcheck(const std::function<Tensor()>& f, Tensor wrt, double eps = 1e-5) {
  return relative_error(analytic_grad(f, wrt), numeric_grad(f, wrt, eps));
}

// Contracts an arbitrary-shape output with fixed random weights so that every
// output element contributes to the scalar.
inline Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

// Uniform choice per edge; with `prune_rate` > 0 some edges are pruned.
inline Genotype random_genotype(const CandidateSets& sets, Rng& rng, double prune_rate = 0.0) {
  Genotype g;
  for (CellType t : {CellType::normal, CellType::reduction}) {
    for (const auto& cands : sets.of(t)) {
      const bool pruned = prune_rate > 0.0 && uniform01(rng) < prune_rate;
      const int pick = static_cast<int>(uniform_index(rng, cands.size()));
      g.of(t).push_back(pruned ? Genotype::kPruned : pick);
    }
  }
  return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

inline std::size_t element_count(const std::vector<Tensor>& ts) {
  std::size_t n = 0;
  for (const auto& t : ts) n += t.numel();
  return n;
}

// Walks the tensors a built network actually holds: everything outside the
// edges, plus the weight bundle of the op chosen on each edge.
inline std::size_t enumerate_subnet_parameters(const SuperNetwork& net, const Genotype& g) {
  std::size_t edge_total = 0;
  for (const auto& cell : net.cells()) {
    for (const auto& edge : cell.edges())
      for (const auto& op : edge.ops) {
        std::vector<Tensor> ps;
        op->collect_parameters(ps);
        edge_total += element_count(ps);
      }
  }
  std::size_t total = element_count(net.parameters()) - edge_total;
  for (const auto& cell : net.cells()) {
    const auto& choices = cell.reduction() ? g.reduction : g.normal;
    for (std::size_t e = 0; e < cell.edges().size(); ++e) {
      if (choices[e] == Genotype::kPruned) continue;
      std::vector<Tensor> ps;
      cell.edges()[e].ops[static_cast<std::size_t>(choices[e])]->collect_parameters(ps);
      total += element_count(ps);
    }
  }
  return total;
}

}  // namespace nasrl::testing
