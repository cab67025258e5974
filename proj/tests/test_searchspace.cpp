#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "nasrl/controller.hpp"
#include "nasrl/errors.hpp"
#include "nasrl/genotype_io.hpp"
#include "nasrl/network.hpp"
#include "test_support.hpp"

using namespace nasrl;
using nasrl::testing::enumerate_subnet_parameters;
using nasrl::testing::max_abs_diff;
using nasrl::testing::random_genotype;
using nasrl::testing::random_tensor;

namespace {

NetworkConfig small_config(int layers = 5, int channels = 4) {
  NetworkConfig c;
  c.layers = layers;
  c.channels = channels;
  c.classes = 5;
  c.candidates = CandidateSets::full(c.cell, normal_catalog(), reduction_catalog());
  return c;
}

Genotype uniform_choice(const CandidateSets& sets, OpKind normal_op, OpKind reduction_op) {
  Genotype g;
  for (const auto& c : sets.normal) g.normal.push_back(int(std::find(c.begin(), c.end(), normal_op) - c.begin()));
  for (const auto& c : sets.reduction)
    g.reduction.push_back(int(std::find(c.begin(), c.end(), reduction_op) - c.begin()));
  return g;
}

EdgeProbabilities one_hot(const std::vector<int>& choices, const EdgeCandidates& cands) {
  EdgeProbabilities p;
  for (std::size_t e = 0; e < cands.size(); ++e) {
    std::vector<double> v(cands[e].size(), 0.0);
    if (choices[e] == Genotype::kPruned) {
      const auto none = std::find(cands[e].begin(), cands[e].end(), OpKind::none);
      v[static_cast<std::size_t>(none - cands[e].begin())] = 1.0;
    } else {
      v[static_cast<std::size_t>(choices[e])] = 1.0;
    }
    p.push_back(std::move(v));
  }
  return p;
}

void copy_into(const Tensor& src, Tensor dst) {
  REQUIRE(src.shape() == dst.shape());
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

void copy_all(const std::vector<Tensor>& src, const std::vector<Tensor>& dst) {
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) copy_into(src[i], dst[i]);
}

std::vector<Tensor> op_params(const Operation& op) {
  std::vector<Tensor> out;
  op.collect_parameters(out);
  return out;
}

}  // namespace

TEST_CASE("catalogs and cell topology") {
  CHECK(normal_catalog().size() == 10);
  CHECK(reduction_catalog().size() == 6);
  CHECK(normal_catalog().front() == OpKind::none);
  CHECK(reduction_catalog()[1] == OpKind::skip_connect);
  for (OpKind k : normal_catalog()) CHECK(op_from_name(op_name(k)) == k);
  CHECK_FALSE(op_from_name("conv_9x9").has_value());

  const auto edges = cell_edges(CellSpec{});
  REQUIRE(edges.size() == 14);
  CHECK(edges[0] == EdgeId{0, 2});
  CHECK(edges[1] == EdgeId{1, 2});
  CHECK(edges[2] == EdgeId{0, 3});
  CHECK(edges[13] == EdgeId{4, 5});
}

TEST_CASE("reduction cells sit at a third and two thirds of the depth") {
  auto reductions = [](int layers) {
    std::vector<int> idx;
    const auto ls = cell_layouts(small_config(layers));
    for (std::size_t i = 0; i < ls.size(); ++i)
      if (ls[i].reduction) idx.push_back(int(i));
    return idx;
  };
  CHECK(reductions(5) == std::vector<int>{1, 3});
  CHECK(reductions(8) == std::vector<int>{2, 5});
  CHECK(reductions(3) == std::vector<int>{1, 2});
  auto bad = small_config(2);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(SuperNetwork(bad, 0), ConfigError);
}

TEST_CASE("supernetwork construction is seed-deterministic") {
  const auto cfg = small_config();
  SuperNetwork a(cfg, 42), b(cfg, 42), c(cfg, 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_same = all_same && std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin());
    any_diff = any_diff || !std::equal(pa[i].data().begin(), pa[i].data().end(), pc[i].data().begin());
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("supernetwork parameter total matches its instantiated tensors") {
  for (auto [layers, channels] : {std::pair{8, 8}, std::pair{5, 4}, std::pair{4, 6}}) {
    const auto cfg = small_config(layers, channels);
    SuperNetwork net(cfg, 1);
    CHECK(nasrl::testing::element_count(net.parameters()) == count_supernet_parameters(cfg));
  }
}

TEST_CASE("count_parameters: closed-form examples") {
  CHECK(op_parameter_count(OpKind::conv_1x1, 8) == 64 + 16);
  CHECK(op_parameter_count(OpKind::skip_connect, 8) == 0);
  CHECK(op_parameter_count(OpKind::max_pool_3x3, 8) == 0);
  CHECK(op_parameter_count(OpKind::none, 8) == 0);

  const auto cfg = small_config();
  const auto none = uniform_choice(cfg.candidates, OpKind::none, OpKind::none);
  const auto skip = uniform_choice(cfg.candidates, OpKind::skip_connect, OpKind::skip_connect);
  CHECK(count_parameters(none, cfg) == backbone_parameter_count(cfg));
  CHECK(count_parameters(skip, cfg) == backbone_parameter_count(cfg));
  CHECK(uniform_genotype_parameters(cfg, OpKind::sep_conv_3x3, OpKind::skip_connect) ==
        count_parameters(uniform_choice(cfg.candidates, OpKind::sep_conv_3x3, OpKind::skip_connect), cfg));
}

TEST_CASE("count_parameters equals enumeration of instantiated weights") {
  for (auto [layers, channels] : {std::pair{5, 4}, std::pair{8, 8}}) {
    const auto cfg = small_config(layers, channels);
    SuperNetwork net(cfg, 9);
    Rng rng(layers);
    for (int i = 0; i < 25; ++i) {
      const auto g = random_genotype(cfg.candidates, rng, 0.2);
      CHECK(count_parameters(g, cfg) == enumerate_subnet_parameters(net, g));
    }
  }
}

TEST_CASE("count_parameters never decreases when a none edge gets a concrete op") {
  const auto cfg = small_config();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_genotype(cfg.candidates, rng);
    const std::size_t e = uniform_index(rng, g.normal.size());
    g.normal[e] = 0;  // none
    const auto base = count_parameters(g, cfg);
    for (int k = 1; k < int(cfg.candidates.normal[e].size()); ++k) {
      g.normal[e] = k;
      CHECK(count_parameters(g, cfg) >= base);
    }
  }
}

TEST_CASE("single-op edges") {
  Rng rng(2);
  Tensor x = random_tensor({2, 4, 6, 6}, rng);
  const ForwardContext ctx{BnMode::batch_stats};
  auto skip = make_operation(OpKind::skip_connect, 4, 1, rng);
  CHECK(max_abs_diff(skip->forward(x, ctx), x) == 0.0);
  auto none = make_operation(OpKind::none, 4, 1, rng);
  const Tensor z = none->forward(x, ctx);
  CHECK(z.shape() == x.shape());
  CHECK(std::all_of(z.data().begin(), z.data().end(), [](double v) { return v == 0.0; }));
  auto reduce = make_operation(OpKind::skip_connect, 4, 2, rng);
  CHECK(reduce->forward(x, ctx).shape() == Shape{2, 4, 3, 3});
  for (OpKind k : normal_catalog()) {
    auto op = make_operation(k, 4, 2, rng);
    CHECK(op->forward(x, ctx).shape() == Shape{2, 4, 3, 3});
  }
}

TEST_CASE("mixed forward with one-hot probabilities equals discrete forward") {
  const auto cfg = small_config();
  SuperNetwork net(cfg, 3);
  Rng rng(17);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const ForwardContext ctx{BnMode::batch_stats};
  for (int i = 0; i < 8; ++i) {
    const auto g = random_genotype(cfg.candidates, rng, 0.1);
    const Tensor mixed = net.forward_mixed(x, one_hot(g.normal, cfg.candidates.normal),
                                           one_hot(g.reduction, cfg.candidates.reduction), ctx);
    const Tensor discrete = net.forward_discrete(x, g, ctx);
    CHECK(max_abs_diff(mixed, discrete) < 1e-9);
  }
}

TEST_CASE("mixed forward rejects misaligned probabilities") {
  const auto cfg = small_config();
  SuperNetwork net(cfg, 3);
  Tensor x = Tensor::zeros({1, 3, 8, 8});
  auto probs = table_probs(AlphaTable::zeros(cfg.candidates.normal));
  const auto red = table_probs(AlphaTable::zeros(cfg.candidates.reduction));
  probs[3].pop_back();
  CHECK_THROWS_AS(net.forward_mixed(x, probs, red, {BnMode::batch_stats}), ContractViolation);
  probs.pop_back();
  CHECK_THROWS_AS(net.forward_mixed(x, probs, red, {BnMode::batch_stats}), ContractViolation);
}

TEST_CASE("degenerate genotypes") {
  const auto cfg = small_config();
  SuperNetwork net(cfg, 4);
  Rng rng(8);
  Tensor x = random_tensor({3, 3, 8, 8}, rng);
  const ForwardContext ctx{BnMode::batch_stats};

  // Every intermediate node is zero, so the features are zero and the logits
  // reduce to the classifier bias.
  const Tensor logits = net.forward_discrete(x, uniform_choice(cfg.candidates, OpKind::none, OpKind::none), ctx);
  const auto params = net.parameters();
  const Tensor& bias = params.back();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < cfg.classes; ++k) CHECK(logits.data()[std::size_t(r * cfg.classes + k)] == bias.data()[k]);

  const Tensor skip = net.forward_discrete(
      x, uniform_choice(cfg.candidates, OpKind::skip_connect, OpKind::skip_connect), ctx);
  CHECK(std::all_of(skip.data().begin(), skip.data().end(), [](double v) { return std::isfinite(v); }));
}

TEST_CASE("discrete forward matches a standalone network with copied weights") {
  const auto cfg = small_config();
  SuperNetwork net(cfg, 21);
  Rng rng(22);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const ForwardContext ctx{BnMode::batch_stats};
  for (int trial = 0; trial < 4; ++trial) {
    const auto g = random_genotype(cfg.candidates, rng, 0.15);

    NetworkConfig solo_cfg = cfg;
    Genotype solo_g;
    for (CellType t : {CellType::normal, CellType::reduction}) {
      auto& cands = solo_cfg.candidates.of(t);
      const auto& full = cfg.candidates.of(t);
      for (std::size_t e = 0; e < cands.size(); ++e) {
        const int c = g.of(t)[e];
        cands[e] = {c == Genotype::kPruned ? OpKind::none : full[e][std::size_t(c)]};
        solo_g.of(t).push_back(0);
      }
    }
    SuperNetwork solo(solo_cfg, 1000 + std::uint64_t(trial));

    const auto src = net.parameters(), dst = solo.parameters();
    for (int i = 0; i < 3; ++i) copy_into(src[std::size_t(i)], dst[std::size_t(i)]);
    copy_into(src[src.size() - 2], dst[dst.size() - 2]);
    copy_into(src.back(), dst.back());
    for (std::size_t ci = 0; ci < net.cells().size(); ++ci) {
      const Cell& from = net.cells()[ci];
      const Cell& to = solo.cells()[ci];
      std::vector<Tensor> a, b;
      from.collect_parameters(a);
      to.collect_parameters(b);
      for (int i = 0; i < 6; ++i) copy_into(a[std::size_t(i)], b[std::size_t(i)]);
      const auto& choices = from.reduction() ? g.reduction : g.normal;
      for (std::size_t e = 0; e < from.edges().size(); ++e) {
        if (choices[e] == Genotype::kPruned) continue;
        copy_all(op_params(*from.edges()[e].ops[std::size_t(choices[e])]), op_params(*to.edges()[e].ops[0]));
      }
    }
    CHECK(max_abs_diff(net.forward_discrete(x, g, ctx), solo.forward_discrete(x, solo_g, ctx)) < 1e-9);
  }
}

TEST_CASE("validate_genotype rejects stale indices") {
  const auto cfg = small_config();
  Genotype g = uniform_choice(cfg.candidates, OpKind::sep_conv_7x7, OpKind::max_pool_7x7);
  ArchAlphas alpha = ArchAlphas::zeros(cfg.candidates);
  const auto shrunk = shrink_opset(alpha, cfg.candidates, 4, 3);
  CHECK_THROWS_AS(validate_genotype(g, shrunk.sets), InvalidGenotype);
  SuperNetwork net({[&] {
                      auto c = cfg;
                      c.candidates = shrunk.sets;
                      return c;
                    }()},
                   0);
  CHECK_THROWS_AS(net.forward_discrete(Tensor::zeros({1, 3, 8, 8}), g, {BnMode::batch_stats}), InvalidGenotype);
}

TEST_CASE("derive_genotype") {
  const auto cfg = small_config();
  ArchAlphas alpha = ArchAlphas::zeros(cfg.candidates);

  SUBCASE("uniform alpha picks the lowest index, which is none, so all edges prune") {
    const auto g = derive_genotype(alpha, cfg.candidates);
    for (int c : g.normal) CHECK(c == Genotype::kPruned);
  }
  SUBCASE("skip maximal everywhere") {
    for (auto& v : alpha.normal.edges) v[1] = 1.0;
    for (auto& v : alpha.reduction.edges) v[1] = 1.0;
    const auto g = derive_genotype(alpha, cfg.candidates);
    for (int c : g.normal) CHECK(c == 1);
    for (int c : g.reduction) CHECK(c == 1);
  }
  SUBCASE("tie resolves to the lower index") {
    for (auto& v : alpha.normal.edges) v[4] = v[7] = 2.0;
    const auto g = derive_genotype(alpha, cfg.candidates);
    for (int c : g.normal) CHECK(c == 4);
  }
  SUBCASE("shift invariance") {
    Rng rng(3);
    for (auto& v : alpha.normal.edges)
      for (double& a : v) a = standard_normal(rng);
    const auto g0 = derive_genotype(alpha, cfg.candidates);
    for (auto& v : alpha.normal.edges) {
      const double c = 10.0 * standard_normal(rng);
      for (double& a : v) a += c;
    }
    CHECK(derive_genotype(alpha, cfg.candidates) == g0);
  }
}

TEST_CASE("shrink_opset") {
  const auto cfg = small_config();
  SUBCASE("argsort example") {
    const double a[] = {3, 1, 2, 0};
    CHECK(top_k_indices(a, 2) == std::vector<int>{0, 2});
    const double tie[] = {1, 1, 1};
    CHECK(top_k_indices(tie, 2) == std::vector<int>{0, 1});
  }
  SUBCASE("keep equal to size is the identity") {
    Rng rng(1);
    ArchAlphas alpha = ArchAlphas::zeros(cfg.candidates);
    for (auto& v : alpha.normal.edges)
      for (double& x : v) x = standard_normal(rng);
    const auto r = shrink_opset(alpha, cfg.candidates, 10, 6);
    CHECK(r.sets.normal == cfg.candidates.normal);
    CHECK(r.sets.reduction == cfg.candidates.reduction);
    CHECK(r.alpha == ArchAlphas::zeros(cfg.candidates));
  }
  SUBCASE("bad keep") {
    const ArchAlphas alpha = ArchAlphas::zeros(cfg.candidates);
    CHECK_THROWS_AS(shrink_opset(alpha, cfg.candidates, 0, 3), ConfigError);
    CHECK_THROWS_AS(shrink_opset(alpha, cfg.candidates, 11, 3), ConfigError);
  }
  SUBCASE("survivors dominate the dropped ops and keep their order") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      ArchAlphas alpha = ArchAlphas::zeros(cfg.candidates);
      for (auto* table : {&alpha.normal, &alpha.reduction})
        for (auto& v : table->edges)
          for (double& x : v) x = std::round(4.0 * standard_normal(rng)) / 2.0;  // frequent ties
      const int kn = 1 + int(uniform_index(rng, 10)), kr = 1 + int(uniform_index(rng, 6));
      const auto r = shrink_opset(alpha, cfg.candidates, kn, kr);
      for (CellType t : {CellType::normal, CellType::reduction}) {
        const auto& before = cfg.candidates.of(t);
        const auto& after = r.sets.of(t);
        for (std::size_t e = 0; e < before.size(); ++e) {
          CHECK(int(after[e].size()) == (t == CellType::normal ? kn : kr));
          std::vector<std::size_t> pos;
          for (OpKind k : after[e]) pos.push_back(std::size_t(std::find(before[e].begin(), before[e].end(), k) - before[e].begin()));
          CHECK(std::is_sorted(pos.begin(), pos.end()));
          const auto& a = alpha.of(t).edges[e];
          double min_kept = 1e300, max_dropped = -1e300;
          for (std::size_t o = 0; o < before[e].size(); ++o) {
            const bool kept = std::find(pos.begin(), pos.end(), o) != pos.end();
            if (kept) min_kept = std::min(min_kept, a[o]);
            else max_dropped = std::max(max_dropped, a[o]);
          }
          CHECK(min_kept >= max_dropped);
          CHECK(r.alpha.of(t).edges[e] == std::vector<double>(after[e].size(), 0.0));
        }
      }
    }
  }
}

TEST_CASE("genotype JSON round trip and errors") {
  const auto cfg = small_config();
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    Genotype g = random_genotype(cfg.candidates, rng, 0.2);
    const auto text = genotype_to_json(g, cfg.cell, cfg.candidates).dump();
    const Genotype back = parse_genotype(text, cfg.cell, cfg.candidates);
    // none and pruned both serialize as an absent edge
    for (CellType t : {CellType::normal, CellType::reduction}) {
      const auto a = resolve_ops(g.of(t), cfg.candidates.of(t));
      const auto b = resolve_ops(back.of(t), cfg.candidates.of(t));
      CHECK(a == b);
    }
    CHECK(count_parameters(back, cfg) == count_parameters(g, cfg));
  }

  try {
    parse_genotype("{\"normal\": [[0, 2, \"skip_connect\"]", cfg.cell, cfg.candidates);
    FAIL("expected a parse error");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
    CHECK(e.offset() <= 35);
  }
  CHECK_THROWS_AS(parse_genotype(R"({"normal": [[0, 2, "warp_drive"]], "reduction": []})", cfg.cell, cfg.candidates),
                  InvalidGenotype);
  CHECK_THROWS_AS(parse_genotype(R"({"normal": [[3, 2, "skip_connect"]], "reduction": []})", cfg.cell, cfg.candidates),
                  InvalidGenotype);
  CHECK_THROWS_AS(parse_genotype(R"({"normal": [[0, 2, "max_pool_3x3"]], "reduction": []})", cfg.cell, cfg.candidates),
                  InvalidGenotype);

  const auto dot = genotype_to_dot(uniform_choice(cfg.candidates, OpKind::conv_1x1, OpKind::none), CellType::normal,
                                   cfg.cell, cfg.candidates);
  CHECK(dot.rfind("digraph normal {", 0) == 0);
  CHECK(std::count(dot.begin(), dot.end(), '\n') > 14);
  CHECK(dot.find("conv_1x1") != std::string::npos);
}

TEST_CASE("macs metric counts convolutions") {
  const auto cfg = small_config();
  const auto none = uniform_choice(cfg.candidates, OpKind::none, OpKind::none);
  const auto conv = uniform_choice(cfg.candidates, OpKind::conv_3x3, OpKind::none);
  CHECK(count_macs(conv, cfg, 8, 8) > count_macs(none, cfg, 8, 8));
}
