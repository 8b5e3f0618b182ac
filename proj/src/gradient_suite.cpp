#include "mvpd/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>

#include "mvpd/data.hpp"
#include "mvpd/grad_check.hpp"
#include "mvpd/losses.hpp"
#include "mvpd/model.hpp"

namespace mvpd {

namespace {

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }
  Tensor away_from_zero(Shape shape, double gap = 0.05) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = (rng_() % 2 ? 1.0 : -1.0) * uniform(gap, 1.0);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

using Builder = std::function<NodeId(Graph&, Draw&)>;

NodeId readout(Graph& g, Draw& d, NodeId x) { return g.sum(g.multiply(x, g.constant(d.tensor(g.shape(x))))); }

GradientCase run_case(std::string name, const Builder& build, std::uint64_t seed, std::size_t points) {
  GradientCase c;
  c.name = std::move(name);
  Draw draw(seed);
  const std::size_t max_attempts = 20 * points;
  while (c.points < points && c.attempts < max_attempts) {
    ++c.attempts;
    Graph g;
    const NodeId out = build(g, draw);
    const GradCheckResult r = finite_difference_check(g, {}, out, kGradientStep);
    if (!r.reliable) continue;
    ++c.points;
    if (r.max_relative_error >= c.max_relative_error) {
      c.max_relative_error = r.max_relative_error;
      c.worst_parameter = r.worst_parameter;
      c.worst_gradient = std::fabs(gradients(g, {}, out).at(r.worst_parameter)[r.worst_index]);
      c.worst_loss = std::fabs(g.value(out)[0]);
    }
  }
  if (c.points < points) c.max_relative_error = 1.0;  // could not find enough smooth points
  return c;
}

ModelConfig probe_config() {
  ModelConfig c;
  c.image_side = 4;
  c.patch_side = 2;
  c.embed_dim = 3;
  c.feature_dim = 3;
  c.head_hidden = 3;
  c.pawn_hidden = {4, 3, 2};
  return c;
}

struct ModelProbe {
  BatchGraph bg;
  NodeId labels;
};

ModelProbe model_probe(Draw& d, std::size_t batch) {
  const ModelConfig config = probe_config();
  Model m = init_model(config, Mode::Full, static_cast<std::uint64_t>(d.uniform(0.0, 1e9)));
  // Random biases keep relu inputs off exact zero.
  for (auto& [name, t] : m.params)
    if (t.rank() == 1) t = d.tensor(t.shape(), -0.5, 0.5);
  const std::size_t pixels = config.image_side * config.image_side;
  const Tensor it = d.tensor({batch, pixels}, 0.0, 1.0), il = d.tensor({batch, pixels}, 0.0, 1.0);
  Tensor labels({batch, 2});
  for (std::size_t i = 0; i < batch; ++i) {
    const double y = d.uniform(0.0, 1.0);
    labels.at(i, 0) = y;
    labels.at(i, 1) = 1.0 - y;
  }
  ForwardOptions opts{Fusion::Learned,
                      {std::string(param::kBackbone), std::string(param::kHeadT), std::string(param::kHeadL),
                       std::string(param::kPawn)}};
  ModelProbe p{build_forward(m, it, il, opts), {}};
  p.labels = p.bg.graph.input("labels", labels);
  return p;
}

}  // namespace

double GradientCase::roundoff_floor() const {
  if (worst_gradient == 0.0) return 0.0;
  return std::numeric_limits<double>::epsilon() * worst_loss / (kGradientStep * worst_gradient);
}

double GradientSuiteReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, c.max_relative_error);
  return worst;
}

bool GradientSuiteReport::passed(double tolerance) const {
  return !cases.empty() && max_relative_error() < tolerance;
}

GradientSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t points) {
  if (points == 0) throw std::invalid_argument("gradient suite needs at least one point");
  std::vector<std::pair<std::string, Builder>> builders = {
      {"add", [](Graph& g, Draw& d) {
         return readout(g, d, g.add(g.parameter("a", d.tensor({3, 4})), g.parameter("b", d.tensor({3, 4}))));
       }},
      {"multiply", [](Graph& g, Draw& d) {
         return readout(g, d, g.multiply(g.parameter("a", d.tensor({5})), g.parameter("b", d.tensor({5}))));
       }},
      {"matmul", [](Graph& g, Draw& d) {
         return readout(g, d, g.matmul(g.parameter("a", d.tensor({3, 4})), g.parameter("b", d.tensor({4, 2}))));
       }},
      {"affine", [](Graph& g, Draw& d) {
         return readout(g, d, g.affine(g.parameter("x", d.tensor({3, 4})), g.parameter("w", d.tensor({4, 2})),
                                       g.parameter("b", d.tensor({2}))));
       }},
      {"relu", [](Graph& g, Draw& d) { return readout(g, d, g.relu(g.parameter("x", d.away_from_zero({2, 3})))); }},
      {"softmax", [](Graph& g, Draw& d) {
         return readout(g, d, g.softmax(g.parameter("x", d.tensor({3, 4}, -2.0, 2.0))));
       }},
      {"log", [](Graph& g, Draw& d) { return readout(g, d, g.log(g.parameter("x", d.tensor({4}, 0.2, 2.0)))); }},
      {"log_clamped", [](Graph& g, Draw& d) {
         return readout(g, d, g.log(g.parameter("x", d.tensor({4}, 0.2, 2.0)), kLogClamp));
       }},
      {"sum", [](Graph& g, Draw& d) {
         NodeId x = g.parameter("x", d.tensor({2, 3}));
         return g.multiply(g.sum(x), g.sum(x));
       }},
      {"mean", [](Graph& g, Draw& d) {
         NodeId x = g.parameter("x", d.tensor({2, 3}));
         return g.multiply(g.mean(x), g.mean(x));
       }},
      {"abs", [](Graph& g, Draw& d) { return readout(g, d, g.abs(g.parameter("x", d.away_from_zero({3, 2})))); }},
      {"concat_rows", [](Graph& g, Draw& d) {
         return readout(g, d, g.concat(g.parameter("a", d.tensor({2, 3})), g.parameter("b", d.tensor({1, 3})), 0));
       }},
      {"concat_cols", [](Graph& g, Draw& d) {
         return readout(g, d, g.concat(g.parameter("a", d.tensor({2, 3})), g.parameter("b", d.tensor({2, 2})), 1));
       }},
      {"scale", [](Graph& g, Draw& d) {
         return readout(g, d, g.scale(g.parameter("x", d.tensor({4})), d.uniform(-3.0, 3.0)));
       }},
      {"stop_gradient", [](Graph& g, Draw& d) {
         NodeId x = g.parameter("x", d.tensor({3}));
         NodeId y = g.parameter("y", d.tensor({3}));
         return g.add(readout(g, d, g.multiply(x, y)), g.sum(g.multiply(g.stop_gradient(g.constant(d.tensor({3}))), y)));
       }},
      {"fused_cross_entropy", [](Graph& g, Draw& d) {
         ModelProbe p = model_probe(d, 4);
         g = std::move(p.bg.graph);
         return cross_entropy_node(g, p.bg.fused, p.labels);
       }},
      {"total_loss_vacl", [](Graph& g, Draw& d) {
         ModelProbe p = model_probe(d, 4);
         g = std::move(p.bg.graph);
         NodeId ce = cross_entropy_node(g, p.bg.fused, p.labels);
         NodeId vac = vacl_node(g, *p.bg.f_t, *p.bg.f_l, p.bg.weights, 1e-3);
         return total_loss_node(g, ce, vac, 0.01);
       }},
  };
  GradientSuiteReport report;
  std::uint64_t stream = 1;
  for (const auto& [name, build] : builders) report.cases.push_back(run_case(name, build, mix_seed(seed, stream++), points));
  return report;
}

}  // namespace mvpd
