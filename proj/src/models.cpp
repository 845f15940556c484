#include "tram/models.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tram/rng.hpp"

namespace tram {

namespace {

void validate(const MLPConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.num_classes < 1) {
    throw std::invalid_argument("mlp config: dims must be >= 1");
  }
  for (std::size_t d : cfg.hidden_dims) {
    if (d < 1) throw std::invalid_argument("mlp config: dims must be >= 1");
  }
  if (cfg.init_scale < 0.0) {
    throw std::invalid_argument("mlp config: init_scale must be >= 0");
  }
  if (cfg.activation != "tanh" && cfg.activation != "relu") {
    throw std::invalid_argument("mlp config: unknown activation " + cfg.activation);
  }
}

}  // namespace

std::string layer_weight_name(std::size_t li) { return "l" + std::to_string(li) + ".w"; }
std::string layer_bias_name(std::size_t li) { return "l" + std::to_string(li) + ".b"; }

Tensor PredictiveDistribution::probs() const {
  Tensor p(log_probs.shape);
  for (std::size_t i = 0; i < p.numel(); ++i) p[i] = std::exp(log_probs[i]);
  return p;
}

ParameterSet init_mlp(const MLPConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  ParameterSet params;
  std::size_t in = cfg.input_dim;
  std::vector<std::size_t> widths = cfg.hidden_dims;
  widths.push_back(cfg.num_classes);
  for (std::size_t li = 0; li < widths.size(); ++li) {
    const std::size_t out = widths[li];
    Tensor w({in, out});
    for (std::size_t i = 0; i < w.numel(); ++i) {
      w[i] = rng.uniform(-cfg.init_scale, cfg.init_scale);
    }
    Tensor b({out});
    for (std::size_t i = 0; i < b.numel(); ++i) {
      b[i] = rng.uniform(-cfg.init_scale, cfg.init_scale);
    }
    params.insert(layer_weight_name(li), w);
    params.insert(layer_bias_name(li), b);
    in = out;
  }
  return params;
}

ForwardOut forward(const MLPConfig& cfg, const ParameterSet& params, const Tensor& x,
                   Tape* tape, Counters* counters) {
  validate(cfg);
  if (x.rank() != 2 || x.shape[1] != cfg.input_dim) {
    throw std::invalid_argument("forward: batch shape " + x.shape_str() + " does not match input_dim " +
                                std::to_string(cfg.input_dim));
  }
  if (counters != nullptr) counters->forwards += 1;

  const std::size_t layers = cfg.hidden_dims.size() + 1;
  Tensor h = x.detached();
  Tensor features = h;
  for (std::size_t li = 0; li < layers; ++li) {
    const std::string wn = layer_weight_name(li);
    const std::string bn = layer_bias_name(li);
    Tensor w = tape ? tape->leaf(params.at(wn), true, wn) : params.at(wn);
    Tensor b = tape ? tape->leaf(params.at(bn), true, bn) : params.at(bn);
    h = add(matmul(h, w), b);
    if (li + 1 < layers) {
      h = cfg.activation == "tanh" ? tanh(h) : relu(h);
      if (li + 2 == layers) features = h;
    }
  }
  // with no hidden layers the features are the raw inputs

  ForwardOut out;
  out.dist.log_probs = log_softmax(h);
  out.features.rows = features.detached();
  return out;
}

Tensor cross_entropy(const PredictiveDistribution& dist, const std::vector<std::size_t>& labels) {
  if (labels.size() != dist.batch()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(dist.batch()));
  }
  for (std::size_t y : labels) {
    if (y >= dist.classes()) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range for " +
                              std::to_string(dist.classes()) + " classes");
    }
  }
  return scalar_mul(mean(gather(dist.log_probs, labels)), -1.0);
}

double perplexity(double mean_nll) {
  if (!std::isfinite(mean_nll)) {
    throw std::invalid_argument("perplexity: mean NLL must be finite");
  }
  return std::exp(mean_nll);
}

double accuracy(const PredictiveDistribution& dist, const std::vector<std::size_t>& labels) {
  if (labels.size() != dist.batch()) {
    throw std::invalid_argument("accuracy: label count does not match batch");
  }
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  const std::size_t n = dist.classes();
  for (std::size_t r = 0; r < dist.batch(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (dist.log_probs[r * n + c] > dist.log_probs[r * n + best]) best = c;
    }
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

// The format is little-endian by definition; this code assumes a
// little-endian host (the only kind the project targets).
template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T take(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values.data()),
             static_cast<std::streamsize>(t.values.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = take<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = take<std::uint32_t>(is);
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndims = take<std::uint32_t>(is);
    std::vector<std::size_t> shape(ndims);
    for (auto& d : shape) d = static_cast<std::size_t>(take<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    params.insert(name, t);
  }
  return params;
}

}  // namespace tram
