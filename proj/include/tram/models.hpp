#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tram/autodiff.hpp"
#include "tram/params.hpp"
#include "tram/tensor.hpp"

namespace tram {

// Pass counters owned by a run. A counted forward is one batch pass through
// the model; a counted backward is one reverse sweep for a batch objective.
// Per-example sweeps that an operation performs internally on behalf of a
// single batch objective count as one pass, not one per example.
struct Counters {
  std::size_t forwards = 0;
  std::size_t backwards = 0;
};

struct MLPConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims = {32, 32};
  std::size_t num_classes = 4;
  std::string activation = "tanh";  // "tanh" | "relu"
  double init_scale = 0.5;
  std::uint64_t seed = 1;
};

// Row-normalized predictions: log_probs has shape (batch, classes) and every
// row exponentiates to a unit sum. log_probs keeps its tape identity so
// losses and divergence penalties built from it stay differentiable.
struct PredictiveDistribution {
  Tensor log_probs;

  std::size_t batch() const { return log_probs.rows(); }
  std::size_t classes() const { return log_probs.cols(); }
  Tensor probs() const;
};

// Penultimate-layer activations, one row per example. Plain data (detached).
struct FeatureMatrix {
  Tensor rows;
};

struct ForwardOut {
  PredictiveDistribution dist;
  FeatureMatrix features;
};

// Uniform(-init_scale, init_scale) draws from the seeded generator, in a
// fixed layer order. Same seed, same parameters, bit for bit.
ParameterSet init_mlp(const MLPConfig& cfg);

// Parameter names for layer `li` of the configured depth.
std::string layer_weight_name(std::size_t li);
std::string layer_bias_name(std::size_t li);

// One batch pass. When `tape` is set, parameters enter it as named
// requires-grad leaves and the returned log_probs can be differentiated;
// with tape == nullptr this is a pure evaluation. Increments
// counters->forwards by 1 when counters is set.
ForwardOut forward(const MLPConfig& cfg, const ParameterSet& params, const Tensor& x,
                   Tape* tape, Counters* counters);

// Mean negative log-likelihood of the labels under dist, as a (possibly
// taped) scalar tensor.
Tensor cross_entropy(const PredictiveDistribution& dist, const std::vector<std::size_t>& labels);

double perplexity(double mean_nll);

// Fraction of argmax matches; argmax ties break toward the lowest class.
double accuracy(const PredictiveDistribution& dist, const std::vector<std::size_t>& labels);

// Flat binary checkpoint: parameter name, dims, little-endian 64-bit float
// values. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace tram
