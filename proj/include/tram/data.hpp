#pragma once

// Synthetic multi-domain classification data.
//
// The train domain is a 2-D Gaussian mixture with one isotropic cluster per
// class, means equally spaced on a circle. Eval domains are generated from
// the same mixture geometry with a rotation, a mean translation, and an
// optional label-flip rate:
//
//   correlated domains     small rotations (up to max_correlated_rotation),
//                          no label flips; in-domain skill transfers.
//   anticorrelated domains large rotations (>= anticorrelated_rotation) plus
//                          a label-flip rate, so in-domain fitting degrades
//                          them.
//
// Generation is deterministic per seed. Each domain draws from its own child
// stream of the suite seed, and every example consumes the same number of
// raw draws regardless of flip outcome, so two suites differing only in flip
// rate share bitwise-identical inputs.

#include <cstdint>
#include <string>
#include <vector>

#include "tram/rng.hpp"
#include "tram/tensor.hpp"

namespace tram {

struct Dataset {
  Tensor x;                    // (n, input_dim)
  std::vector<std::size_t> y;  // n labels
  std::size_t size() const { return y.size(); }
};

struct Batch {
  Tensor x;
  std::vector<std::size_t> y;
};

struct ShiftParams {
  double max_correlated_rotation = 0.5235987755982988;  // pi/6
  double anticorrelated_rotation = 2.356194490192345;   // 3*pi/4
  double anticorrelated_flip_rate = 0.6;
  double mean_shift = 0.0;   // translation added to both coordinates, scaled per domain
  double class_radius = 2.0; // circle of cluster means
  double class_sigma = 0.6;  // isotropic cluster stddev; must be > 0
};

struct Domain {
  std::string name;
  std::string tag;  // "train" | "correlated" | "anticorrelated"
  Dataset data;
  double rotation = 0.0;
  double flip_rate = 0.0;
};

struct DomainSuite {
  std::size_t num_classes = 4;
  std::size_t input_dim = 2;
  std::uint64_t seed = 0;
  ShiftParams shifts;
  Domain train;        // tag "train"
  Dataset train_val;   // held-out split of the train distribution
  std::vector<Domain> evals;
};

// Builds train + validation + k_correlated + k_anticorrelated domains.
// Correlated domain i gets rotation max_correlated_rotation*(i+1)/k and a
// proportional share of mean_shift. Anticorrelated domains are spaced evenly
// from anticorrelated_rotation up to pi and all use anticorrelated_flip_rate.
DomainSuite make_domain_suite(std::uint64_t seed, std::size_t k_correlated,
                              std::size_t k_anticorrelated, const ShiftParams& shifts = {},
                              std::size_t n_train = 2048, std::size_t n_val = 512,
                              std::size_t n_eval = 512, std::size_t num_classes = 4);

// Uniform sample of batch_size examples with replacement.
Batch draw_batch(const Dataset& data, std::size_t batch_size, Rng& rng);

// JSON persistence; round trip is bit exact.
void save_suite(const std::string& path, const DomainSuite& suite);
DomainSuite load_suite(const std::string& path);

// First-order Markov chain over a small alphabet, emitted as a next-symbol
// classification dataset (one-hot current symbol -> next symbol). Exercises
// the perplexity metric path at desk scale.
struct MarkovTask {
  std::size_t alphabet = 16;
  Tensor transitions;  // (alphabet, alphabet), rows sum to 1
  Dataset data;        // x: (length, alphabet) one-hot, y: next symbol
};

MarkovTask make_markov_task(std::uint64_t seed, std::size_t alphabet = 16,
                            std::size_t length = 4096);

}  // namespace tram
