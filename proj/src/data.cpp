#include "tram/data.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace tram {

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate(const ShiftParams& shifts, std::size_t num_classes) {
  if (shifts.class_sigma <= 0.0) {
    throw std::invalid_argument("make_domain_suite: class_sigma must be > 0");
  }
  if (shifts.anticorrelated_flip_rate < 0.0 || shifts.anticorrelated_flip_rate > 1.0) {
    throw std::invalid_argument("make_domain_suite: flip rate must lie in [0, 1]");
  }
  if (num_classes < 2) {
    throw std::invalid_argument("make_domain_suite: need at least 2 classes");
  }
}

// One mixture sample per example: class index, two normals, then a flip
// decision. The flip draws (u and the replacement index) happen whether or
// not the flip applies, so streams stay aligned across flip rates.
Dataset sample_mixture(Rng& rng, std::size_t n, std::size_t num_classes, double radius,
                       double sigma, double rotation, double shift, double flip_rate) {
  Dataset out;
  out.x = Tensor({n, 2});
  out.y.resize(n);
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t label = rng.index(num_classes);
    const double ang = 2.0 * kPi * static_cast<double>(label) / static_cast<double>(num_classes);
    const double px = radius * std::cos(ang) + sigma * rng.normal();
    const double py = radius * std::sin(ang) + sigma * rng.normal();
    const double u = rng.uniform();
    const std::size_t repl = rng.index(num_classes - 1);
    if (u < flip_rate) label = repl >= label ? repl + 1 : repl;
    out.x.at(i, 0) = c * px - s * py + shift;
    out.x.at(i, 1) = s * px + c * py + shift;
    out.y[i] = label;
  }
  return out;
}

nlohmann::ordered_json dataset_to_json(const Dataset& d) {
  nlohmann::ordered_json j;
  j["shape"] = d.x.shape;
  j["x"] = d.x.values;
  j["y"] = d.y;
  return j;
}

Dataset dataset_from_json(const nlohmann::ordered_json& j) {
  Dataset d;
  d.x = Tensor(j.at("shape").get<std::vector<std::size_t>>(),
               j.at("x").get<std::vector<double>>());
  d.y = j.at("y").get<std::vector<std::size_t>>();
  return d;
}

nlohmann::ordered_json domain_to_json(const Domain& d) {
  nlohmann::ordered_json j;
  j["name"] = d.name;
  j["tag"] = d.tag;
  j["rotation"] = d.rotation;
  j["flip_rate"] = d.flip_rate;
  j["data"] = dataset_to_json(d.data);
  return j;
}

Domain domain_from_json(const nlohmann::ordered_json& j) {
  Domain d;
  d.name = j.at("name").get<std::string>();
  d.tag = j.at("tag").get<std::string>();
  d.rotation = j.at("rotation").get<double>();
  d.flip_rate = j.at("flip_rate").get<double>();
  d.data = dataset_from_json(j.at("data"));
  return d;
}

}  // namespace

DomainSuite make_domain_suite(std::uint64_t seed, std::size_t k_correlated,
                              std::size_t k_anticorrelated, const ShiftParams& shifts,
                              std::size_t n_train, std::size_t n_val, std::size_t n_eval,
                              std::size_t num_classes) {
  validate(shifts, num_classes);
  if (k_correlated + k_anticorrelated < 1) {
    throw std::invalid_argument("make_domain_suite: need at least one eval domain");
  }
  if (n_train < 1 || n_val < 1 || n_eval < 1) {
    throw std::invalid_argument("make_domain_suite: dataset sizes must be >= 1");
  }

  DomainSuite suite;
  suite.num_classes = num_classes;
  suite.input_dim = 2;
  suite.seed = seed;
  suite.shifts = shifts;

  Rng root(seed);
  {
    Rng r = root.child("train");
    suite.train = {"train", "train",
                   sample_mixture(r, n_train, num_classes, shifts.class_radius,
                                  shifts.class_sigma, 0.0, 0.0, 0.0),
                   0.0, 0.0};
  }
  {
    Rng r = root.child("train_val");
    suite.train_val = sample_mixture(r, n_val, num_classes, shifts.class_radius,
                                     shifts.class_sigma, 0.0, 0.0, 0.0);
  }
  for (std::size_t i = 0; i < k_correlated; ++i) {
    const double frac = static_cast<double>(i + 1) / static_cast<double>(k_correlated);
    const double rot = shifts.max_correlated_rotation * frac;
    const double shift = shifts.mean_shift * frac;
    const std::string name = "corr" + std::to_string(i);
    Rng r = root.child(name);
    suite.evals.push_back({name, "correlated",
                           sample_mixture(r, n_eval, num_classes, shifts.class_radius,
                                          shifts.class_sigma, rot, shift, 0.0),
                           rot, 0.0});
  }
  for (std::size_t i = 0; i < k_anticorrelated; ++i) {
    const double rot =
        k_anticorrelated == 1
            ? shifts.anticorrelated_rotation
            : shifts.anticorrelated_rotation +
                  (kPi - shifts.anticorrelated_rotation) * static_cast<double>(i) /
                      static_cast<double>(k_anticorrelated - 1);
    const std::string name = "anti" + std::to_string(i);
    Rng r = root.child(name);
    suite.evals.push_back({name, "anticorrelated",
                           sample_mixture(r, n_eval, num_classes, shifts.class_radius,
                                          shifts.class_sigma, rot, shifts.mean_shift,
                                          shifts.anticorrelated_flip_rate),
                           rot, shifts.anticorrelated_flip_rate});
  }
  return suite;
}

Batch draw_batch(const Dataset& data, std::size_t batch_size, Rng& rng) {
  if (data.size() == 0) throw std::invalid_argument("draw_batch: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("draw_batch: batch_size must be >= 1");
  const std::size_t dim = data.x.cols();
  Batch b;
  b.x = Tensor({batch_size, dim});
  b.y.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t k = rng.index(data.size());
    for (std::size_t c = 0; c < dim; ++c) b.x.at(i, c) = data.x.at(k, c);
    b.y[i] = data.y[k];
  }
  return b;
}

void save_suite(const std::string& path, const DomainSuite& suite) {
  nlohmann::ordered_json j;
  j["num_classes"] = suite.num_classes;
  j["input_dim"] = suite.input_dim;
  j["seed"] = suite.seed;
  j["shifts"] = {{"max_correlated_rotation", suite.shifts.max_correlated_rotation},
                 {"anticorrelated_rotation", suite.shifts.anticorrelated_rotation},
                 {"anticorrelated_flip_rate", suite.shifts.anticorrelated_flip_rate},
                 {"mean_shift", suite.shifts.mean_shift},
                 {"class_radius", suite.shifts.class_radius},
                 {"class_sigma", suite.shifts.class_sigma}};
  j["train"] = domain_to_json(suite.train);
  j["train_val"] = dataset_to_json(suite.train_val);
  j["evals"] = nlohmann::ordered_json::array();
  for (const Domain& d : suite.evals) j["evals"].push_back(domain_to_json(d));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_suite: cannot open " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("save_suite: write failed for " + path);
}

DomainSuite load_suite(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_suite: cannot open " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(in);
  DomainSuite suite;
  suite.num_classes = j.at("num_classes").get<std::size_t>();
  suite.input_dim = j.at("input_dim").get<std::size_t>();
  suite.seed = j.at("seed").get<std::uint64_t>();
  const auto& s = j.at("shifts");
  suite.shifts.max_correlated_rotation = s.at("max_correlated_rotation").get<double>();
  suite.shifts.anticorrelated_rotation = s.at("anticorrelated_rotation").get<double>();
  suite.shifts.anticorrelated_flip_rate = s.at("anticorrelated_flip_rate").get<double>();
  suite.shifts.mean_shift = s.at("mean_shift").get<double>();
  suite.shifts.class_radius = s.at("class_radius").get<double>();
  suite.shifts.class_sigma = s.at("class_sigma").get<double>();
  suite.train = domain_from_json(j.at("train"));
  suite.train_val = dataset_from_json(j.at("train_val"));
  for (const auto& e : j.at("evals")) suite.evals.push_back(domain_from_json(e));
  return suite;
}

MarkovTask make_markov_task(std::uint64_t seed, std::size_t alphabet, std::size_t length) {
  if (alphabet < 2) throw std::invalid_argument("make_markov_task: alphabet must be >= 2");
  if (length < 1) throw std::invalid_argument("make_markov_task: length must be >= 1");
  Rng root(seed);

  MarkovTask task;
  task.alphabet = alphabet;
  task.transitions = Tensor({alphabet, alphabet});
  {
    Rng r = root.child("transitions");
    for (std::size_t i = 0; i < alphabet; ++i) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < alphabet; ++c) {
        const double w = r.uniform(0.05, 1.0);
        task.transitions.at(i, c) = w;
        row_sum += w;
      }
      for (std::size_t c = 0; c < alphabet; ++c) task.transitions.at(i, c) /= row_sum;
    }
  }

  task.data.x = Tensor({length, alphabet});
  task.data.y.resize(length);
  Rng r = root.child("chain");
  std::size_t state = r.index(alphabet);
  for (std::size_t t = 0; t < length; ++t) {
    task.data.x.at(t, state) = 1.0;
    const double u = r.uniform();
    double cdf = 0.0;
    std::size_t next = alphabet - 1;
    for (std::size_t c = 0; c < alphabet; ++c) {
      cdf += task.transitions.at(state, c);
      if (u < cdf) {
        next = c;
        break;
      }
    }
    task.data.y[t] = next;
    state = next;
  }
  return task;
}

}  // namespace tram
