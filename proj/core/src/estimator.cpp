#include "tracecal/estimator.hpp"

#include <cmath>
#include <fstream>

#include "tracecal/array_store.hpp"
#include "tracecal/error.hpp"

namespace tracecal {

using nlohmann::json;

std::vector<double> Estimator::score_all(std::span<const TraceExample* const> examples) const {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const TraceExample* ex : examples) out.push_back(score(*ex));
  return out;
}

double NeuralEstimator::score(const TraceExample& ex) const {
  nn::NoGradGuard guard;
  Rng unused(0);
  const double z = forward(ex, false, unused).item();
  return 1.0 / (1.0 + std::exp(-z));
}

namespace {

class TraceUnits final : public TrainingUnits {
 public:
  TraceUnits(const NeuralEstimator& model, std::span<const TraceExample* const> train)
      : model_(model), train_(train.begin(), train.end()) {}
  std::size_t size() const override { return train_.size(); }
  nn::Var batch_loss(std::span<const std::size_t> batch, Rng& rng) const override {
    std::vector<nn::Var> logits;
    std::vector<double> targets;
    for (std::size_t i : batch) {
      logits.push_back(model_.forward(*train_[i], true, rng));
      targets.push_back(train_[i]->label);
    }
    return nn::bce_with_logits(nn::concat_rows(logits), targets);
  }

 private:
  const NeuralEstimator& model_;
  std::vector<const TraceExample*> train_;
};

}  // namespace

std::unique_ptr<TrainingUnits> NeuralEstimator::make_units(
    std::span<const TraceExample* const> train) const {
  return std::make_unique<TraceUnits>(*this, train);
}

Standardizer Standardizer::fit(std::span<const nn::Matrix* const> blocks) {
  Standardizer s;
  Eigen::Index cols = -1;
  double n = 0;
  Eigen::ArrayXd sum, sq;
  for (const nn::Matrix* m : blocks) {
    if (m->rows() == 0) continue;
    if (cols < 0) {
      cols = m->cols();
      sum = Eigen::ArrayXd::Zero(cols);
      sq = Eigen::ArrayXd::Zero(cols);
    } else if (m->cols() != cols) {
      throw InvalidInput("standardizer: inconsistent column count");
    }
    sum += m->colwise().sum().transpose().array();
    n += static_cast<double>(m->rows());
  }
  if (cols < 0) throw InvalidInput("standardizer: no rows");
  const Eigen::ArrayXd mean = sum / n;
  for (const nn::Matrix* m : blocks) {
    if (m->rows() == 0) continue;
    const nn::Matrix centered = m->rowwise() - mean.transpose().matrix();
    sq += centered.array().square().colwise().sum().transpose();
  }
  for (Eigen::Index c = 0; c < cols; ++c) {
    const double sd = std::sqrt(sq(c) / n);
    s.mean.push_back(mean(c));
    s.inv_std.push_back(sd > 1e-12 ? 1.0 / sd : 1.0);
  }
  return s;
}

nn::Matrix Standardizer::apply(const nn::Matrix& m) const {
  if (empty()) return m;
  if (static_cast<std::size_t>(m.cols()) != mean.size()) {
    throw InvalidInput("standardizer: expected " + std::to_string(mean.size()) + " columns");
  }
  nn::Matrix out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    out.col(c) = (out.col(c).array() - mean[k]) * inv_std[k];
  }
  return out;
}

json Standardizer::to_json() const { return {{"mean", mean}, {"inv_std", inv_std}}; }

Standardizer Standardizer::from_json(const json& j) {
  Standardizer s;
  if (j.is_null()) return s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.inv_std = j.at("inv_std").get<std::vector<double>>();
  if (s.mean.size() != s.inv_std.size()) throw SchemaError("standardizer size mismatch");
  return s;
}

namespace {

const json& hp_field(const json& hp, const char* key) {
  if (!hp.is_object() || !hp.contains(key)) {
    throw ConfigError(std::string("missing hyperparameter '") + key + "'");
  }
  return hp.at(key);
}

}  // namespace

int hp_int(const json& hp, const char* key) {
  const json& v = hp_field(hp, key);
  if (!v.is_number_integer()) throw ConfigError(std::string("hyperparameter '") + key + "' must be an integer");
  return v.get<int>();
}

double hp_double(const json& hp, const char* key) {
  const json& v = hp_field(hp, key);
  if (!v.is_number()) throw ConfigError(std::string("hyperparameter '") + key + "' must be a number");
  return v.get<double>();
}

bool hp_bool(const json& hp, const char* key) {
  const json& v = hp_field(hp, key);
  if (!v.is_boolean()) throw ConfigError(std::string("hyperparameter '") + key + "' must be a boolean");
  return v.get<bool>();
}

std::string hp_string(const json& hp, const char* key) {
  const json& v = hp_field(hp, key);
  if (!v.is_string()) throw ConfigError(std::string("hyperparameter '") + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<int> hp_widths(const json& hp, const char* key) {
  const json& v = hp_field(hp, key);
  std::vector<int> out;
  if (v.is_number_integer()) {
    out.push_back(v.get<int>());
  } else if (v.is_array()) {
    for (const auto& w : v) {
      if (!w.is_number_integer() || w.get<int>() < 0) {
        throw ConfigError(std::string("hyperparameter '") + key + "' must list non-negative widths");
      }
      out.push_back(w.get<int>());
    }
  } else {
    throw ConfigError(std::string("hyperparameter '") + key + "' must be a width list");
  }
  if (out.size() > 1) {
    for (int w : out) {
      if (w == 0) throw ConfigError(std::string("hyperparameter '") + key + "': 0 only as a lone entry");
    }
  }
  return out;
}

void save_checkpoint(const Estimator& est, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json meta = {{"format", "tracecal-estimator"},
               {"version", 1},
               {"method", est.method()},
               {"threshold", est.threshold()},
               {"config", est.config()}};
  if (const nn::ParameterList* params = est.parameters()) {
    ArrayStoreWriter w(dir / "weights");
    std::size_t k = 0;
    for (const nn::Var& v : params->vars()) {
      const nn::Matrix& m = v.value();
      // Row-major flattening.
      std::vector<double> flat(static_cast<std::size_t>(m.size()));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
        }
      }
      char name[32];
      std::snprintf(name, sizeof name, "param_%04zu", k++);
      w.add(name, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
            std::span<const double>(flat));
    }
    w.set_meta({{"parameter_count", params->count()}, {"checksum", params->checksum()}});
    w.finish();
    meta["parameters"] = k;
  }
  std::ofstream out(dir / "estimator.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "estimator.json").string());
  out << meta.dump(2) << "\n";
}

std::unique_ptr<Estimator> load_checkpoint(const std::filesystem::path& dir,
                                           const Services& services) {
  const auto path = dir / "estimator.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception&) {
    throw ParseError(path.string() + ": malformed JSON");
  }
  if (meta.value("format", "") != "tracecal-estimator") {
    throw SchemaError(path.string() + ": not an estimator checkpoint");
  }
  auto est = estimator_from_config(meta.at("config"), services);
  est->set_threshold(meta.at("threshold").get<double>());
  if (const nn::ParameterList* params = est->parameters()) {
    ArrayStoreReader r(dir / "weights");
    std::size_t k = 0;
    for (nn::Var v : params->vars()) {
      char name[32];
      std::snprintf(name, sizeof name, "param_%04zu", k++);
      if (!r.has(name)) throw SchemaError("checkpoint missing " + std::string(name));
      const auto flat = r.read_f64(name);
      nn::Matrix m(v.rows(), v.cols());
      if (static_cast<Eigen::Index>(flat.size()) != m.size()) {
        throw SchemaError(std::string("checkpoint tensor ") + name + " has the wrong shape");
      }
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = flat[static_cast<std::size_t>(i * m.cols() + j)];
      }
      v.mutable_value() = std::move(m);
    }
  }
  return est;
}

}  // namespace tracecal
