#include <memory>
#include <string>

#include "tracecal/error.hpp"
#include "tracecal/estimator.hpp"
#include "tracecal/fusion.hpp"
#include "tracecal/gnn.hpp"
#include "tracecal/graph.hpp"
#include "tracecal/probes.hpp"
#include "tracecal/text.hpp"

namespace tracecal {

using nlohmann::json;

Services Services::defaults() {
  Services s;
  s.nli = std::make_shared<HashNliScorer>();
  s.encoder = std::make_shared<HashingEncoder>();
  return s;
}

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::unique_ptr<Estimator> estimator_from_config(const json& config, const Services& services) {
  if (!config.is_object() || !config.contains("method") || !config["method"].is_string()) {
    throw ConfigError("estimator config needs a string 'method'");
  }
  if (!config.contains("hp") && !starts_with(config["method"].get<std::string>(), "ce")) {
    throw ConfigError("estimator config needs an 'hp' object");
  }
  const std::string method = config["method"].get<std::string>();
  try {
    if (method == "pik") return std::make_unique<PikEstimator>(config);
    if (method == "phsv" || method == "phsv-half") return std::make_unique<PhsvEstimator>(config);
    if (starts_with(method, "sfhs-") || starts_with(method, "tlcc-")) {
      return std::make_unique<SequenceHeadEstimator>(config);
    }
    if (starts_with(method, "gnn-")) return std::make_unique<GnnEstimator>(config, services);
    if (starts_with(method, "ce-")) return std::make_unique<CeEstimator>(config);
    if (starts_with(method, "latefusion-")) return std::make_unique<LateFusionEstimator>(config);
    if (method == "ettin") return std::make_unique<EttinEstimator>(config, services);
    if (method == "ettin-hga") return std::make_unique<HgaEstimator>(config, services);
  } catch (const json::exception& e) {
    throw ConfigError("estimator config for '" + method + "': " + e.what());
  }
  throw ConfigError("unknown estimator method '" + method + "'");
}

}  // namespace tracecal
