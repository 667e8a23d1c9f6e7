#include <CLI11.hpp>

#include <iostream>

#include <nlohmann/json.hpp>

#include "tracecal/error.hpp"
#include "tracecal/synthetic.hpp"

// Writes a planted-signal corpus for trying the pipeline without a model.
int main(int argc, char** argv) {
  CLI::App app{"Planted-signal corpus generator", "tracecal-synth"};
  tracecal::SyntheticOptions opts;
  std::string out;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--n", opts.n_records, "Records (traces per model)");
  app.add_option("--signal", opts.signal, "Planted signal strength (0 for none)");
  app.add_option("--hidden-dim", opts.hidden_dim, "Hidden state width");
  app.add_option("--seed", opts.seed, "Random seed");
  app.add_option("--models", opts.models, "Model ids");
  app.add_option("--datasets", opts.datasets, "Dataset names; the second half is held out");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto corpus = tracecal::make_synthetic_corpus(opts);
    tracecal::write_synthetic_corpus(out, corpus, opts);
    std::cout << "{\"traces\": " << corpus.raw_traces.size() << "}\n";
  } catch (const tracecal::Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
