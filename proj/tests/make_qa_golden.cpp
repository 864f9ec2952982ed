// Writes the golden vote vectors for the tiny QA instance from the
// straight-line reference. Run once; the output is checked in under
// tests/fixtures.

#include <fstream>
#include <iostream>

#include "qa_reference.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_qa_golden <out.json>\n";
    return 2;
  }
  const auto spec = oracle::golden_spec();
  const auto example = fusionkit::qa::generate_dataset(spec).train.at(0);
  nlohmann::json out;
  for (const auto& [name, config] : oracle::golden_models()) {
    fusionkit::qa::QAModel model(config, spec);
    out[name] = oracle::QAReference(model).votes(example);
  }
  std::ofstream(argv[1]) << out.dump(2) << '\n';
  return 0;
}
