#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"
#include "hbkmr/data.hpp"
#include "hbkmr/sampler.hpp"

namespace hbkmr::cli {

enum ExitCode { kOk = 0, kUserError = 1, kNumericalFailure = 2 };

// A fit directory reloaded: config.json, manifest.json, samples.csv plus the re-read input.
struct FitArtifact {
  std::string dir;
  RunConfig config;
  json manifest;
  Dataset data;
  VarianceDesign W;
  PosteriorSamples samples;
};

FitArtifact load_artifact(const std::string& dir);

// Standardized training data for a config.
Dataset load_training(const RunConfig& c);

void write_samples_csv(std::ostream& out, const PosteriorSamples& s);
PosteriorSamples read_samples_csv(const std::string& path, const Dataset& d, const VarianceDesign& W);

// Entry point shared by the executable and the end-to-end tests. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hbkmr::cli
