#pragma once

#include <string>

#include "asckit/config.hpp"
#include "asckit/evaluation.hpp"

namespace asckit::cli {

/// Entry point behind the `asckit` binary; returns the process exit code
/// (0 ok, 2 config error, 3 data error, 4 numeric failure).
int run(int argc, const char* const* argv);

// pieces shared with tests
eval::CnnBranchConfig cnn_branch_from_config(const Config& cfg, int n_classes);
eval::GbmBranchConfig gbm_branch_from_config(const Config& cfg, int n_classes);

void save_gbm_model(const eval::GbmModel& model, const std::string& path);
eval::GbmModel load_gbm_model(const std::string& path);

}  // namespace asckit::cli
