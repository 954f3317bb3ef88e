#pragma once

#include <json.hpp>

#include "lact/harness/bootstrap.hpp"
#include "lact/harness/rollout.hpp"

namespace lact::harness {

// Raw per-rollout records are the ground truth; summaries are pure functions
// of the stored records, so regenerating a report is bit-identical.
struct StoredRollout {
  std::string task_id;
  int success = 0;
  int score = 0;
  int length = 0;
  std::string reason;
};

void write_rollout_records(const std::string& path, const std::vector<RolloutResult>& rollouts);
std::vector<StoredRollout> read_rollout_records(const std::string& path);

nlohmann::json summarize_records(const std::vector<StoredRollout>& records, int resamples = 1000);

// Accumulates experiment arms under <dir>, storing records as it goes;
// finalize() derives summary.json and results.csv purely from the stored
// records.
class ReportWriter {
 public:
  ReportWriter(std::string dir, std::string experiment_name, nlohmann::json config_echo);

  void add_arm(const std::string& arm, const std::string& suite, const SuiteResult& result);
  void note(const std::string& key, nlohmann::json value);

  nlohmann::json finalize();

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_, name_;
  nlohmann::json config_echo_, notes_;
  std::vector<std::pair<std::string, std::string>> arms_;  // (arm, suite)
};

// Pure regeneration of summary.json content from stored records + notes.
nlohmann::json generate_summary(const std::string& dir);

}  // namespace lact::harness
