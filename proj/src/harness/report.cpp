#include "lact/harness/report.hpp"

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace lact::harness {

namespace {

std::string csv_escape(const std::string& s) {
  std::string out;
  for (char c : s) out += (c == ',' || c == '\n') ? ';' : c;
  return out;
}

json ci_json(const CI& ci) { return json{{"mean", ci.mean}, {"lo", ci.lo}, {"hi", ci.hi}}; }

}  // namespace

void write_rollout_records(const std::string& path, const std::vector<RolloutResult>& rollouts) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("report: cannot write " + path);
  f << "index,task_id,success,score,length,reason\n";
  for (size_t i = 0; i < rollouts.size(); ++i) {
    const auto& r = rollouts[i];
    f << i << "," << csv_escape(r.task_id) << "," << (r.success ? 1 : 0) << "," << r.score << ","
      << r.episode_length << "," << csv_escape(r.failure_reason) << "\n";
  }
}

std::vector<StoredRollout> read_rollout_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("report: cannot read " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<StoredRollout> out;
  while (std::getline(f, line)) {
    StoredRollout r;
    std::istringstream is(line);
    std::string field;
    std::getline(is, field, ',');  // index
    std::getline(is, r.task_id, ',');
    std::getline(is, field, ',');
    r.success = std::stoi(field);
    std::getline(is, field, ',');
    r.score = std::stoi(field);
    std::getline(is, field, ',');
    r.length = std::stoi(field);
    std::getline(is, r.reason);
    out.push_back(std::move(r));
  }
  return out;
}

json summarize_records(const std::vector<StoredRollout>& records, int resamples) {
  std::vector<double> succ, score;
  for (const auto& r : records) {
    succ.push_back(r.success);
    score.push_back(r.score);
  }
  json j;
  j["n"] = records.size();
  j["success"] = ci_json(bootstrap_ci(succ, resamples));
  j["score"] = ci_json(bootstrap_ci(score, resamples));
  return j;
}

ReportWriter::ReportWriter(std::string dir, std::string experiment_name, json config_echo)
    : dir_(std::move(dir)), name_(std::move(experiment_name)), config_echo_(std::move(config_echo)) {
  fs::create_directories(dir_);
  notes_ = json::object();
}

void ReportWriter::add_arm(const std::string& arm, const std::string& suite, const SuiteResult& result) {
  write_rollout_records(dir_ + "/rollouts_" + arm + "_" + suite + ".csv", result.rollouts);
  arms_.emplace_back(arm, suite);
}

void ReportWriter::note(const std::string& key, json value) { notes_[key] = std::move(value); }

json ReportWriter::finalize() {
  {
    json cfg;
    cfg["experiment"] = name_;
    cfg["config"] = config_echo_;
    cfg["notes"] = notes_;
    json arm_list = json::array();
    for (const auto& [arm, suite] : arms_) arm_list.push_back({{"arm", arm}, {"suite", suite}});
    cfg["arms"] = arm_list;
    std::ofstream f(dir_ + "/experiment.json", std::ios::trunc);
    f << cfg.dump(2) << "\n";
  }
  json summary = generate_summary(dir_);
  return summary;
}

json generate_summary(const std::string& dir) {
  std::ifstream ef(dir + "/experiment.json");
  if (!ef) throw std::runtime_error("report: missing experiment.json in " + dir);
  json meta = json::parse(ef);

  json summary;
  summary["experiment"] = meta["experiment"];
  summary["config"] = meta["config"];
  summary["notes"] = meta["notes"];
  json arms = json::object();
  for (const auto& as : meta["arms"]) {
    const std::string arm = as["arm"], suite = as["suite"];
    const auto records = read_rollout_records(dir + "/rollouts_" + arm + "_" + suite + ".csv");
    arms[arm][suite] = summarize_records(records);
  }
  summary["results"] = arms;

  std::ofstream sf(dir + "/summary.json", std::ios::trunc);
  sf << summary.dump(2) << "\n";

  std::ofstream cf(dir + "/results.csv", std::ios::trunc);
  cf << "arm,suite,n,success_mean,success_lo,success_hi,score_mean,score_lo,score_hi\n";
  for (const auto& as : meta["arms"]) {
    const std::string arm = as["arm"], suite = as["suite"];
    const auto& r = arms[arm][suite];
    cf << arm << "," << suite << "," << r["n"] << "," << r["success"]["mean"] << ","
       << r["success"]["lo"] << "," << r["success"]["hi"] << "," << r["score"]["mean"] << ","
       << r["score"]["lo"] << "," << r["score"]["hi"] << "\n";
  }
  return summary;
}

}  // namespace lact::harness
