#pragma once

// Serialization for every artifact the pipeline writes or reads: JSONL
// trajectory pools and preference records, JSON embeddings and policies,
// and CSV reports. Doubles round-trip exactly (shortest-representation
// JSON, %.17g CSV) and every file embeds the producing config hash, so
// identical configs reproduce identical bytes.

#include "rapl_lab/common.hpp"
#include "rapl_lab/dpo.hpp"
#include "rapl_lab/env.hpp"
#include "rapl_lab/eval.hpp"
#include "rapl_lab/policy.hpp"
#include "rapl_lab/representation.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rapl_lab::io {

using Json = nlohmann::ordered_json;

// FNV-1a, the stable fingerprint embedded in every artifact file.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= static_cast<std::uint64_t>(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string hash_hex(std::uint64_t hash) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(hash));
  return buffer;
}

inline std::string format_double(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

namespace detail {

inline Json matrix_rows(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_rows(const Json& rows, const char* what) {
  if (!rows.is_array() || rows.empty())
    throw ParseError(std::string(what) + ": expected a nonempty row array");
  Eigen::Index n_cols = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), n_cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Json& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n_cols)
      throw ParseError(std::string(what) + ": ragged rows");
    for (Eigen::Index c = 0; c < n_cols; ++c)
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace detail

// --- trajectories -----------------------------------------------------

// State rows are flat and task-typed: agent, theta, objects, goal,
// obstacle, d_safety, then (clutter only) the frozen cube anchors.
inline Json state_to_row(const env::EnvState& state) {
  Json row = Json::array();
  row.push_back(state.agent.x());
  row.push_back(state.agent.y());
  row.push_back(state.theta);
  for (const Eigen::Vector2d& object : state.objects) {
    row.push_back(object.x());
    row.push_back(object.y());
  }
  row.push_back(state.goal.x());
  row.push_back(state.goal.y());
  row.push_back(state.obstacle.x());
  row.push_back(state.obstacle.y());
  row.push_back(state.d_safety);
  for (const Eigen::Vector2d& cube : state.cube_init) {
    row.push_back(cube.x());
    row.push_back(cube.y());
  }
  return row;
}

inline env::EnvState state_from_row(const Json& row, env::TaskKind task,
                                    int embodiment_id) {
  std::size_t n_objects = task == env::TaskKind::Avoid    ? 1
                          : task == env::TaskKind::Group  ? 2
                                                          : 6;
  std::size_t n_cubes = task == env::TaskKind::Clutter ? 4 : 0;
  std::size_t expected = 3 + 2 * n_objects + 5 + 2 * n_cubes;
  if (!row.is_array() || row.size() != expected)
    throw ParseError("state row: wrong field count");

  env::EnvState state;
  state.task = task;
  state.embodiment_id = embodiment_id;
  std::size_t at = 0;
  auto next = [&row, &at] { return row[at++].get<double>(); };
  state.agent.x() = next();
  state.agent.y() = next();
  state.theta = next();
  state.objects.resize(n_objects);
  for (std::size_t k = 0; k < n_objects; ++k) {
    state.objects[k].x() = next();
    state.objects[k].y() = next();
  }
  state.goal.x() = next();
  state.goal.y() = next();
  state.obstacle.x() = next();
  state.obstacle.y() = next();
  state.d_safety = next();
  state.cube_init.resize(n_cubes);
  for (std::size_t k = 0; k < n_cubes; ++k) {
    state.cube_init[k].x() = next();
    state.cube_init[k].y() = next();
  }
  return state;
}

inline Json trajectory_to_json(const env::Trajectory& trajectory) {
  Json line;
  line["task"] = env::task_name(trajectory.task);
  line["embodiment"] = trajectory.embodiment;
  line["seed"] = trajectory.seed;
  Json states = Json::array();
  for (const env::EnvState& state : trajectory.states)
    states.push_back(state_to_row(state));
  line["states"] = std::move(states);
  Json observations = Json::array();
  for (const Eigen::VectorXd& obs : trajectory.observations) {
    Json row = Json::array();
    for (Eigen::Index i = 0; i < obs.size(); ++i) row.push_back(obs(i));
    observations.push_back(std::move(row));
  }
  line["observations"] = std::move(observations);
  line["gt_rewards"] = trajectory.gt_rewards;
  return line;
}

inline env::Trajectory trajectory_from_json(const Json& line) {
  env::Trajectory trajectory;
  trajectory.task = env::task_from_name(line.at("task").get<std::string>());
  trajectory.embodiment = line.at("embodiment").get<std::string>();
  trajectory.seed = line.at("seed").get<std::uint64_t>();
  int embodiment_id = env::embodiment_by_name(trajectory.embodiment).id;
  for (const Json& row : line.at("states"))
    trajectory.states.push_back(state_from_row(row, trajectory.task, embodiment_id));
  for (const Json& row : line.at("observations")) {
    Eigen::VectorXd obs(static_cast<Eigen::Index>(row.size()));
    for (Eigen::Index i = 0; i < obs.size(); ++i)
      obs(i) = row[static_cast<std::size_t>(i)].get<double>();
    trajectory.observations.push_back(std::move(obs));
  }
  trajectory.gt_rewards = line.at("gt_rewards").get<RewardTrace>();
  return trajectory;
}

// --- JSONL files ------------------------------------------------------

// First line is a meta record carrying the config hash; every following
// line is one payload record.
inline void write_jsonl(const std::string& path, const std::vector<Json>& records,
                        std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  Json meta;
  meta["config_hash"] = hash_hex(config_hash);
  out << meta.dump() << '\n';
  for (const Json& record : records) out << record.dump() << '\n';
  if (!out) throw IoError("short write: " + path);
}

struct JsonlFile {
  std::string config_hash;
  std::vector<Json> records;
};

inline JsonlFile read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  JsonlFile file;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json parsed;
    try {
      parsed = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    if (first) {
      if (!parsed.contains("config_hash"))
        throw ParseError(path + ": missing config_hash meta line");
      file.config_hash = parsed["config_hash"].get<std::string>();
      first = false;
    } else {
      file.records.push_back(std::move(parsed));
    }
  }
  if (first) throw ParseError(path + ": empty file");
  return file;
}

inline void write_pool(const std::string& path,
                       const std::vector<env::Trajectory>& trajectories,
                       std::uint64_t config_hash) {
  std::vector<Json> records;
  records.reserve(trajectories.size());
  for (const env::Trajectory& t : trajectories) records.push_back(trajectory_to_json(t));
  write_jsonl(path, records, config_hash);
}

inline std::vector<env::Trajectory> read_pool(const std::string& path) {
  JsonlFile file = read_jsonl(path);
  std::vector<env::Trajectory> trajectories;
  trajectories.reserve(file.records.size());
  for (const Json& record : file.records)
    trajectories.push_back(trajectory_from_json(record));
  return trajectories;
}

inline void write_triplets(const std::string& path,
                           const std::vector<repr::PreferenceTriplet>& triplets,
                           std::uint64_t config_hash) {
  std::vector<Json> records;
  records.reserve(triplets.size());
  for (const repr::PreferenceTriplet& t : triplets) {
    Json record;
    record["anchor"] = t.anchor_id;
    record["positive"] = t.positive_id;
    record["negative"] = t.negative_id;
    records.push_back(std::move(record));
  }
  write_jsonl(path, records, config_hash);
}

inline std::vector<repr::PreferenceTriplet> read_triplets(const std::string& path) {
  JsonlFile file = read_jsonl(path);
  std::vector<repr::PreferenceTriplet> triplets;
  for (const Json& record : file.records)
    triplets.push_back({record.at("anchor").get<int>(), record.at("positive").get<int>(),
                        record.at("negative").get<int>()});
  return triplets;
}

// Pool-id preference pairs (winner first), the RLHF training records.
inline void write_id_pairs(const std::string& path,
                           const std::vector<std::pair<int, int>>& pairs,
                           std::uint64_t config_hash) {
  std::vector<Json> records;
  records.reserve(pairs.size());
  for (const auto& [winner, loser] : pairs) {
    Json record;
    record["preferred"] = winner;
    record["dispreferred"] = loser;
    records.push_back(std::move(record));
  }
  write_jsonl(path, records, config_hash);
}

inline std::vector<std::pair<int, int>> read_id_pairs(const std::string& path) {
  JsonlFile file = read_jsonl(path);
  std::vector<std::pair<int, int>> pairs;
  for (const Json& record : file.records)
    pairs.emplace_back(record.at("preferred").get<int>(),
                       record.at("dispreferred").get<int>());
  return pairs;
}

// Action-sequence preference pairs, the DPO training records.
inline void write_action_pairs(const std::string& path,
                               const std::vector<dpo::PreferencePair>& pairs,
                               std::uint64_t config_hash) {
  std::vector<Json> records;
  records.reserve(pairs.size());
  for (const dpo::PreferencePair& pair : pairs) {
    Json record;
    record["context_seed"] = pair.context_seed;
    record["preferred"] = detail::matrix_rows(pair.preferred);
    record["dispreferred"] = detail::matrix_rows(pair.dispreferred);
    records.push_back(std::move(record));
  }
  write_jsonl(path, records, config_hash);
}

inline std::vector<dpo::PreferencePair> read_action_pairs(const std::string& path) {
  JsonlFile file = read_jsonl(path);
  std::vector<dpo::PreferencePair> pairs;
  for (const Json& record : file.records)
    pairs.push_back({record.at("context_seed").get<std::uint64_t>(),
                     detail::matrix_from_rows(record.at("preferred"), "preferred"),
                     detail::matrix_from_rows(record.at("dispreferred"), "dispreferred")});
  return pairs;
}

// --- JSON artifacts ---------------------------------------------------

inline void write_json_file(const std::string& path, const Json& document) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << document.dump(2) << '\n';
  if (!out) throw IoError("short write: " + path);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_embedding(const std::string& path, const repr::LinearEmbedding& embedding,
                            std::uint64_t config_hash) {
  Json document;
  document["config_hash"] = hash_hex(config_hash);
  document["n_e"] = embedding.weights.rows();
  document["n_b"] = embedding.weights.cols();
  Json weights = Json::array();
  for (Eigen::Index r = 0; r < embedding.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < embedding.weights.cols(); ++c)
      weights.push_back(embedding.weights(r, c));
  document["weights"] = std::move(weights);
  write_json_file(path, document);
}

inline repr::LinearEmbedding read_embedding(const std::string& path) {
  Json document = read_json_file(path);
  Eigen::Index n_e = document.at("n_e").get<Eigen::Index>();
  Eigen::Index n_b = document.at("n_b").get<Eigen::Index>();
  const Json& weights = document.at("weights");
  if (n_e < 1 || n_b < 1 || static_cast<Eigen::Index>(weights.size()) != n_e * n_b)
    throw ParseError(path + ": weight count does not match n_e * n_b");
  repr::LinearEmbedding embedding;
  embedding.weights.resize(n_e, n_b);
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < n_e; ++r)
    for (Eigen::Index c = 0; c < n_b; ++c)
      embedding.weights(r, c) = weights[at++].get<double>();
  return embedding;
}

inline void write_policy(const std::string& path,
                         const policy::ActionSequencePolicy& policy,
                         std::uint64_t config_hash) {
  Json document;
  document["config_hash"] = hash_hex(config_hash);
  document["mean"] = detail::matrix_rows(policy.mean);
  document["std"] = detail::matrix_rows(policy.std);
  write_json_file(path, document);
}

inline policy::ActionSequencePolicy read_policy(const std::string& path) {
  Json document = read_json_file(path);
  policy::ActionSequencePolicy policy;
  policy.mean = detail::matrix_from_rows(document.at("mean"), "mean");
  policy.std = detail::matrix_from_rows(document.at("std"), "std");
  if (policy.mean.rows() != policy.std.rows() || policy.mean.cols() != policy.std.cols())
    throw ParseError(path + ": mean/std shape mismatch");
  return policy;
}

// --- CSV reports ------------------------------------------------------

// Rows are preformatted cells; doubles go through format_double so the
// files are bit-stable across runs.
inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows,
                      std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  out << "# config_hash=" << hash_hex(config_hash) << '\n' << header << '\n';
  for (const std::vector<std::string>& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("short write: " + path);
}

inline void write_plan_csv(const std::string& path, const ot::TransportPlan& plan,
                           std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(plan.entries.rows() * plan.entries.cols()));
  for (Eigen::Index t = 0; t < plan.entries.rows(); ++t)
    for (Eigen::Index tp = 0; tp < plan.entries.cols(); ++tp)
      rows.push_back({std::to_string(t), std::to_string(tp),
                      format_double(plan.entries(t, tp))});
  write_csv(path, "t,tprime,mass", rows, config_hash);
}

inline void write_trace_csv(const std::string& path, const RewardTrace& trace,
                            std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.size());
  for (std::size_t t = 0; t < trace.size(); ++t)
    rows.push_back({std::to_string(t), format_double(trace[t])});
  write_csv(path, "t,reward", rows, config_hash);
}

inline void write_loss_csv(const std::string& path, const std::vector<double>& losses,
                           std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(losses.size());
  for (std::size_t epoch = 0; epoch < losses.size(); ++epoch)
    rows.push_back({std::to_string(epoch), format_double(losses[epoch])});
  write_csv(path, "epoch,loss", rows, config_hash);
}

inline void write_history_csv(const std::string& path, const std::vector<double>& history,
                              std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(history.size());
  for (std::size_t iter = 0; iter < history.size(); ++iter)
    rows.push_back({std::to_string(iter), format_double(history[iter])});
  write_csv(path, "iter,success_rate", rows, config_hash);
}

inline void write_correlation_csv(const std::string& path,
                                  const eval::CorrelationReport& report,
                                  std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  for (const std::string& method : report.methods) {
    int n = report.trajectory_count - report.skipped.at(method);
    rows.push_back({method, env::task_name(report.task),
                    format_double(report.mean_spearman.at(method)), std::to_string(n)});
  }
  write_csv(path, "method,task,mean_spearman,n", rows, config_hash);
}

inline void write_alignment_csv(const std::string& path, const std::string& task,
                                const std::vector<std::pair<std::string, double>>& scores,
                                std::uint64_t config_hash) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [method, score] : scores)
    rows.push_back({method, task, format_double(score)});
  write_csv(path, "method,task,score", rows, config_hash);
}

}  // namespace rapl_lab::io
