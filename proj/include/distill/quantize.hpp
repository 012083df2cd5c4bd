#pragma once

// Quantization of filtered pairs into the five control groups, and the
// control-code training format.

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "distill/error.hpp"
#include "distill/filters.hpp"
#include "distill/textmetrics.hpp"
#include "json.hpp"

namespace distill {

enum class GroupKind { short_abstractive, short_extractive, long_abstractive, long_extractive, paraphrase };

inline constexpr std::array<GroupKind, 5> kAllGroups = {GroupKind::short_abstractive, GroupKind::short_extractive,
                                                        GroupKind::long_abstractive, GroupKind::long_extractive,
                                                        GroupKind::paraphrase};

inline std::string_view to_string(GroupKind g) {
  switch (g) {
    case GroupKind::short_abstractive: return "short_abstractive";
    case GroupKind::short_extractive: return "short_extractive";
    case GroupKind::long_abstractive: return "long_abstractive";
    case GroupKind::long_extractive: return "long_extractive";
    case GroupKind::paraphrase: return "paraphrase";
  }
  return "paraphrase";
}

inline GroupKind parse_group_kind(std::string_view s) {
  for (auto g : kAllGroups) {
    if (to_string(g) == s) return g;
  }
  throw InputError("unknown group '" + std::string(s) + "'");
}

/// Instruction prepended to x for each group.
inline std::string_view control_code(GroupKind g) {
  switch (g) {
    case GroupKind::short_abstractive: return "Generate a short, abstractive summary of the given sentence:";
    case GroupKind::short_extractive: return "Generate a short, extractive summary of the given sentence:";
    case GroupKind::long_abstractive: return "Generate a long, abstractive summary of the given sentence:";
    case GroupKind::long_extractive: return "Generate a long, extractive summary of the given sentence:";
    case GroupKind::paraphrase: return "Generate a paraphrase of the given sentence:";
  }
  return "";
}

inline std::optional<GroupKind> group_for_control_code(std::string_view code) {
  for (auto g : kAllGroups) {
    if (control_code(g) == code) return g;
  }
  return std::nullopt;
}

inline TaskMode task_mode(GroupKind g) {
  return g == GroupKind::paraphrase ? TaskMode::paraphrase : TaskMode::summarization;
}

struct PairGroup {
  GroupKind kind = GroupKind::paraphrase;
  std::string_view control_code() const { return distill::control_code(kind); }
  friend bool operator==(const PairGroup&, const PairGroup&) = default;
};

/// Length and surface similarity of a pair: comp = |y|/|x| and
/// sim = max(normalized density, ROUGE-L). The raw density rides along for
/// reporting.
struct CompSim {
  double comp = 0.0;
  double sim = 0.0;
  double rouge_l = 0.0;
  double density = 0.0;
  double density_norm = 0.0;
};

inline CompSim comp_sim(const TokenSeq& x, const TokenSeq& y) {
  if (x.empty() || y.empty()) throw InputError("comp_sim: empty side");
  CompSim c;
  c.comp = compression_ratio(x, y);
  c.rouge_l = rouge_l(x, y);
  c.density = density(x, y);
  c.density_norm = normalized_density(x, y);
  c.sim = std::max(c.density_norm, c.rouge_l);
  return c;
}

inline constexpr double kShortLongBoundary = 0.5;
inline constexpr double kSummaryCompCap = 0.8;
inline constexpr double kParaphraseCompCap = 1.5;
inline constexpr double kSimBoundary = 0.6;

/// Five-way grouping by (comp, sim). The paraphrase group admits sim = 0.6
/// so that every pair passing the abstractiveness filter can be grouped.
inline std::optional<GroupKind> assign_group(double comp, double sim) {
  const bool abstractive = sim < kSimBoundary;
  if (comp >= 0.0 && comp < kShortLongBoundary) {
    return abstractive ? GroupKind::short_abstractive : GroupKind::short_extractive;
  }
  if (comp >= kShortLongBoundary && comp < kSummaryCompCap) {
    return abstractive ? GroupKind::long_abstractive : GroupKind::long_extractive;
  }
  if (comp >= kSummaryCompCap && comp < kParaphraseCompCap && sim <= kSimBoundary) return GroupKind::paraphrase;
  return std::nullopt;
}

enum class Stage { d0, d1 };

inline std::string_view to_string(Stage s) { return s == Stage::d0 ? "d0" : "d1"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "d0") return Stage::d0;
  if (s == "d1") return Stage::d1;
  throw InputError("unknown stage '" + std::string(s) + "'");
}

struct RecordScores {
  std::optional<double> entail_xy;
  std::optional<double> entail_yx;
  double rouge_l = 0.0;
  double density = 0.0;
  double density_norm = 0.0;
};

/// One line of a D_0 / D_1 JSONL corpus. Fields the reader does not know
/// are kept in `extra` and written back after the known ones.
struct DatasetRecord {
  std::string pair_id;
  std::string context;
  std::string x;
  std::string y;
  std::optional<GroupKind> group;
  double comp = 0.0;
  double sim = 0.0;
  RecordScores scores;
  Stage stage = Stage::d0;
  std::string domain;
  std::string provenance;  // written after the fixed fields when set
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

/// Builds a record for a filtered pair, grouping it by its measured
/// (comp, sim). Returns nullopt for pairs outside every group.
inline std::optional<DatasetRecord> quantize_pair(const CandidatePair& pair, std::string context, Stage stage) {
  const auto cs = comp_sim(*pair.x, *pair.y);
  auto group = assign_group(cs.comp, cs.sim);
  if (!group) return std::nullopt;
  DatasetRecord r;
  r.pair_id = pair.pair_id;
  r.context = std::move(context);
  r.x = pair.x->source_text;
  r.y = pair.y->source_text;
  r.group = group;
  r.comp = cs.comp;
  r.sim = cs.sim;
  r.scores.entail_xy = pair.scores.entail_xy;
  r.scores.entail_yx = pair.scores.entail_yx;
  r.scores.rouge_l = cs.rouge_l;
  r.scores.density = cs.density;
  r.scores.density_norm = cs.density_norm;
  r.stage = stage;
  r.domain = std::string(to_string(pair.domain));
  r.provenance = std::string(to_string(pair.provenance));
  return r;
}

struct TrainingExample {
  std::string input;
  std::string target;
};

inline TrainingExample format_training_record(const DatasetRecord& record) {
  if (!record.group) throw InputError("format_training_record: record " + record.pair_id + " has no group");
  return {std::string(control_code(*record.group)) + " " + record.x, record.y};
}

/// Inverse of the input formatting: the group and the original x.
inline std::pair<GroupKind, std::string> parse_training_input(std::string_view input) {
  for (auto g : kAllGroups) {
    const auto code = control_code(g);
    if (input.size() > code.size() && input.substr(0, code.size()) == code && input[code.size()] == ' ') {
      return {g, std::string(input.substr(code.size() + 1))};
    }
  }
  throw InputError("training input does not start with a known control code");
}

/// {input, target, group, stage, domain} in that order.
inline nlohmann::ordered_json training_json(const DatasetRecord& record) {
  const auto ex = format_training_record(record);
  nlohmann::ordered_json j;
  j["input"] = ex.input;
  j["target"] = ex.target;
  j["group"] = to_string(*record.group);
  j["stage"] = to_string(record.stage);
  j["domain"] = record.domain;
  return j;
}

}  // namespace distill
